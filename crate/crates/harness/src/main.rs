use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tangent_core::pde::PdeKind;
use tangent_kit::artifacts::ArtifactDir;
use tangent_kit::config::{ExperimentConfig, ExperimentKind, InitKind, OptimizerKind, Overrides, ScalingKind, StrategyKind};
use tangent_kit::reproduce::{self, RunOutput};
use tangent_kit::Exec;

#[derive(Parser)]
#[command(name = "tangent-kit", version, about = "Train PINNs and measure their tangent kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on one PDE.
    Train(RunArgs),
    /// Spectral norm of the initial kernel over widths and seeds.
    NtkInit(RunArgs),
    /// Kernel drift along gradient descent.
    NtkDrift(RunArgs),
    /// Spectral norm of the residual Hessian over widths and seeds.
    HessianNorm(RunArgs),
    /// Nonzero pattern of the residual Hessian.
    HessianSparsity(RunArgs),
    /// Kernel and Gauss-Newton projector spectra at initialization.
    ProjectorSpectrum(RunArgs),
    /// Wide-network jet kernel against its infinite-width limit.
    LimitCov(RunArgs),
    /// Run the canned desk-scale configuration behind one figure.
    Reproduce {
        /// fig1a, fig1b, fig2a, fig2b, fig3a, fig3b or fig4a.
        figure: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run on one thread so reruns are bit-identical.
        #[arg(long)]
        serial: bool,
    },
    /// List the available PDEs with their default collocation sizes.
    ListPdes,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run on one thread so reruns are bit-identical.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pde: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Stop once the relative L2 error reaches this value.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Hidden widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    init: Option<InitKind>,
    #[arg(long, value_enum)]
    scaling: Option<ScalingKind>,
    #[arg(long)]
    rff_features: Option<usize>,
    #[arg(long)]
    rff_sigma: Option<f64>,
    #[arg(long)]
    n_residual: Option<usize>,
    #[arg(long)]
    n_boundary: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyKind>,
    /// Sweep widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    no_geodesic: bool,
}

impl RunArgs {
    fn overrides(&self, experiment: ExperimentKind) -> Overrides {
        Overrides {
            experiment: Some(experiment),
            seed: self.seed,
            pde: self.pde.clone(),
            beta: self.beta,
            nu: self.nu,
            c: self.c,
            optimizer: self.optimizer,
            iters: self.iters,
            lr: self.lr,
            target: self.target,
            time_limit_s: self.time_limit,
            eval_every: self.eval_every,
            hidden: self.hidden.clone(),
            init: self.init,
            scaling: self.scaling,
            rff_features: self.rff_features,
            rff_sigma: self.rff_sigma,
            n_residual: self.n_residual,
            n_boundary: self.n_boundary,
            strategy: self.strategy,
            widths: self.widths.clone(),
            seeds: self.seeds,
            steps: self.steps,
            no_geodesic: self.no_geodesic,
            output: self.out.clone(),
        }
    }
}

fn run_single(kind: ExperimentKind, args: RunArgs) -> tangent_kit::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&args.overrides(kind));
    cfg.validate()?;
    let exec = Exec::from_env(args.serial);
    let mut out = ArtifactDir::create(&cfg.output)?;
    let r = reproduce::run(&cfg, &exec, &mut out, "")?;
    let entries = out.finish()?;
    if let RunOutput::Train(s) = &r {
        println!(
            "{} on {}: {} iterations, relative L2 {:.3e}, {:.1} ms per iteration",
            s.optimizer, s.pde, s.iterations, s.final_rel_l2, s.ms_per_iteration
        );
    }
    println!("wrote {} files to {}", entries.len(), cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => run_single(ExperimentKind::Train, a),
        Command::NtkInit(a) => run_single(ExperimentKind::NtkInit, a),
        Command::NtkDrift(a) => run_single(ExperimentKind::NtkDrift, a),
        Command::HessianNorm(a) => run_single(ExperimentKind::HessianNorm, a),
        Command::HessianSparsity(a) => run_single(ExperimentKind::HessianSparsity, a),
        Command::ProjectorSpectrum(a) => run_single(ExperimentKind::ProjectorSpectrum, a),
        Command::LimitCov(a) => run_single(ExperimentKind::LimitCov, a),
        Command::Reproduce { figure, out, seed, serial } => {
            let exec = Exec::from_env(serial);
            reproduce::reproduce(&figure, &out, seed, &exec).map(|_| {
                let crit: Vec<String> = reproduce::feeds(&figure).iter().map(|c| c.to_string()).collect();
                println!("{figure} written to {}; feeds acceptance criterion {}", out.display(), crit.join(", "));
            })
        }
        Command::ListPdes => {
            for k in PdeKind::ALL {
                let (r, b) = k.default_sizes();
                println!("{:<22} residual points {r:>6}, boundary points {b:>5}", k.name());
            }
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
