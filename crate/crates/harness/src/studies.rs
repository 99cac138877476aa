//! One function per experiment kind. Each writes its CSVs under `prefix` in
//! the artifact directory and returns the rows it wrote.

use std::time::{Duration, Instant};

use log::info;
use serde::Serialize;
use tangent_core::jets::DerivMask;
use tangent_core::kernel::{
    assemble_jacobian, hessian_norm_sweep, kernel, kernel_drift, limit_covariance, output_weight_phi_kernel, projector_spectrum,
    residual_hessian, HessianMode, PowerSettings,
};
use tangent_core::net::{init_gaussian, Architecture, FourierEmbedding, Init, MlpParams, Scaling};
use tangent_core::optim::{
    adam_train, curriculum, gd_step, gd_train, lbfgs_train, lm_train, AdamConfig, Termination, TrainLog, TrainOptions,
};
use tangent_core::pde::{relative_l2, sample, CollocationSet, EvalGrid, PinnProblem, ResidualSpec, Strategy};
use tangent_core::rng::{derive_seed, stream};

use crate::artifacts::{f, row, ArtifactDir};
use crate::config::{spec_for, ExperimentConfig, InitKind, OptimizerKind, ScalingKind, StrategyKind};
use crate::{Exec, Result};

/// Collocation set shared by every cell of a study.
pub fn collocation(cfg: &ExperimentConfig, spec: &ResidualSpec) -> Result<CollocationSet> {
    let (n_r, n_b) = cfg.sizes()?;
    let strategy = match cfg.data.strategy {
        StrategyKind::Lhs => Strategy::LatinHypercube,
        StrategyKind::Grid => Strategy::UniformGrid,
        StrategyKind::Random => Strategy::UniformRandom,
    };
    Ok(sample(spec, n_r, n_b, strategy, &mut stream(cfg.seed, "collocation", 0, 0))?)
}

/// Network described by `cfg.network`, initialized from the `init` stream.
pub fn build_network(cfg: &ExperimentConfig, dim: usize) -> Result<MlpParams> {
    let mut widths = vec![dim];
    widths.extend(&cfg.network.hidden);
    widths.push(1);
    let mut rng = stream(cfg.seed, "init", 0, 0);
    let embedding = match &cfg.network.rff {
        Some(r) => Some(FourierEmbedding::sample(dim, r.features, r.sigma, &mut rng)?),
        None => None,
    };
    let scaling = match cfg.network.scaling {
        ScalingKind::Standard => Scaling::Standard,
        ScalingKind::Ntk => Scaling::Ntk,
    };
    let init = match cfg.network.init {
        InitKind::Xavier => Init::Xavier,
        InitKind::Gaussian => Init::Gaussian,
    };
    let arch = Architecture::new(&widths, scaling, embedding)?;
    Ok(MlpParams::init(arch, init, &mut rng))
}

fn cells(cfg: &ExperimentConfig, widths: &[usize]) -> Vec<(usize, usize)> {
    widths.iter().flat_map(|&m| (0..cfg.study.seeds).map(move |s| (m, s))).collect()
}

fn cell_seed(cfg: &ExperimentConfig, study: &str, m: usize, s: usize) -> u64 {
    derive_seed(cfg.seed, study, m as u64, s as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NtkInitRow {
    pub m: usize,
    pub seed: usize,
    pub k_norm: f64,
}

/// Spectral norm of the initial kernel of single-hidden-layer NTK networks.
pub fn ntk_init(cfg: &ExperimentConfig, exec: &Exec, out: &mut ArtifactDir, prefix: &str) -> Result<Vec<NtkInitRow>> {
    let spec = cfg.spec()?;
    let data = collocation(cfg, &spec)?;
    let rows = exec.map(cells(cfg, &cfg.study.widths), |(m, s)| {
        let p = init_gaussian(&[spec.dim, m, 1], cell_seed(cfg, "ntk-init", m, s))?;
        let k = kernel(&assemble_jacobian(&p, &spec, &data, true)?)?;
        Ok(NtkInitRow { m, seed: s, k_norm: k.spectral_norm })
    })?;
    let lines: Vec<String> = rows.iter().map(|r| row(&[r.m.to_string(), r.seed.to_string(), f(r.k_norm)])).collect();
    out.csv(&format!("{prefix}ntk_init.csv"), "ntk_init", "m,seed,k_norm", &lines)?;
    info!("ntk-init on {}: {} rows", spec.name(), rows.len());
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftRow {
    pub m: usize,
    pub seed: usize,
    pub step: usize,
    pub delta_k: f64,
}

/// Relative kernel change along plain gradient descent.
pub fn ntk_drift(cfg: &ExperimentConfig, exec: &Exec, out: &mut ArtifactDir, prefix: &str) -> Result<Vec<DriftRow>> {
    let spec = cfg.spec()?;
    let data = collocation(cfg, &spec)?;
    let st = &cfg.study;
    let per_cell = exec.map(cells(cfg, &st.widths), |(m, s)| {
        let p = init_gaussian(&[spec.dim, m, 1], cell_seed(cfg, "ntk-drift", m, s))?;
        let prob = PinnProblem::new(&p.arch, &spec, &data)?;
        let k0 = kernel(&assemble_jacobian(&p, &spec, &data, true)?)?.k;
        let mut theta = p.theta.clone();
        let mut rows = vec![DriftRow { m, seed: s, step: 0, delta_k: 0.0 }];
        for step in 1..=st.steps {
            let (_, g) = prob.gradient(&theta)?;
            gd_step(&mut theta, &g, st.eta)?;
            if step % st.record_every == 0 || step == st.steps {
                let pt = p.with_theta(theta.clone())?;
                let kt = kernel(&assemble_jacobian(&pt, &spec, &data, true)?)?.k;
                rows.push(DriftRow { m, seed: s, step, delta_k: kernel_drift(&kt, &k0)? });
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<DriftRow> = per_cell.into_iter().flatten().collect();
    let lines: Vec<String> =
        rows.iter().map(|r| row(&[r.m.to_string(), r.seed.to_string(), r.step.to_string(), f(r.delta_k)])).collect();
    out.csv(&format!("{prefix}ntk_drift.csv"), "ntk_drift", "m,seed,step,delta_k", &lines)?;
    info!("ntk-drift on {}: {} rows", spec.name(), rows.len());
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HessianRow {
    pub m: usize,
    pub seed: usize,
    pub h_norm: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn power(cfg: &ExperimentConfig) -> PowerSettings {
    PowerSettings { tol: cfg.study.power_tol, max_iter: cfg.study.power_max_iter, seed: 0 }
}

/// Spectral norm of the residual Hessian at the study point.
pub fn hessian_norm(cfg: &ExperimentConfig, exec: &Exec, out: &mut ArtifactDir, prefix: &str) -> Result<Vec<HessianRow>> {
    let spec = cfg.spec()?;
    let point = cfg.study_point(&spec);
    let rows = exec.map(cells(cfg, &cfg.study.widths), |(m, s)| {
        let seed = cell_seed(cfg, "hessian-norm", m, s);
        let r = hessian_norm_sweep(&spec, &[m], &[(s, seed)], &point, power(cfg))?.remove(0);
        Ok(HessianRow { m, seed: s, h_norm: r.h_norm, iterations: r.iterations, residual: r.residual })
    })?;
    let lines: Vec<String> = rows.iter().map(|r| row(&[r.m.to_string(), r.seed.to_string(), f(r.h_norm)])).collect();
    out.csv(&format!("{prefix}hessian_norm.csv"), "hessian_norm", "m,seed,h_norm", &lines)?;
    let diag: Vec<String> = rows
        .iter()
        .map(|r| row(&[r.m.to_string(), r.seed.to_string(), r.iterations.to_string(), f(r.residual)]))
        .collect();
    out.csv(&format!("{prefix}hessian_power.csv"), "hessian_power", "m,seed,iterations,residual", &diag)?;
    info!("hessian-norm on {}: {} rows", spec.name(), rows.len());
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityMap {
    pub m: usize,
    pub n_params: usize,
    /// `(row, col, |H_ij|)` above the threshold.
    pub entries: Vec<(usize, usize, f64)>,
    /// `(label, start, end)` parameter blocks.
    pub blocks: Vec<(String, usize, usize)>,
}

/// Nonzero pattern of the dense residual Hessian at one width.
pub fn hessian_sparsity(cfg: &ExperimentConfig, out: &mut ArtifactDir, prefix: &str) -> Result<SparsityMap> {
    let spec = cfg.spec()?;
    let point = cfg.study_point(&spec);
    let m = cfg.study.sparsity_width;
    let p = init_gaussian(&[spec.dim, m, 1], cell_seed(cfg, "hessian-sparsity", m, 0))?;
    let rep = residual_hessian(&p, &spec, &point, HessianMode::Dense, power(cfg))?;
    let entries = rep.sparsity(cfg.study.sparsity_threshold);
    let l = p.layers();
    let blocks = vec![
        ("W0".to_string(), l[0].weight_range().start, l[0].weight_range().end),
        ("b0".to_string(), l[0].bias_range().start, l[0].bias_range().end),
        ("W1".to_string(), l[1].weight_range().start, l[1].weight_range().end),
        ("b1".to_string(), l[1].bias_range().start, l[1].bias_range().end),
    ];
    let lines: Vec<String> = entries.iter().map(|&(r, c, v)| row(&[r.to_string(), c.to_string(), f(v)])).collect();
    out.csv(&format!("{prefix}hessian_sparsity.csv"), "hessian_sparsity", "row,col,abs_value", &lines)?;
    let bl: Vec<String> = blocks.iter().map(|(n, a, b)| row(&[n.clone(), a.to_string(), b.to_string()])).collect();
    out.csv(&format!("{prefix}hessian_blocks.csv"), "hessian_blocks", "block,start,end", &bl)?;
    info!("hessian-sparsity on {}: {} of {} entries above threshold", spec.name(), entries.len(), p.n_params().pow(2));
    Ok(SparsityMap { m, n_params: p.n_params(), entries, blocks })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Kernel eigenvalues divided by the largest, descending.
    pub kernel: Vec<f64>,
    /// Thresholded projector eigenvalues.
    pub projector: Vec<f64>,
    /// Eigenvalues of the explicitly formed projector.
    pub realized: Vec<f64>,
    pub rank: usize,
}

/// Kernel spectrum and Gauss-Newton projector spectrum at initialization.
pub fn projector_study(cfg: &ExperimentConfig, out: &mut ArtifactDir, prefix: &str) -> Result<SpectrumReport> {
    let spec = cfg.spec()?;
    let data = collocation(cfg, &spec)?;
    let p = build_network(cfg, spec.dim)?;
    let j = assemble_jacobian(&p, &spec, &data, true)?;
    let snap = kernel(&j)?;
    let top = snap.spectral_norm;
    let kernel_ev: Vec<f64> = snap.eigenvalues.iter().map(|e| e / top).collect();
    let proj = projector_spectrum(&j, cfg.study.rank_tolerance)?;
    let mut lines = Vec::new();
    for (label, vals) in [("kernel", &kernel_ev), ("projector", &proj.eigenvalues), ("projector_realized", &proj.realized)] {
        lines.extend(vals.iter().enumerate().map(|(i, v)| row(&[i.to_string(), f(*v), label.to_string()])));
    }
    out.csv(&format!("{prefix}spectrum.csv"), "spectrum", "index,eigenvalue,label", &lines)?;
    info!("projector-spectrum on {}: rank {} of {}", spec.name(), proj.rank, j.nrows());
    Ok(SpectrumReport { kernel: kernel_ev, projector: proj.eigenvalues, realized: proj.realized, rank: proj.rank })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovariancePair {
    pub x: f64,
    pub xp: f64,
    /// Relative Frobenius error of the seed-averaged empirical block.
    pub rel_error: f64,
}

/// Output-weight block of the jet kernel at a large width against the
/// infinite-width covariance.
pub fn limit_cov(cfg: &ExperimentConfig, exec: &Exec, out: &mut ArtifactDir, prefix: &str) -> Result<Vec<CovariancePair>> {
    let spec = cfg.spec()?;
    let mask = DerivMask::full(spec.dim);
    let comps = mask.components();
    let k = comps.len();
    let m = cfg.study.covariance_width;
    let seeds = cfg.study.seeds;
    let nets = exec.map((0..seeds).collect(), |s| Ok(init_gaussian(&[spec.dim, m, 1], cell_seed(cfg, "limit-cov", m, s))?))?;
    let mut lines = Vec::new();
    let mut pairs = Vec::new();
    for &[x, xp] in &cfg.study.pairs {
        let mut emp = vec![0.0; k * k];
        for p in &nets {
            let b = output_weight_phi_kernel(p, mask, &[x], &[xp])?;
            for i in 0..k {
                for j in 0..k {
                    emp[i * k + j] += b[(i, j)] / seeds as f64;
                }
            }
        }
        let lim = limit_covariance(mask, &[x], &[xp], cfg.study.quadrature_order)?;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..k {
            for j in 0..k {
                let (e, l) = (emp[i * k + j], lim[(i, j)]);
                num += (e - l) * (e - l);
                den += l * l;
                lines.push(row(&[f(x), f(xp), comps[i].label(), comps[j].label(), f(e), f(l)]));
            }
        }
        pairs.push(CovariancePair { x, xp, rel_error: (num / den).sqrt() });
    }
    out.csv(&format!("{prefix}limit_cov.csv"), "limit_cov", "x,xp,row,col,empirical,limit", &lines)?;
    let summary: Vec<String> = pairs.iter().map(|p| row(&[f(p.x), f(p.xp), f(p.rel_error)])).collect();
    out.csv(&format!("{prefix}limit_cov_error.csv"), "limit_cov_error", "x,xp,rel_error", &summary)?;
    info!("limit-cov at m = {m}: worst relative error {:.3e}", pairs.iter().map(|p| p.rel_error).fold(0.0, f64::max));
    Ok(pairs)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub pde: String,
    pub optimizer: String,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub final_loss: f64,
    pub final_rel_l2: f64,
    pub best_rel_l2: Option<f64>,
    pub wall_ms: f64,
    pub ms_per_iteration: f64,
    pub n_params: usize,
}

pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub log: TrainLog,
    pub params: MlpParams,
}

fn opts(cfg: &ExperimentConfig, max_iter: usize, target: Option<f64>, time_limit: Option<Duration>) -> TrainOptions {
    TrainOptions { max_iter, eval_every: cfg.optimizer.eval_every, target, time_limit, grad_tol: 0.0 }
}

/// Runs one optimizer on fixed data from `theta`.
fn optimize(
    cfg: &ExperimentConfig,
    prob: &PinnProblem<'_>,
    theta: Vec<f64>,
    o: TrainOptions,
    metric: &dyn Fn(&[f64]) -> tangent_core::Result<f64>,
) -> Result<(Vec<f64>, TrainLog)> {
    let oc = &cfg.optimizer;
    let mut theta = theta;
    let log = match oc.kind {
        OptimizerKind::Gd => gd_train(prob, &mut theta, oc.learning_rate, o, Some(metric))?,
        OptimizerKind::Adam => {
            let ac = AdamConfig { lr: oc.learning_rate, ..AdamConfig::default() };
            adam_train(prob, &mut theta, &ac, o, Some(metric))?
        }
        OptimizerKind::Lbfgs => lbfgs_train(prob, &mut theta, oc.lbfgs_memory, o, Some(metric))?,
        OptimizerKind::Lm => lm_train(prob, &mut theta, &oc.lm.to_core(), o, Some(metric))?.1,
    };
    Ok((theta, log))
}

/// Trains a network and writes `train.csv`, the parameter snapshot, the
/// collocation points and a JSON summary.
pub fn train(cfg: &ExperimentConfig, out: &mut ArtifactDir, prefix: &str) -> Result<TrainOutcome> {
    let spec = cfg.spec()?;
    let data = collocation(cfg, &spec)?;
    let p0 = build_network(cfg, spec.dim)?;
    let oc = &cfg.optimizer;
    let pointwise = oc.pointwise_error;
    let time_limit = oc.time_limit_s.map(Duration::from_secs_f64);
    let start = Instant::now();
    info!("train {} with {} ({} parameters, {} rows)", spec.name(), oc.kind.name(), p0.n_params(), data.n_rows());
    let (theta, log): (Vec<f64>, TrainLog) = match &oc.curriculum {
        None => {
            let grid = EvalGrid::standard(&spec)?;
            let metric = |th: &[f64]| relative_l2(&p0.arch, th, &grid, pointwise);
            let prob = PinnProblem::new(&p0.arch, &spec, &data)?;
            optimize(cfg, &prob, p0.theta.clone(), opts(cfg, oc.iterations, oc.target, time_limit), &metric)?
        }
        Some(cur) => {
            curriculum(&cur.values, p0.theta.clone(), |i, value, theta| {
                let mut params = cfg.pde.parameters.clone();
                params.insert(cur.parameter.clone(), value);
                let stage_spec = spec_for(&cfg.pde.name, &params).map_err(|e| tangent_core::Error::InvalidArgument(e.to_string()))?;
                let stage_data = stage_spec.retarget(&data)?;
                let grid = EvalGrid::standard(&stage_spec)?;
                let metric = |th: &[f64]| relative_l2(&p0.arch, th, &grid, pointwise);
                let prob = PinnProblem::new(&p0.arch, &stage_spec, &stage_data)?;
                info!("curriculum stage {i}: {} = {value}", cur.parameter);
                optimize(cfg, &prob, theta, opts(cfg, cur.stage_iterations, oc.target, None), &metric)
                    .map_err(|e| tangent_core::Error::InvalidArgument(e.to_string()))
            })?
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let params = p0.with_theta(theta)?;
    let grid = EvalGrid::standard(&spec)?;
    let final_rel_l2 = relative_l2(&params.arch, &params.theta, &grid, pointwise)?;
    let prob = PinnProblem::new(&params.arch, &spec, &data)?;
    let final_loss = prob.loss(&params.theta)?.total;
    let iterations = log.last().map(|r| r.iter).unwrap_or(0);

    out.csv_with(&format!("{prefix}train.csv"), "train", |w| Ok(log.write_csv(w)?))?;
    if !log.stages.is_empty() {
        out.csv_with(&format!("{prefix}stages.csv"), "stages", |w| Ok(log.write_stages_csv(w)?))?;
    }
    out.csv_with(&format!("{prefix}collocation_residual.csv"), "collocation", |w| Ok(data.write_residual_csv(w)?))?;
    out.csv_with(&format!("{prefix}collocation_boundary.csv"), "collocation", |w| Ok(data.write_boundary_csv(w)?))?;
    out.params(&format!("{prefix}params"), &params)?;
    let summary = TrainSummary {
        pde: spec.name().into(),
        optimizer: oc.kind.name().into(),
        iterations,
        termination: log.termination,
        final_loss,
        final_rel_l2,
        best_rel_l2: log.best_rel_l2(),
        wall_ms,
        ms_per_iteration: if iterations > 0 { wall_ms / iterations as f64 } else { 0.0 },
        n_params: params.n_params(),
    };
    out.json(&format!("{prefix}summary.json"), "summary", &summary)?;
    info!(
        "{} on {}: {} iterations, relative L2 {:.3e}, {:.1} ms per iteration",
        summary.optimizer, summary.pde, iterations, final_rel_l2, summary.ms_per_iteration
    );
    Ok(TrainOutcome { summary, log, params })
}
