//! Dispatch of a resolved config to its study, and the canned desk-scale
//! configurations behind `reproduce <fig>`.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;

use crate::artifacts::ArtifactDir;
use crate::config::{CurriculumConfig, ExperimentConfig, ExperimentKind, InitKind, OptimizerKind, RffConfig, ScalingKind};
use crate::studies::{self, CovariancePair, DriftRow, HessianRow, NtkInitRow, SparsityMap, SpectrumReport, TrainSummary};
use crate::{Exec, KitError, Result};

pub const FIGURES: [&str; 7] = ["fig1a", "fig1b", "fig2a", "fig2b", "fig3a", "fig3b", "fig4a"];

/// What a single run produced, for callers that want to inspect results
/// without re-reading the CSVs.
#[derive(Clone, Debug)]
pub enum RunOutput {
    NtkInit(Vec<NtkInitRow>),
    Drift(Vec<DriftRow>),
    HessianNorm(Vec<HessianRow>),
    Sparsity(SparsityMap),
    Spectrum(SpectrumReport),
    LimitCov(Vec<CovariancePair>),
    Train(TrainSummary),
}

/// Validates `cfg`, echoes it to `{prefix}config.json` and runs its study.
pub fn run(cfg: &ExperimentConfig, exec: &Exec, out: &mut ArtifactDir, prefix: &str) -> Result<RunOutput> {
    cfg.validate()?;
    out.json(&format!("{prefix}config.json"), "config", cfg)?;
    Ok(match cfg.experiment {
        ExperimentKind::Train => RunOutput::Train(studies::train(cfg, out, prefix)?.summary),
        ExperimentKind::NtkInit => RunOutput::NtkInit(studies::ntk_init(cfg, exec, out, prefix)?),
        ExperimentKind::NtkDrift => RunOutput::Drift(studies::ntk_drift(cfg, exec, out, prefix)?),
        ExperimentKind::HessianNorm => RunOutput::HessianNorm(studies::hessian_norm(cfg, exec, out, prefix)?),
        ExperimentKind::HessianSparsity => RunOutput::Sparsity(studies::hessian_sparsity(cfg, out, prefix)?),
        ExperimentKind::ProjectorSpectrum => RunOutput::Spectrum(studies::projector_study(cfg, out, prefix)?),
        ExperimentKind::LimitCov => RunOutput::LimitCov(studies::limit_cov(cfg, exec, out, prefix)?),
    })
}

/// One run inside a figure reproduction.
#[derive(Clone, Debug)]
pub struct Job {
    /// Subdirectory of the artifact root, `/`-separated.
    pub name: String,
    pub config: ExperimentConfig,
    /// Give this run the wall time the named earlier job took.
    pub equal_time_to: Option<String>,
}

fn job(name: &str, config: ExperimentConfig) -> Job {
    Job { name: name.into(), config, equal_time_to: None }
}

fn base(seed: u64, experiment: ExperimentKind, pde: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed, experiment, ..ExperimentConfig::default() };
    c.pde.name = pde.into();
    c
}

const TOYS: [&str; 2] = ["poisson_toy_linear", "burgers_toy_nonlinear"];

/// Adam iteration cap of the desk-scale baselines.
pub const ADAM_CAP: usize = 20_000;

/// Acceptance criteria whose checks read this figure's output.
pub fn feeds(fig: &str) -> &'static [u32] {
    match fig {
        "fig1a" => &[3],
        "fig1b" => &[4],
        "fig2a" => &[5],
        "fig2b" => &[6],
        "fig3a" => &[9],
        "fig3b" => &[10],
        "fig4a" => &[8],
        _ => &[],
    }
}

/// Canned desk-scale jobs for one figure.
pub fn canned(fig: &str, seed: u64) -> Result<Vec<Job>> {
    let mut jobs = Vec::new();
    match fig {
        "fig1a" => {
            for pde in TOYS {
                jobs.push(job(pde, base(seed, ExperimentKind::NtkInit, pde)));
            }
        }
        "fig1b" => {
            for pde in TOYS {
                let mut c = base(seed, ExperimentKind::NtkDrift, pde);
                c.study.widths = [4, 6, 8, 10, 12, 13].iter().map(|k| 1 << k).collect();
                jobs.push(job(pde, c));
            }
        }
        "fig2a" => {
            for pde in TOYS {
                let mut c = base(seed, ExperimentKind::HessianNorm, pde);
                c.study.widths = (4..=12).map(|k| 1 << k).collect();
                jobs.push(job(&format!("{pde}/norm"), c));
                jobs.push(job(&format!("{pde}/sparsity"), base(seed, ExperimentKind::HessianSparsity, pde)));
            }
        }
        "fig2b" => {
            let mut c = base(seed, ExperimentKind::ProjectorSpectrum, "burgers");
            c.network.hidden = vec![20, 20];
            c.network.init = InitKind::Gaussian;
            c.network.scaling = ScalingKind::Ntk;
            c.data.n_residual = Some(50);
            c.data.n_boundary = Some(20);
            jobs.push(job("burgers", c));
        }
        "fig3a" => {
            let lm = |rff: Option<RffConfig>| {
                let mut c = base(seed, ExperimentKind::Train, "poisson_highfreq");
                c.network.rff = rff;
                c.optimizer.lm.geodesic = false;
                c.optimizer.iterations = 1000;
                c.optimizer.eval_every = 10;
                c
            };
            jobs.push(job("lm", lm(None)));
            jobs.push(job("lm_rff", lm(Some(RffConfig::default()))));
            let mut adam = lm(None);
            adam.optimizer.kind = OptimizerKind::Adam;
            adam.optimizer.iterations = ADAM_CAP;
            adam.optimizer.eval_every = 100;
            jobs.push(job("adam", adam));
        }
        "fig3b" => {
            let mut direct = base(seed, ExperimentKind::Train, "convection");
            direct.pde.parameters = BTreeMap::from([("beta".to_string(), 30.0)]);
            direct.optimizer.iterations = 5000;
            direct.optimizer.eval_every = 50;
            direct.optimizer.target = Some(1e-2);
            let mut cur = direct.clone();
            cur.pde.parameters.insert("beta".into(), 50.0);
            cur.optimizer.curriculum = Some(CurriculumConfig {
                parameter: "beta".into(),
                values: vec![10.0, 20.0, 30.0, 40.0, 50.0],
                stage_iterations: 1000,
            });
            jobs.push(job("beta30", direct));
            jobs.push(job("curriculum_beta50", cur));
        }
        "fig4a" => {
            let mut lm = base(seed, ExperimentKind::Train, "burgers");
            lm.optimizer.iterations = 1000;
            lm.optimizer.eval_every = 10;
            jobs.push(job("lm", lm.clone()));
            for kind in [OptimizerKind::Adam, OptimizerKind::Lbfgs] {
                let mut c = lm.clone();
                c.optimizer.kind = kind;
                c.optimizer.iterations = ADAM_CAP;
                c.optimizer.eval_every = 25;
                jobs.push(Job { name: kind.name().into(), config: c, equal_time_to: Some("lm".into()) });
            }
        }
        other => return Err(KitError::UnknownFigure(other.into())),
    }
    Ok(jobs)
}

/// Runs `jobs` into `root`, one subdirectory each, and writes a single MANIFEST.
pub fn run_jobs(jobs: &[Job], root: &Path, exec: &Exec) -> Result<Vec<(String, RunOutput)>> {
    let mut out = ArtifactDir::create(root)?;
    let mut results: Vec<(String, RunOutput)> = Vec::new();
    for j in jobs {
        let mut cfg = j.config.clone();
        cfg.output = root.join(&j.name);
        if let Some(reference) = &j.equal_time_to {
            let wall = results.iter().find_map(|(n, r)| match r {
                RunOutput::Train(s) if n == reference => Some(s.wall_ms),
                _ => None,
            });
            let wall = wall.ok_or_else(|| KitError::Manifest(format!("job `{}` has no earlier training run `{reference}`", j.name)))?;
            cfg.optimizer.time_limit_s = Some(wall / 1e3);
        }
        info!("job {}: {} on {}", j.name, cfg.experiment.name(), cfg.pde.name);
        let r = run(&cfg, exec, &mut out, &format!("{}/", j.name))?;
        results.push((j.name.clone(), r));
    }
    out.finish()?;
    Ok(results)
}

/// Runs the canned jobs of `fig` into `root`.
pub fn reproduce(fig: &str, root: &Path, seed: u64, exec: &Exec) -> Result<Vec<(String, RunOutput)>> {
    let jobs = canned(fig, seed)?;
    run_jobs(&jobs, root, exec)
}
