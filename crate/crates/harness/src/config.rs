//! Experiment configuration: JSON file, command-line overrides, validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tangent_core::optim::{LmConfig, LmState};
use tangent_core::pde::{make_spec, PdeKind, ResidualSpec};
use tangent_core::Error as CoreError;

/// Invalid configuration, located by a dotted field path.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn err<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { path: path.into(), message: message.into() })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Train,
    NtkInit,
    NtkDrift,
    HessianNorm,
    HessianSparsity,
    ProjectorSpectrum,
    LimitCov,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::NtkInit => "ntk-init",
            ExperimentKind::NtkDrift => "ntk-drift",
            ExperimentKind::HessianNorm => "hessian-norm",
            ExperimentKind::HessianSparsity => "hessian-sparsity",
            ExperimentKind::ProjectorSpectrum => "projector-spectrum",
            ExperimentKind::LimitCov => "limit-cov",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub pde: PdeConfig,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub study: StudyConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Train,
            seed: 0,
            pde: PdeConfig::default(),
            network: NetworkConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            study: StudyConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    pub name: String,
    pub parameters: BTreeMap<String, f64>,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self { name: "burgers".into(), parameters: BTreeMap::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Xavier,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    Standard,
    Ntk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RffConfig {
    pub features: usize,
    pub sigma: f64,
}

impl Default for RffConfig {
    fn default() -> Self {
        Self { features: 64, sigma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden layer widths; input and output widths follow from the PDE.
    pub hidden: Vec<usize>,
    pub init: InitKind,
    pub scaling: ScalingKind,
    pub rff: Option<RffConfig>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![20; 5], init: InitKind::Xavier, scaling: ScalingKind::Standard, rff: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    Adam,
    Lbfgs,
    Lm,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Lbfgs => "lbfgs",
            OptimizerKind::Lm => "lm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSettings {
    pub lambda0: f64,
    pub lambda_max: f64,
    pub tol: f64,
    pub alpha: f64,
    pub geodesic: bool,
}

impl Default for LmSettings {
    fn default() -> Self {
        let d = LmConfig::default();
        Self { lambda0: d.lambda0, lambda_max: d.lambda_max, tol: d.tol, alpha: d.alpha, geodesic: d.geodesic }
    }
}

impl LmSettings {
    pub fn to_core(&self) -> LmConfig {
        LmConfig {
            lambda0: self.lambda0,
            lambda_max: self.lambda_max,
            tol: self.tol,
            alpha: self.alpha,
            geodesic: self.geodesic,
            ..LmConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// PDE parameter raised stage by stage.
    pub parameter: String,
    /// Strictly ascending stage values; the last one is the target problem.
    pub values: Vec<f64>,
    /// Iteration cap per stage; a stage also ends once `optimizer.target` is met.
    pub stage_iterations: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { parameter: "beta".into(), values: Vec::new(), stage_iterations: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub iterations: usize,
    pub learning_rate: f64,
    pub lbfgs_memory: usize,
    pub lm: LmSettings,
    /// Evaluate relative L2 every this many iterations (0 = only at the end).
    pub eval_every: usize,
    /// Stop once relative L2 is at or below this value.
    pub target: Option<f64>,
    pub time_limit_s: Option<f64>,
    pub curriculum: Option<CurriculumConfig>,
    /// Use the pointwise relative error instead of the norm ratio.
    pub pointwise_error: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Lm,
            iterations: 1000,
            learning_rate: 1e-3,
            lbfgs_memory: 10,
            lm: LmSettings::default(),
            eval_every: 10,
            target: None,
            time_limit_s: None,
            curriculum: None,
            pointwise_error: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Lhs,
    Grid,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Defaults depend on the PDE.
    pub n_residual: Option<usize>,
    pub n_boundary: Option<usize>,
    pub strategy: StrategyKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_residual: None, n_boundary: None, strategy: StrategyKind::Lhs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Hidden widths of the single-hidden-layer sweep, ascending.
    pub widths: Vec<usize>,
    /// Seeds per width.
    pub seeds: usize,
    /// Gradient-descent steps of the drift study.
    pub steps: usize,
    pub eta: f64,
    /// Drift is recorded every this many steps.
    pub record_every: usize,
    /// Evaluation point of Hessian studies; mid-domain when absent.
    pub point: Option<Vec<f64>>,
    pub power_tol: f64,
    pub power_max_iter: usize,
    pub sparsity_width: usize,
    pub sparsity_threshold: f64,
    pub rank_tolerance: f64,
    pub quadrature_order: usize,
    /// Point pairs of the limit-covariance study.
    pub pairs: Vec<[f64; 2]>,
    pub covariance_width: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            widths: (4..=13).map(|k| 1usize << k).collect(),
            seeds: 10,
            steps: 200,
            eta: 1e-3,
            record_every: 20,
            point: None,
            power_tol: 1e-6,
            power_max_iter: 500,
            sparsity_width: 32,
            sparsity_threshold: 1e-12,
            rank_tolerance: 1e-10,
            quadrature_order: 64,
            pairs: vec![[0.2, 0.2], [0.5, 0.5], [0.8, 0.8], [0.2, 0.7], [0.4, 0.9]],
            covariance_width: 1 << 13,
        }
    }
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub pde: Option<String>,
    pub beta: Option<f64>,
    pub nu: Option<f64>,
    pub c: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub target: Option<f64>,
    pub time_limit_s: Option<f64>,
    pub eval_every: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub init: Option<InitKind>,
    pub scaling: Option<ScalingKind>,
    pub rff_features: Option<usize>,
    pub rff_sigma: Option<f64>,
    pub n_residual: Option<usize>,
    pub n_boundary: Option<usize>,
    pub strategy: Option<StrategyKind>,
    pub widths: Option<Vec<usize>>,
    pub seeds: Option<usize>,
    pub steps: Option<usize>,
    pub no_geodesic: bool,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses JSON; an empty or blank document yields the defaults.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError { path: if path == "." { "<root>".into() } else { path }, message: e.into_inner().to_string() }
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { path: "<file>".into(), message: format!("{}: {e}", path.display()) })?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.experiment, o.experiment);
        set!(self.seed, o.seed);
        if let Some(name) = &o.pde {
            if *name != self.pde.name {
                self.pde.parameters.clear();
            }
            self.pde.name = name.clone();
        }
        for (key, v) in [("beta", o.beta), ("nu", o.nu), ("c", o.c)] {
            if let Some(v) = v {
                self.pde.parameters.insert(key.into(), v);
            }
        }
        set!(self.optimizer.kind, o.optimizer);
        set!(self.optimizer.iterations, o.iters);
        set!(self.optimizer.learning_rate, o.lr);
        if o.target.is_some() {
            self.optimizer.target = o.target;
        }
        if o.time_limit_s.is_some() {
            self.optimizer.time_limit_s = o.time_limit_s;
        }
        set!(self.optimizer.eval_every, o.eval_every);
        if o.no_geodesic {
            self.optimizer.lm.geodesic = false;
        }
        set!(self.network.hidden, o.hidden);
        set!(self.network.init, o.init);
        set!(self.network.scaling, o.scaling);
        if o.rff_features.is_some() || o.rff_sigma.is_some() {
            let rff = self.network.rff.get_or_insert_with(RffConfig::default);
            set!(rff.features, o.rff_features);
            set!(rff.sigma, o.rff_sigma);
        }
        if o.n_residual.is_some() {
            self.data.n_residual = o.n_residual;
        }
        if o.n_boundary.is_some() {
            self.data.n_boundary = o.n_boundary;
        }
        set!(self.data.strategy, o.strategy);
        set!(self.study.widths, o.widths);
        set!(self.study.seeds, o.seeds);
        set!(self.study.steps, o.steps);
        set!(self.output, o.output);
    }

    /// Builds the residual spec, reporting problems under `pde.*`.
    pub fn spec(&self) -> Result<ResidualSpec, ConfigError> {
        spec_for(&self.pde.name, &self.pde.parameters)
    }

    /// Collocation sizes with PDE defaults filled in.
    pub fn sizes(&self) -> Result<(usize, usize), ConfigError> {
        let kind = PdeKind::from_name(&self.pde.name).or_else(|_| err("pde.name", format!("unknown PDE `{}`", self.pde.name)))?;
        let (r, b) = kind.default_sizes();
        Ok((self.data.n_residual.unwrap_or(r), self.data.n_boundary.unwrap_or(b)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.spec()?;
        let positive = |path: &str, v: f64| if v.is_finite() && v > 0.0 { Ok(()) } else { err(path, format!("must be positive and finite (got {v})")) };

        let net = &self.network;
        if net.hidden.is_empty() {
            return err("network.hidden", "needs at least one hidden layer");
        }
        if let Some(i) = net.hidden.iter().position(|&w| w == 0) {
            return err(format!("network.hidden[{i}]"), "width must be positive");
        }
        if let Some(rff) = &net.rff {
            if rff.features == 0 {
                return err("network.rff.features", "must be positive");
            }
            positive("network.rff.sigma", rff.sigma)?;
        }

        let opt = &self.optimizer;
        if opt.iterations == 0 {
            return err("optimizer.iterations", "must be positive");
        }
        positive("optimizer.learning_rate", opt.learning_rate)?;
        if opt.lbfgs_memory == 0 {
            return err("optimizer.lbfgs_memory", "must be positive");
        }
        if let Some(t) = opt.target {
            positive("optimizer.target", t)?;
        }
        if let Some(t) = opt.time_limit_s {
            positive("optimizer.time_limit_s", t)?;
        }
        if let Err(e) = LmState::new(&opt.lm.to_core()) {
            let field = match &e {
                CoreError::InvalidParameter { name, .. } => name.clone(),
                _ => "lambda0".into(),
            };
            return err(format!("optimizer.lm.{field}"), e.to_string());
        }
        if let Some(c) = &opt.curriculum {
            if !spec.params.contains_key(&c.parameter) {
                return err("optimizer.curriculum.parameter", format!("{} has no parameter `{}`", spec.name(), c.parameter));
            }
            if c.values.is_empty() {
                return err("optimizer.curriculum.values", "needs at least one stage");
            }
            for (i, &v) in c.values.iter().enumerate() {
                positive(&format!("optimizer.curriculum.values[{i}]"), v)?;
            }
            if c.values.windows(2).any(|w| w[1] <= w[0]) {
                return err("optimizer.curriculum.values", "must be strictly ascending");
            }
            if c.stage_iterations == 0 {
                return err("optimizer.curriculum.stage_iterations", "must be positive");
            }
        }

        let (n_r, n_b) = self.sizes()?;
        if n_r == 0 {
            return err("data.n_residual", "must be positive");
        }
        if n_b == 0 {
            return err("data.n_boundary", "must be positive");
        }

        let st = &self.study;
        if st.widths.is_empty() {
            return err("study.widths", "needs at least one width");
        }
        if st.widths.contains(&0) {
            return err("study.widths", "widths must be positive");
        }
        if st.widths.windows(2).any(|w| w[1] <= w[0]) {
            return err("study.widths", "must be strictly ascending");
        }
        if st.seeds == 0 {
            return err("study.seeds", "must be positive");
        }
        positive("study.eta", st.eta)?;
        if st.record_every == 0 {
            return err("study.record_every", "must be positive");
        }
        if let Some(p) = &st.point {
            if p.len() != spec.dim || !spec.contains(p) {
                return err("study.point", format!("must be a point of the {} domain", spec.name()));
            }
        }
        positive("study.power_tol", st.power_tol)?;
        if st.power_max_iter == 0 {
            return err("study.power_max_iter", "must be positive");
        }
        if st.sparsity_width == 0 {
            return err("study.sparsity_width", "must be positive");
        }
        if !(st.sparsity_threshold >= 0.0) {
            return err("study.sparsity_threshold", "must be non-negative");
        }
        if !(st.rank_tolerance > 0.0 && st.rank_tolerance < 1.0) {
            return err("study.rank_tolerance", "must lie in (0, 1)");
        }
        if st.quadrature_order < 8 {
            return err("study.quadrature_order", "must be at least 8");
        }
        if st.covariance_width == 0 {
            return err("study.covariance_width", "must be positive");
        }
        if self.experiment == ExperimentKind::LimitCov && spec.dim != 1 {
            return err("pde.name", "the limit-covariance study needs a one-dimensional PDE");
        }
        Ok(())
    }

    /// Evaluation point of Hessian studies.
    pub fn study_point(&self, spec: &ResidualSpec) -> Vec<f64> {
        self.study.point.clone().unwrap_or_else(|| spec.domain.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect())
    }
}

pub fn spec_for(name: &str, parameters: &BTreeMap<String, f64>) -> Result<ResidualSpec, ConfigError> {
    let overrides: Vec<(&str, f64)> = parameters.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    make_spec(name, &overrides).or_else(|e| match e {
        CoreError::UnknownPde(n) => err("pde.name", format!("unknown PDE `{n}`")),
        CoreError::UnknownParameter { pde, name } => err(format!("pde.parameters.{name}"), format!("{pde} has no such parameter")),
        CoreError::InvalidParameter { name, value, reason } => err(format!("pde.parameters.{name}"), format!("{reason} (got {value})")),
        other => err("pde", other.to_string()),
    })
}
