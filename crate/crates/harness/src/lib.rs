//! Experiment harness: configuration, studies, canned figure reproductions
//! and the artifact directory they write into.

pub mod artifacts;
pub mod config;
pub mod reproduce;
pub mod studies;

use config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum KitError {
    #[error("config error at {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] tangent_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed MANIFEST: {0}")]
    Manifest(String),
    #[error("unknown figure `{0}`")]
    UnknownFigure(String),
}

pub type Result<T> = std::result::Result<T, KitError>;

/// Thread pool used to run independent study cells.
pub struct Exec {
    pool: rayon::ThreadPool,
}

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "TANGENT_KIT_THREADS";

impl Exec {
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool");
        Self { pool }
    }

    /// One thread when `serial`, else `TANGENT_KIT_THREADS` or the core count.
    pub fn from_env(serial: bool) -> Self {
        let n = if serial {
            1
        } else {
            std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        };
        Self::new(n)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Maps `f` over `items`, keeping input order in the output.
    pub fn map<T: Send, R: Send>(&self, items: Vec<T>, f: impl Fn(T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
        use rayon::prelude::*;
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }
}
