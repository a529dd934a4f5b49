use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular coupling: |zeta| vanishes at omega = {omega:e} rad/s")]
    SingularCoupling { omega: f64 },

    #[error("resonance denominator vanishes at omega = {omega:e} rad/s")]
    SingularResonance { omega: f64 },

    #[error("no root of the round-trip phase condition in [{lo:e}, {hi:e}] rad/s")]
    NoRoot { lo: f64, hi: f64 },

    #[error("Fock truncation at cutoff {cutoff}: top-shell population {population:e} exceeds {limit:e}")]
    Truncation {
        cutoff: usize,
        population: f64,
        limit: f64,
    },

    #[error("pair probability {target} is unreachable (reached {reached} at cutoff {cutoff})")]
    UnreachablePairProbability {
        target: f64,
        reached: f64,
        cutoff: usize,
    },

    #[error("bin table has no entry for initial signal number {0}")]
    MissingInitialState(usize),

    #[error("no bin table for pump setting {setting} (tau_bin = {tau_bin:e} s)")]
    MissingTable { setting: f64, tau_bin: f64 },

    #[error("g2 is undefined for a distribution with zero mean photon number")]
    UndefinedG2,

    #[error("success probability {target} cannot be reached with single-mode probability {single}")]
    UnreachableTarget { target: f64, single: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Config(#[from] crate::cli::config::ConfigError),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
