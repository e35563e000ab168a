//! Experiment runner behind the `e2fl` binary.

pub mod compare;
pub mod config;
pub mod run;

pub use config::ExperimentConfig;

/// Process exit status for a failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<e2fl_core::Error>() {
            if matches!(e, e2fl_core::Error::Divergence(_)) {
                return 3;
            }
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() || cause.is::<ConfigError>() {
            return 2;
        }
    }
    1
}

/// Wraps any error raised while loading or validating a config.
#[derive(Debug)]
pub struct ConfigError(pub anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}
