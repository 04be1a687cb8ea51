use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("low-rank assumption violated: rank {rank} equals antenna count; use a truncated basis")]
    FullRankSum { rank: usize },
    #[error("problem too large for dense diagnostics: {0}")]
    TooLarge(String),
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
