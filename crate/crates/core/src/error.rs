use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("could not sample a feasible episode after {0} attempts")]
    InfeasibleEpisode(usize),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("record format version {found} does not match this build ({expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("malformed record: {0}")]
    Record(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
