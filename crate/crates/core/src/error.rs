use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration data (catalogs, tasks, run configs).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called out of order, e.g. stepping a finished episode.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("replay memory not ready: {size} of {required} transitions")]
    NotReady { size: usize, required: usize },

    #[error("training error{}: {message}", episode.map(|e| format!(" at episode {e}")).unwrap_or_default())]
    Training {
        episode: Option<usize>,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn training(msg: impl Into<String>) -> Self {
        Error::Training {
            episode: None,
            message: msg.into(),
        }
    }

    /// Attaches an episode index to a training error; other variants pass through.
    pub fn at_episode(self, episode: usize) -> Self {
        match self {
            Error::Training { message, .. } => Error::Training {
                episode: Some(episode),
                message,
            },
            other => Error::Training {
                episode: Some(episode),
                message: other.to_string(),
            },
        }
    }
}
