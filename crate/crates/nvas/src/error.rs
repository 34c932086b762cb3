use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] nvas_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error("unknown clip id `{0}`")]
    UnknownClip(String),
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
