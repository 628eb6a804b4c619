use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("inner problem is underdetermined: no positively weighted client holds samples")]
    Underdetermined,
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("fair-proxy check failed to run: {0}")]
    Check(String),
    #[error("proxy generation failed: {msg} (best |DBC| = {best_dbc:.3e})")]
    Generation { msg: String, best_dbc: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("ranking failed on client {client}: {source}")]
    Ranking {
        client: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("scenario construction failed on client {client}: {source}")]
    Scenario {
        client: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("defense diverged at outer iteration {iter}")]
    DefenseDiverged {
        iter: usize,
        trace: Box<crate::defense::DefenseTrace>,
    },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
