use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed XML: {0}")]
    Xml(String),

    #[error("{path}: {msg}")]
    InvalidElement { path: String, msg: String },

    #[error("{path}: missing <limit> on {kind} joint")]
    MissingLimit { path: String, kind: String },

    #[error("{path}: unknown parent link `{link}`")]
    UnknownParent { path: String, link: String },

    #[error("kinematic cycle detected through link `{link}`")]
    Cycle { link: String },

    #[error("model is not a single rooted tree: {0}")]
    NotATree(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown frame `{0}`")]
    UnknownFrame(String),

    #[error("illegal contact transition: {0}")]
    IllegalTransition(String),

    #[error("invalid contact spec for `{frame}`: {msg}")]
    InvalidContact { frame: String, msg: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },

    #[error("json error: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}
