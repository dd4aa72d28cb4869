use crate::geometry::CameraPose;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(thiserror::Error, Debug, Clone)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point maps to infinity (w = {w:e})")]
    PointAtInfinity { w: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("time {t} outside timeline range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {msg}")]
    Solver {
        msg: String,
        last_pose: Box<CameraPose>,
    },
    #[error("stream error: {0}")]
    Stream(String),
    #[error("frame {index}: {source}")]
    Frame {
        index: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_frame(self, index: u64) -> Self {
        match self {
            e @ Error::Frame { .. } => e,
            e => Error::Frame {
                index,
                source: Box::new(e),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
