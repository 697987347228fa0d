use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pixel value {value} at ({row}, {col}) exceeds {bit_depth}-bit range")]
    PixelOutOfRange {
        value: u32,
        row: usize,
        col: usize,
        bit_depth: u8,
    },

    #[error("shape mismatch: {expected} vs {actual} ({context})")]
    ShapeMismatch {
        expected: String,
        actual: String,
        context: String,
    },

    #[error("manifest error at {path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid phantom spec: {0}")]
    PhantomSpec(String),

    #[error("invalid noise schedule: {0}")]
    Schedule(String),

    #[error("timestep {t} outside [1, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("non-finite loss at step {step} (t values {t_values:?}, loss {loss})")]
    NonFiniteLoss {
        step: usize,
        t_values: Vec<usize>,
        loss: f64,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("segmentation training diverged at epoch {epoch}: loss {loss}")]
    SegDiverged { epoch: usize, loss: f64 },

    #[error("translation failed for volume {volume_id} at slice {slice}: {message}")]
    Translation {
        volume_id: String,
        slice: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown experiment axis: {0}")]
    UnknownAxis(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
