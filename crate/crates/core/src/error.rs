use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimensions must be at least 1x1")]
    EmptyGrid,

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instance id {0} not present in label map")]
    UnknownInstance(u16),

    #[error("too many instances for a 16-bit label map: {0}")]
    LabelOverflow(usize),

    #[error("harmonic amplitudes sum to {0}, must be < 0.5")]
    AmplitudeSum(f64),

    #[error("crown placement failed: placed {placed} of {requested} crowns")]
    Placement { placed: usize, requested: usize },

    #[error("flow magnitude {magnitude} exceeds 1 + {tolerance}")]
    FlowMagnitude { magnitude: f32, tolerance: f32 },

    #[error("npy: bad magic string")]
    NpyMagic,

    #[error("npy: unsupported format version {0}.{1}")]
    NpyVersion(u8, u8),

    #[error("npy: unsupported dtype {0:?}")]
    NpyDtype(String),

    #[error("npy: fortran_order=True is not supported")]
    NpyFortranOrder,

    #[error("npy: malformed header: {0}")]
    NpyHeader(String),

    #[error("npy: payload holds {found} bytes, shape requires {expected}")]
    NpyPayload { expected: usize, found: usize },

    #[error("npy: expected {expected}, found {found}")]
    NpyLayout { expected: String, found: String },

    #[error("png: expected {expected}-bit samples, found {found}-bit")]
    PngBitDepth { expected: u8, found: u8 },

    #[error("png: expected single-channel grayscale, found {0}")]
    PngChannels(String),

    #[error("png: {0}")]
    PngDecode(String),

    #[error("manifest: checksum mismatch for {path}")]
    Checksum { path: PathBuf },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn id(&self) -> &'static str {
        match self {
            Error::EmptyGrid => "E_EMPTY_GRID",
            Error::ShapeMismatch { .. } => "E_SHAPE",
            Error::InvalidArgument(_) => "E_ARG",
            Error::UnknownInstance(_) => "E_UNKNOWN_ID",
            Error::LabelOverflow(_) => "E_LABEL_OVERFLOW",
            Error::AmplitudeSum(_) => "E_AMPLITUDE",
            Error::Placement { .. } => "E_PLACEMENT",
            Error::FlowMagnitude { .. } => "E_FLOW_MAGNITUDE",
            Error::NpyMagic => "E_NPY_MAGIC",
            Error::NpyVersion(..) => "E_NPY_VERSION",
            Error::NpyDtype(_) => "E_NPY_DTYPE",
            Error::NpyFortranOrder => "E_NPY_ORDER",
            Error::NpyHeader(_) => "E_NPY_HEADER",
            Error::NpyPayload { .. } => "E_NPY_PAYLOAD",
            Error::NpyLayout { .. } => "E_NPY_LAYOUT",
            Error::PngBitDepth { .. } => "E_PNG_DEPTH",
            Error::PngChannels(_) => "E_PNG_CHANNELS",
            Error::PngDecode(_) => "E_PNG_DECODE",
            Error::Checksum { .. } => "E_CHECKSUM",
            Error::Manifest(_) => "E_MANIFEST",
            Error::Invariant(_) => "E_INVARIANT",
            Error::Io { .. } => "E_IO",
        }
    }

    /// True for internal invariant violations as opposed to bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
