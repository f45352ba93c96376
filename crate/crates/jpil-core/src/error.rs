use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("PLY parse error at byte {offset}: {message}")]
    PlyParse { offset: u64, message: String },

    #[error("OBJ parse error at line {line}: {message}")]
    ObjParse { line: usize, message: String },

    #[error("PNG error: {0}")]
    Png(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("empty mesh")]
    EmptyMesh,

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("degenerate direction vector")]
    DegenerateDirection,

    #[error("neighborhood too small: {got} points, need at least {need}")]
    TooFewPoints { got: usize, need: usize },

    #[error("descriptor length mismatch: {left} vs {right} bits")]
    DescriptorLengthMismatch { left: usize, right: usize },

    #[error("degenerate point configuration: {0}")]
    DegenerateGeometry(String),

    #[error("pixel ({x}, {y}) outside {w}x{h} image")]
    PixelOutOfRange { x: f64, y: f64, w: u32, h: u32 },

    #[error("no registration candidate found")]
    NoRegistration,

    #[error("camera pose estimation produced no estimate: {0}")]
    NoEstimate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("correspondence file error at line {line}: {message}")]
    CorrespondenceParse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
