/// Error type shared by every module in this crate.
///
/// The variants are coarse on purpose: callers (in particular the CLI) map
/// them to distinct exit codes, so the split follows failure *class* rather
/// than failure site.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value or combination of values is invalid.
    #[error("invalid config: {0}")]
    Config(String),

    /// Input data (images, feature sets, query streams) is unusable.
    #[error("data error: {0}")]
    Data(String),

    /// Tensor or lattice shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A lattice coordinate or parameter index is out of range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// NaN or infinity appeared where a finite number is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A serialized file is malformed (bad magic, version, or truncation).
    #[error("bad file format: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
