use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed weight archive: {0}")]
    Archive(String),

    #[error("incomplete archive: {0}")]
    MissingEntry(String),

    #[error("shape mismatch for {entry}: expected {expected:?}, found {actual:?}")]
    EntryShape {
        entry: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("unpadded input: {height}x{width} is not a multiple of 8 in both dimensions")]
    Unpadded { height: usize, width: usize },

    #[error("layer conv{layer}_1: {message}")]
    Layer { layer: u8, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid layer id {0}; expected 1..=4")]
    LayerId(u8),

    #[error("invalid scheme {0:?}")]
    Scheme(String),

    #[error("patch matching: {0}")]
    Matching(String),

    #[error("unknown semantic colors: {}", .0.iter().map(|c| format!("#{c:06x}")).collect::<Vec<_>>().join(", "))]
    UnknownColors(Vec<u32>),

    #[error("palette overflow: {0} colors exceeds the limit of 32")]
    PaletteOverflow(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("line search failed at iteration {iteration}, including the steepest-descent fallback")]
    LineSearch { iteration: usize },
}
