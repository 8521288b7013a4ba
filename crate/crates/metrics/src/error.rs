use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("field of {len} values is not {h}x{w}")]
    BadDims { len: usize, h: usize, w: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub(crate) fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

pub(crate) fn dims(field: &[f32], h: usize, w: usize) -> Result<()> {
    if field.len() != h * w {
        return Err(MetricsError::BadDims { len: field.len(), h, w });
    }
    Ok(())
}
