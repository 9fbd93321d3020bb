use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violated an operation precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// A sampled configuration could not be realized; reseeding usually helps.
    #[error("generation failed: {0}")]
    Generation(String),
    /// The leaf does not fit in the camera frame at the requested pose.
    #[error("placement failed: {0}")]
    Placement(String),
    /// Mask and area label disagree beyond tolerance.
    #[error("annotation rejected: {0}")]
    Annotation(String),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn generation(msg: impl Into<String>) -> Self {
        Error::Generation(msg.into())
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Input(msg()))
    }
}
