use std::fmt;

pub const EXIT_IO: u8 = 1;
pub const EXIT_WEIGHTS: u8 = 2;
pub const EXIT_FLAGS: u8 = 3;

/// A failed command, classified by exit status.
#[derive(Debug)]
pub enum Failure {
    Io(String),
    Weights(String),
    Flags(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => EXIT_IO,
            Failure::Weights(_) => EXIT_WEIGHTS,
            Failure::Flags(_) => EXIT_FLAGS,
        }
    }

    pub fn flags(msg: impl Into<String>) -> Self {
        Failure::Flags(msg.into())
    }

    /// Prefixes the message with what was being done.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            Failure::Io(m) => Failure::Io(format!("{what}: {m}")),
            Failure::Weights(m) => Failure::Weights(format!("{what}: {m}")),
            Failure::Flags(m) => Failure::Flags(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) | Failure::Weights(m) | Failure::Flags(m) => f.write_str(m),
        }
    }
}

impl From<nnst::Error> for Failure {
    fn from(e: nnst::Error) -> Self {
        use nnst::Error;
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Image(_) => Failure::Io(msg),
            Error::Weights(_) | Error::Archive(_) => Failure::Weights(msg),
            Error::Shape(_) | Error::InvalidArgument(_) => Failure::Flags(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}
