use std::fmt;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Failure = 1,
    /// Unreadable input, bad flag value or unknown kind.
    BadInput = 2,
    Divergence = 3,
    DegenerateMask = 4,
    InvalidBoxes = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn new(code: ExitCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitCode::BadInput, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<expertseg::Error> for CliError {
    fn from(e: expertseg::Error) -> Self {
        use expertseg::Error as E;
        let code = match &e {
            E::Divergence(_) => ExitCode::Divergence,
            E::OverlappingBoxes | E::BoxOutOfBounds(_) => ExitCode::InvalidBoxes,
            E::MultiChannel(_) | E::Codec(_) | E::Format(_) | E::InvalidArgument(_) => ExitCode::BadInput,
            _ => ExitCode::Failure,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ExitCode::Failure, e.to_string())
    }
}
