use std::fmt;
use std::process::ExitCode;

/// Error classes that map to distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent configuration: exit 2.
    Config(String),
    /// A check ran and failed: exit 3.
    Validation(String),
    /// Anything else (I/O and the like): exit 1.
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Other(_) => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

fn core_is_config(e: &blefp_core::Error) -> bool {
    use blefp_core::Error as E;
    matches!(
        e,
        E::InvalidConfig(_)
            | E::InvalidImpairment(_)
            | E::UnknownImpairmentField(_)
            | E::InvalidRanges(_)
            | E::InvalidScenario(_)
            | E::InvalidBt(_)
            | E::InvalidBit(_)
            | E::InvalidSampleRate(_)
            | E::ChannelOutOfRange(_)
            | E::WindowExceedsFrame { .. }
            | E::ManifestParse(_)
    )
}

fn nn_is_config(e: &blefp_nn::Error) -> bool {
    use blefp_nn::Error as E;
    matches!(e, E::InvalidConfig(_) | E::InsufficientLength { .. } | E::ConfigParse(_))
}

impl From<blefp_core::Error> for CliError {
    fn from(e: blefp_core::Error) -> Self {
        if core_is_config(&e) {
            CliError::Config(e.to_string())
        } else {
            CliError::Other(e.into())
        }
    }
}

impl From<blefp_nn::Error> for CliError {
    fn from(e: blefp_nn::Error) -> Self {
        if nn_is_config(&e) {
            CliError::Config(e.to_string())
        } else {
            CliError::Other(e.into())
        }
    }
}

impl From<blefp_eval::Error> for CliError {
    fn from(e: blefp_eval::Error) -> Self {
        use blefp_eval::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::Nn(n) => n.into(),
            E::UnknownScenario(_) | E::EmptySelection | E::CountExceedsFleet { .. } => {
                CliError::Config(e.to_string())
            }
            E::SeedOverlap(_) => CliError::Validation(e.to_string()),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.into())
    }
}
