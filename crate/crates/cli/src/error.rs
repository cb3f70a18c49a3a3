use std::fmt;

/// An error and the process exit code it maps to: 1 for runtime and
/// backend failures, 2 for usage and validation errors.
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Library errors often repeat their source in their own message.
        let mut text = String::new();
        for cause in self.error.chain() {
            let msg = cause.to_string();
            if !text.contains(&msg) {
                if !text.is_empty() {
                    text += ": ";
                }
                text += &msg;
            }
        }
        f.write_str(&text)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait ResultExt<T> {
    fn usage(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn usage(self) -> CliResult<T> {
        self.map_err(CliError::usage)
    }

    fn runtime(self) -> CliResult<T> {
        self.map_err(CliError::runtime)
    }
}
