use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    /// Config missing, malformed, or violating an invariant. Nothing has
    /// been written.
    Config(String),
    /// A computation failed on valid input.
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }

    pub fn to_json(&self, subcommand: &str) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "subcommand": subcommand,
                "message": self.message(),
            }
        })
    }
}

impl From<torsionlab::Error> for CliError {
    fn from(e: torsionlab::Error) -> Self {
        // Validation has already passed, so anything the library rejects
        // from here on is a failure of the computation.
        match e {
            torsionlab::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
