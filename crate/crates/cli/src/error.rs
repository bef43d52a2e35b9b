use std::fmt;
use std::path::Path;

/// Error reported as one JSON line on stderr with a kind-specific exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" | "argument" | "config" => 2,
            "not_found" | "io" => 3,
            "parse" | "json" => 4,
            "shape" | "param" => 5,
            "non_finite" => 6,
            _ => 1,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<mkdcnet::Error> for CliError {
    fn from(e: mkdcnet::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

/// Fails with `not_found` naming the path when it does not exist.
pub fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::new("not_found", format!("{what} {} does not exist", path.display())))
    }
}

/// Attaches the path to an error from reading or writing it.
pub fn at<T>(path: &Path, r: mkdcnet::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::new(e.kind(), format!("{}: {e}", path.display())))
}
