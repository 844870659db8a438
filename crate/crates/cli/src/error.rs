use serde::Serialize;

/// Every failure a command can report, each with a stable code and exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{}", parse_message(.row, .column, .message))]
    Parse {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },
    #[error("unsupported schema_version {found} (this build reads {supported})")]
    Version { found: u64, supported: u32 },
    #[error("model file holds a {found} model, the command expects {expected}")]
    KindMismatch { expected: String, found: String },
    #[error(transparent)]
    Core(#[from] lvm_core::Error),
}

fn parse_message(row: &Option<usize>, column: &Option<String>, message: &str) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!("row {r}, column {c:?}: {message}"),
        (Some(r), None) => format!("row {r}: {message}"),
        (None, Some(c)) => format!("column {c:?}: {message}"),
        (None, None) => message.to_string(),
    }
}

#[derive(Serialize)]
struct Report<'a> {
    code: &'a str,
    exit_code: i32,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    column: Option<&'a str>,
}

impl CliError {
    pub fn parse(message: impl Into<String>) -> Self {
        CliError::Parse {
            row: None,
            column: None,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Io { .. } => "IoError",
            CliError::Parse { .. } => "ParseError",
            CliError::Version { .. } => "VersionError",
            CliError::KindMismatch { .. } => "KindMismatchError",
            CliError::Core(e) => e.code(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use lvm_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Parse { .. } => 4,
            CliError::Version { .. } => 5,
            CliError::KindMismatch { .. } => 6,
            CliError::Core(e) => match e {
                E::Dimension(_) => 10,
                E::Singularity(_) => 11,
                E::Rank(_) => 12,
                E::Precondition(_) => 13,
                E::InvalidDistribution(_) => 14,
                E::EmptyComponent(_) => 15,
                E::NumericalDivergence { .. } => 16,
                E::Convergence { .. } => 17,
                E::Underflow { .. } => 18,
                E::Size { .. } => 19,
                E::Hessian { .. } => 20,
                E::Separation { .. } => 21,
            },
        }
    }

    /// One-line JSON report for standard error.
    pub fn to_json(&self) -> String {
        let (row, column) = match self {
            CliError::Parse { row, column, .. } => (*row, column.as_deref()),
            _ => (None, None),
        };
        let report = Report {
            code: self.code(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            row,
            column,
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_exit_statuses_are_distinct() {
        let errors = [
            CliError::Usage("x".into()),
            CliError::io(std::path::Path::new("p"), std::io::Error::other("x")),
            CliError::parse("x"),
            CliError::Version { found: 9, supported: 1 },
            CliError::KindMismatch {
                expected: "gmm".into(),
                found: "hmm".into(),
            },
            lvm_core::Error::Dimension("x".into()).into(),
            lvm_core::Error::Singularity("x".into()).into(),
            lvm_core::Error::Rank("x".into()).into(),
            lvm_core::Error::Precondition("x".into()).into(),
            lvm_core::Error::InvalidDistribution("x".into()).into(),
            lvm_core::Error::EmptyComponent(0).into(),
            lvm_core::Error::NumericalDivergence { iteration: 0 }.into(),
            lvm_core::Error::Convergence {
                iterations: 0,
                residual: 0.0,
            }
            .into(),
            lvm_core::Error::Underflow {
                step: 0,
                detail: "x".into(),
            }
            .into(),
            lvm_core::Error::Size { bits: 0, limit: 0 }.into(),
            lvm_core::Error::Hessian { iteration: 0 }.into(),
            lvm_core::Error::Separation { norm: 0.0 }.into(),
        ];
        let mut codes: Vec<_> = errors.iter().map(|e| e.code()).collect();
        let mut exits: Vec<_> = errors.iter().map(|e| e.exit_code()).collect();
        codes.sort();
        codes.dedup();
        exits.sort();
        exits.dedup();
        assert_eq!(codes.len(), errors.len());
        assert_eq!(exits.len(), errors.len());
        assert!(exits.iter().all(|c| *c >= 2));
    }

    #[test]
    fn parse_report_carries_location() {
        let e = CliError::Parse {
            row: Some(3),
            column: Some("x1".into()),
            message: "not a number".into(),
        };
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["code"], "ParseError");
        assert_eq!(v["row"], 3);
        assert_eq!(v["column"], "x1");
        assert!(!e.to_json().contains('\n'));
    }
}
