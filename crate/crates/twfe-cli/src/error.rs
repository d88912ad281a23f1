//! CLI-level errors, their exit codes, and the machine-readable error JSON
//! printed on failure.

use std::fmt;

/// Everything that can go wrong between argv and the output directory.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files, constraint strings, or output paths.
    Config(String),
    /// A unit is missing some periods; the panel cannot be balanced.
    UnbalancedPanel { report: Vec<String> },
    /// The same (unit, period) cell appears twice.
    DuplicateCell { line: usize, unit: String, time: String },
    /// A numeric field failed to parse.
    NonNumericField { line: usize, column: String, value: String },
    /// Filesystem trouble reading inputs or writing outputs.
    Io { path: String, source: std::io::Error },
    /// Any error surfaced by the estimation library.
    Lib(twfe::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::UnbalancedPanel { report } => {
                write!(f, "unbalanced panel: {}", report.join("; "))
            }
            CliError::DuplicateCell { line, unit, time } => write!(
                f,
                "duplicate cell for unit {unit}, period {time} at data line {line}"
            ),
            CliError::NonNumericField { line, column, value } => write!(
                f,
                "non-numeric value {value:?} in column {column} at data line {line}"
            ),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<twfe::Error> for CliError {
    fn from(e: twfe::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// Short snake_case tag for the error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::UnbalancedPanel { .. } => "unbalanced_panel",
            CliError::DuplicateCell { .. } => "duplicate_cell",
            CliError::NonNumericField { .. } => "non_numeric_field",
            CliError::Io { .. } => "io",
            CliError::Lib(e) => match e {
                twfe::Error::NonFiniteIndex { .. } => "non_finite_index",
                twfe::Error::BadFamilyData { .. } => "bad_family_data",
                twfe::Error::InvalidSpec(_) => "invalid_spec",
                twfe::Error::EmptyPanel => "empty_panel",
                twfe::Error::SingularHessian(_) => "singular_hessian",
                twfe::Error::NoConvergence { .. } => "no_convergence",
                twfe::Error::NonNegativeHessian { .. } => "non_negative_hessian",
                twfe::Error::TauTooLarge { .. } => "tau_too_large",
                twfe::Error::RankDeficientConstraint(_) => "rank_deficient_constraint",
                twfe::Error::IndefiniteHessian(_) => "indefinite_hessian",
                twfe::Error::DegenerateVariance(_) => "degenerate_variance",
            },
        }
    }

    /// 2 for configuration/input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::UnbalancedPanel { .. }
            | CliError::DuplicateCell { .. }
            | CliError::NonNumericField { .. }
            | CliError::Io { .. } => 2,
            CliError::Lib(e) => match e {
                twfe::Error::InvalidSpec(_)
                | twfe::Error::BadFamilyData { .. }
                | twfe::Error::TauTooLarge { .. }
                | twfe::Error::RankDeficientConstraint(_) => 2,
                _ => 3,
            },
        }
    }

    /// The machine-readable payload printed to stderr on failure.
    pub fn to_json(&self) -> String {
        let body = serde_json::json!({
            "error": {
                "code": self.exit_code(),
                "kind": self.kind(),
                "message": self.to_string(),
            }
        });
        serde_json::to_string(&body).expect("error JSON is serializable")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
