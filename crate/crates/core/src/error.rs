use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("declared column `{column}` not found in {path}")]
    MissingColumn { column: String, path: String },
    #[error("duplicate innermost identifier `{id}` (rows {first} and {second})")]
    DuplicateInnermostId { id: String, first: usize, second: usize },
    #[error("row {row}: missing value in level identifier column `{column}`")]
    MissingLevelId { row: usize, column: String },
    #[error("unknown column `{column}`")]
    UnknownColumn { column: String },
    #[error("column `{column}` already exists; refusing to overwrite")]
    ColumnCollision { column: String },
    #[error("column `{column}` is not numeric")]
    NotNumeric { column: String },
    #[error("column `{column}` is not categorical")]
    NotCategorical { column: String },
    #[error("duplicate key `{key}` in auxiliary table joined at `{level}`")]
    DuplicateJoinKey { key: String, level: String },
    #[error("`{level}` is not a level column of the dataset")]
    UnknownLevel { level: String },

    #[error("{op}: expected {expected} responses, got {got}")]
    ResponseCount { op: &'static str, expected: usize, got: usize },
    #[error("response value {value} out of range 1..=4")]
    ResponseOutOfRange { value: f64 },
    #[error("cannot standardize `{column}`: {reason}")]
    Standardize { column: String, reason: String },
    #[error("reference category `{reference}` not observed in `{column}`")]
    UnknownReference { reference: String, column: String },
    #[error("indicator column `{column}` holds {value} at row {row}; expected 0, 1 or missing")]
    NotAnIndicator { column: String, value: f64, row: usize },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("nesting violations detected for levels {levels:?}; run validate_nesting for details")]
    NestingViolated { levels: Vec<String> },
    #[error("level `{level}` has a single unit; its variance is unidentifiable")]
    SingleUnitLevel { level: String },
    #[error("levels `{outer}` and `{inner}` coincide unit for unit; their variances are jointly unidentifiable")]
    CoincidentLevels { outer: String, inner: String },
    #[error("design matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("singular generalized least squares system")]
    SingularGls,
    #[error("singular variance-step system; check level identifiability")]
    SingularVarianceStep,
    #[error("no usable rows after listwise deletion for columns {columns:?}")]
    NoRows { columns: Vec<String> },

    #[error("cutpoints must be strictly increasing, got {0:?}")]
    CutpointsNotIncreasing(Vec<f64>),
    #[error("ordinal response needs at least 2 observed categories, found {0}")]
    TooFewCategories(usize),
    #[error("quadrature requires at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("quadrature fitter supports exactly one random level plus the residual level, got {0} levels")]
    QuadratureLevels(usize),

    #[error("invalid simulation config: {0}")]
    InvalidSimulation(String),
    #[error("dense oracle limited to {max} rows, dataset has {got}")]
    OracleTooLarge { max: usize, got: usize },
    #[error("anova oracle requires a balanced design: {0}")]
    Unbalanced(String),
    #[error("numerical optimizer failed: {0}")]
    OptimizerFailed(String),

    #[error("all variance components are zero; proportions undefined")]
    AllVariancesZero,
    #[error("fits have different level structures: {a:?} vs {b:?}")]
    LevelMismatch { a: Vec<String>, b: Vec<String> },
    #[error("residual sets cover different groups (e.g. `{example}` on one side only)")]
    GroupSetMismatch { example: String },

    #[error("config error: {0}")]
    Config(String),
    #[error("model `{model}` references column `{column}` which is neither declared nor produced by any earlier step")]
    UndeclaredColumn { model: String, column: String },
    #[error("fit artifact not found: {path}")]
    MissingFitArtifact { path: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the command-line tool maps this error to:
    /// 1 for configuration/validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UndeclaredColumn { .. }
            | Error::UnknownColumn { .. }
            | Error::UnknownLevel { .. }
            | Error::MissingColumn { .. }
            | Error::InvalidSpec(_)
            | Error::InvalidSimulation(_)
            | Error::ColumnCollision { .. } => 1,
            _ => 2,
        }
    }
}
