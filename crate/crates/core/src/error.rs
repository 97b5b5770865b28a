//! Crate-wide error type with CLI exit-code mapping.

/// Errors surfaced by model construction, estimation, and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input lies outside a function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A tranche became degenerate (zero width) after quote conversion.
    #[error("degenerate tranche: {0}")]
    DegenerateTranche(String),

    /// An exact enumeration would exceed the configured outcome budget.
    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    /// The requested quantity has no exact reference for this model.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The sampling budget was exhausted before the accuracy target was met.
    #[error("budget exhausted: spent {spent:.3e} of {budget:.3e} cost units at level {level}")]
    BudgetExhausted { spent: f64, budget: f64, level: u32 },

    /// A run configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem failure while writing or reading run artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: validation problems exit 2, an
    /// exhausted sampling budget exits 3, everything else exits 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Domain(_)
            | Error::DegenerateTranche(_)
            | Error::EnumerationTooLarge(_)
            | Error::Unsupported(_)
            | Error::Config(_) => 2,
            Error::BudgetExhausted { .. } => 3,
            Error::Io(_) => 1,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
