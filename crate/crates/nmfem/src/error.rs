//! Error types shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building datasets, fitting models,
/// selecting them, or ingesting raw events.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two objects that must agree in shape do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A data row has zero probability under every mixture component, so
    /// responsibilities cannot be formed for it.
    #[error("observation {row} has zero probability under every mixture component")]
    DegenerateObservation { row: usize },

    /// A NaN or other non-finite value appeared during an iterative update.
    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure { iteration: usize, message: String },

    /// Not enough points/records to perform the requested computation.
    #[error("insufficient data for {context}: need at least {needed}, got {got}")]
    InsufficientData {
        context: String,
        needed: usize,
        got: usize,
    },

    /// Every restart of a multi-start fit failed.
    #[error("all {attempted} restarts failed; last error: {last_error}")]
    AllRestartsFailed { attempted: usize, last_error: String },

    /// Malformed input rows exceeded the tolerated fraction.
    #[error(
        "{bad} of {total} rows malformed, over the budget of {:.2}%; offending lines: {}",
        .budget * 100.0,
        .examples.join("; ")
    )]
    TooManyBadRows {
        bad: usize,
        total: usize,
        budget: f64,
        examples: Vec<String>,
    },

    /// The input contains nothing to work with.
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for a [`Error::DimensionMismatch`].
    pub fn dim(
        context: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    /// Shorthand for an [`Error::InvalidInput`].
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_row_message_lists_offending_lines() {
        let err = Error::TooManyBadRows {
            bad: 3,
            total: 100,
            budget: 0.01,
            examples: vec!["line 4: not a timestamp".into(), "line 9: empty card".into()],
        };
        let msg = err.to_string();
        assert!(msg.contains("3 of 100"), "unexpected message: {msg}");
        assert!(msg.contains("1.00%"), "unexpected message: {msg}");
        assert!(msg.contains("line 4"), "unexpected message: {msg}");
        assert!(msg.contains("line 9"), "unexpected message: {msg}");
    }

    #[test]
    fn dimension_message_names_the_context() {
        let err = Error::dim("e_step", "M=5", "M=4");
        assert_eq!(
            err.to_string(),
            "dimension mismatch in e_step: expected M=5, got M=4"
        );
    }
}
