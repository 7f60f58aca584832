use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument falls outside the domain of a pricing or model formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no root in [{lo}, {hi}] for target {target}")]
    NoRoot { target: f64, lo: f64, hi: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Data that admits no meaningful estimate (all-zero frontier, constant series).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("factor dynamics are not mean-reverting (eigenvalue {eigenvalue:.6})")]
    NonMeanReverting { eigenvalue: f64 },

    #[error("linear program is infeasible; rows violated at all-cash: {violated_at_cash:?}")]
    Infeasible { violated_at_cash: Vec<String> },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration cap of {0} reached")]
    IterationLimit(usize),

    #[error("cutting-plane loop stopped after {iterations} iterations with risk gap {gap:.3e}")]
    CuttingPlaneNotConverged { iterations: usize, gap: f64 },

    #[error("{path}:{row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            message: message.into(),
        }
    }

    /// True for errors raised by the optimiser rather than by bad inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Infeasible { .. }
                | Error::Unbounded
                | Error::IterationLimit(_)
                | Error::CuttingPlaneNotConverged { .. }
                | Error::NonMeanReverting { .. }
        )
    }
}
