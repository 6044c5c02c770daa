//! Command-level error type carrying the process exit code.

use std::fmt;

use cid_core::cid::PipelineError;
use cid_core::counterfactual::CfError;
use cid_core::dataset::DataError;
use cid_core::evaluation::EvalError;
use cid_core::model::ModelError;

#[derive(Debug)]
pub enum AppError {
    /// Bad flags or arguments — exit 2.
    Usage(String),
    /// Data, model, or I/O failure — exit 1.
    Data(String),
    /// Counterfactual budget exhausted — exit 3.
    Budget(String),
}

impl AppError {
    pub fn usage(msg: impl Into<String>) -> AppError {
        AppError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> AppError {
        AppError::Data(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Data(_) => 1,
            AppError::Usage(_) => 2,
            AppError::Budget(_) => 3,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Budget(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<CfError> for AppError {
    fn from(e: CfError) -> Self {
        match e {
            CfError::BadConfig(_) => AppError::Usage(e.to_string()),
            CfError::BudgetExhausted { .. } => AppError::Budget(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Counterfactual(inner) => AppError::from(inner),
            PipelineError::BadConfig(_)
            | PipelineError::RankRange { .. }
            | PipelineError::Dimension { .. } => AppError::Usage(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BadTopK { .. } => AppError::Usage(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Data(e.to_string())
    }
}
