use thiserror::Error;
use trajrisk_core::data::DataError;
use trajrisk_core::predictor::PredictError;
use trajrisk_core::risk::RiskError;
use trajrisk_core::scenario::ScenarioError;
use trajrisk_core::train::TrainError;

/// Command failure, classified by exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    /// Missing or malformed input (exit 2).
    #[error("{0}")]
    Input(String),
    /// Inputs are well-formed but do not meet a command's precondition (exit 3).
    #[error("{0}")]
    Precondition(String),
    /// Non-finite values or failed numerics (exit 4).
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InsufficientData(_) => CliError::Precondition(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Shape(_) | PredictError::Numerical(_) => CliError::Numerical(e.to_string()),
            PredictError::InvalidConfig(_) | PredictError::InvalidParams(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Predict(p) => p.into(),
            TrainError::Shape(_) | TrainError::Numerical { .. } => CliError::Numerical(e.to_string()),
            TrainError::EmptySplit(_) => CliError::Precondition(e.to_string()),
            TrainError::InvalidParams(_) | TrainError::InvalidConfig(_) | TrainError::Io(_) | TrainError::Format(_) => {
                CliError::Input(e.to_string())
            }
        }
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::InvalidParams(_) | RiskError::Export(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::InsufficientHistory(_) => CliError::Precondition(e.to_string()),
            ScenarioError::Data(d) => d.into(),
            ScenarioError::Predict(p) => p.into(),
            ScenarioError::Risk(r) => r.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}
