pub mod data;
pub mod plan;
pub mod predictor;
pub mod risk;
pub mod scenario;
pub mod scene;
pub mod synthetic;
pub mod tensor;
pub mod train;
