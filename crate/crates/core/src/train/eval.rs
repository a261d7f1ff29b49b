use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_fingerprint, TrainError};
use crate::data::Sample;
use crate::predictor::{baseline_predict, Baseline, Predictor};

/// 1-based future steps reported as the 1 s … 5 s horizons.
pub const HORIZON_STEPS: [usize; 5] = [5, 10, 15, 20, 25];

/// Per-horizon RMSE in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub samples: usize,
    pub fingerprint: String,
    pub rmse_at: [f64; 5],
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 5] = ["1s", "2s", "3s", "4s", "5s"];

    pub fn to_csv(&self) -> String {
        let values: Vec<String> = self.rmse_at.iter().map(|v| format!("{v:.6}")).collect();
        format!("{}\n{}\n", Self::COLUMNS.join(","), values.join(","))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// RMSE of the Euclidean position error at each horizon step, over samples.
pub fn horizon_rmse(predictions: &[Vec<[f64; 2]>], truth: &[&[[f64; 2]]]) -> Result<[f64; 5], TrainError> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut out = [0.0; 5];
    for (h, &step) in HORIZON_STEPS.iter().enumerate() {
        let mut sq = 0.0;
        for (p, t) in predictions.iter().zip(truth) {
            let (p, t) = (p[step - 1], t[step - 1]);
            sq += (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
        }
        out[h] = (sq / predictions.len() as f64).sqrt();
    }
    Ok(out)
}

pub fn evaluate_predictions(model: &str, fingerprint: &str, predictions: &[Vec<[f64; 2]>], samples: &[Sample]) -> Result<EvalReport, TrainError> {
    let truth: Vec<&[[f64; 2]]> = samples.iter().map(|s| s.ov_future.as_slice()).collect();
    Ok(EvalReport {
        model: model.to_owned(),
        samples: samples.len(),
        fingerprint: fingerprint.to_owned(),
        rmse_at: horizon_rmse(predictions, &truth)?,
    })
}

pub fn evaluate(predictor: &Predictor, samples: &[Sample]) -> Result<EvalReport, TrainError> {
    let chunks: Vec<Vec<Vec<[f64; 2]>>> = samples
        .par_chunks(super::CHUNK)
        .map(|c| {
            let refs: Vec<&Sample> = c.iter().collect();
            Ok(predictor.predict_batch(&refs)?.iter().map(|t| t.means()).collect())
        })
        .collect::<Result<_, TrainError>>()?;
    let preds: Vec<Vec<[f64; 2]>> = chunks.into_iter().flatten().collect();
    let label = format!("{}/{}", predictor.ablation.channels.label(), predictor.ablation.features);
    let fp = config_fingerprint(&predictor.config, &predictor.ablation, None);
    evaluate_predictions(&label, &fp, &preds, samples)
}

pub fn evaluate_baseline(model: Baseline, samples: &[Sample]) -> Result<EvalReport, TrainError> {
    let preds: Vec<Vec<[f64; 2]>> = samples.iter().map(|s| baseline_predict(s, model)).collect();
    let name = match model {
        Baseline::Cv => "cv",
        Baseline::Ca => "ca",
    };
    evaluate_predictions(name, name, &preds, samples)
}
