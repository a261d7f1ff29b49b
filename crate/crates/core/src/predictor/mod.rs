//! Interaction-aware trajectory predictor: per-vehicle LSTM encoders, three
//! context channels (own history, convolutional social pooling, graph
//! attention) and an LSTM decoder emitting bivariate Gaussians per step.

mod baseline;
mod features;
mod network;

pub use baseline::{baseline_predict, Baseline};
pub use features::{history_velocity, Batch, FeatureSet, Kinematics, SvLayout};
pub use network::{
    assemble_social_tensor, channel1, conv_social_pool, decode_future, encode_vehicle, fuse_context, graph_attention,
    Attention, DecodedVars, EncoderState,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Sample, FUTURE_LEN, HISTORY_LEN, STEP};
use crate::tensor::{ParamSet, ParamVars, Tape, TensorError};

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1e3;
pub const RHO_SCALE: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid params: {0}")]
    InvalidParams(String),
}

/// How surrounding-vehicle encoders are parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvEncoder {
    #[default]
    Shared,
    PerSlot,
}

/// What the decoder's mean outputs are measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanAnchor {
    /// The OV position at `t0`.
    Origin,
    /// Constant-velocity extrapolation from the last second of positions.
    #[default]
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub gat_dim: usize,
    pub ch1_dim: usize,
    pub history_len: usize,
    pub future_len: usize,
    pub leaky_slope: f64,
    /// Row stride of the 2x1 max pool.
    pub pool_stride: usize,
    pub sv_encoder: SvEncoder,
    pub mean_anchor: MeanAnchor,
    /// Feature scales: positions (m), velocities (m/s), accelerations (m/s²).
    pub position_scale: f64,
    pub velocity_scale: f64,
    pub acceleration_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            encoder_hidden: 64,
            decoder_hidden: 128,
            conv1_filters: 64,
            conv2_filters: 16,
            gat_dim: 64,
            ch1_dim: 32,
            history_len: HISTORY_LEN,
            future_len: FUTURE_LEN,
            leaky_slope: 0.1,
            pool_stride: 1,
            sv_encoder: SvEncoder::Shared,
            mean_anchor: MeanAnchor::ConstantVelocity,
            position_scale: 10.0,
            velocity_scale: 10.0,
            acceleration_scale: 1.0,
        }
    }
}

impl ModelConfig {
    /// Every hidden size set to `n`.
    pub fn uniform(n: usize) -> Self {
        Self {
            embed_dim: n,
            encoder_hidden: n,
            decoder_hidden: n,
            conv1_filters: n,
            conv2_filters: n,
            gat_dim: n,
            ch1_dim: n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        let sizes = [
            ("embed_dim", self.embed_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("gat_dim", self.gat_dim),
            ("ch1_dim", self.ch1_dim),
            ("history_len", self.history_len),
            ("pool_stride", self.pool_stride),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(PredictError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.future_len != FUTURE_LEN {
            return Err(PredictError::InvalidConfig(format!("future_len must be {FUTURE_LEN}")));
        }
        if self.history_len != HISTORY_LEN {
            return Err(PredictError::InvalidConfig(format!("history_len must be {HISTORY_LEN}")));
        }
        let scales = [self.position_scale, self.velocity_scale, self.acceleration_scale, self.leaky_slope];
        if scales[..3].iter().any(|s| !(*s > 0.0 && s.is_finite())) || !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(PredictError::InvalidConfig("scales must be positive, leaky_slope in [0, 1)".into()));
        }
        Ok(())
    }

    /// Length of the fused context vector for `channels`.
    pub fn context_len(&self, channels: Channels) -> usize {
        self.ch1_dim
            + if channels.social { self.conv2_filters * self.pooled_rows() } else { 0 }
            + if channels.attention { self.gat_dim } else { 0 }
    }

    pub fn pooled_rows(&self) -> usize {
        (3 - 2) / self.pool_stride + 1
    }
}

/// Enabled context channels. The own-history channel is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Channels {
    pub social: bool,
    pub attention: bool,
}

impl Default for Channels {
    fn default() -> Self {
        Self::ALL[3]
    }
}

impl Channels {
    /// History only; + social pooling; + attention; all three.
    pub const ALL: [Channels; 4] = [
        Channels { social: false, attention: false },
        Channels { social: true, attention: false },
        Channels { social: false, attention: true },
        Channels { social: true, attention: true },
    ];

    pub fn label(&self) -> &'static str {
        match (self.social, self.attention) {
            (false, false) => "ch1",
            (true, false) => "ch1+ch2",
            (false, true) => "ch1+ch3",
            (true, true) => "ch1+ch2+ch3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub channels: Channels,
    pub features: FeatureSet,
}

impl Ablation {
    /// All 4 channel configurations × 6 feature sets.
    pub fn grid() -> Vec<Ablation> {
        Channels::ALL
            .iter()
            .flat_map(|&channels| FeatureSet::ALL.iter().map(move |&features| Ablation { channels, features }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl GaussianParams {
    pub fn is_valid(&self) -> bool {
        [self.mu_x, self.mu_y].iter().all(|v| v.is_finite())
            && self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.sigma_x.is_finite()
            && self.sigma_y.is_finite()
            && self.rho.abs() < 1.0
    }

    pub fn covariance_det(&self) -> f64 {
        let (sx2, sy2) = (self.sigma_x * self.sigma_x, self.sigma_y * self.sigma_y);
        sx2 * sy2 * (1.0 - self.rho * self.rho)
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.mu_x, self.mu_y]
    }
}

/// Predicted positions at `t0 + 0.2, ..., t0 + 5` s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTrajectory {
    pub t0: f64,
    pub steps: Vec<GaussianParams>,
}

impl GaussianTrajectory {
    pub fn means(&self) -> Vec<[f64; 2]> {
        self.steps.iter().map(GaussianParams::mean).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.steps.len()).map(|k| self.t0 + k as f64 * STEP).collect()
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        if self.steps.len() != FUTURE_LEN {
            return Err(PredictError::InvalidParams(format!("{} steps, expected {FUTURE_LEN}", self.steps.len())));
        }
        match self.steps.iter().position(|s| !s.is_valid()) {
            Some(k) => Err(PredictError::InvalidParams(format!("step {k}: {:?}", self.steps[k]))),
            None => Ok(()),
        }
    }
}

/// Network weights together with the configuration they were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub params: ParamSet,
}

/// Decoder outputs for a batch; `mu` is in meters relative to each sample's
/// OV position at `t0`.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub mu: crate::tensor::Var,
    pub sigma: crate::tensor::Var,
    pub rho: crate::tensor::Var,
}

impl Predictor {
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self, PredictError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = network::init_params(&config, &ablation, &mut rng);
        Ok(Self { config, ablation, params })
    }

    /// Records the full forward pass for `batch` on `tape`.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, batch: &Batch) -> Result<Forward, PredictError> {
        network::forward(tape, vars, &self.config, &self.ablation, batch)
    }

    pub fn batch(&self, samples: &[&Sample]) -> Batch {
        Batch::new(samples, &self.config, self.ablation.features)
    }

    pub fn predict(&self, sample: &Sample) -> Result<GaussianTrajectory, PredictError> {
        Ok(self.predict_batch(&[sample])?.remove(0))
    }

    pub fn predict_batch(&self, samples: &[&Sample]) -> Result<Vec<GaussianTrajectory>, PredictError> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.batch(samples);
        let mut tape = Tape::new();
        let vars = ParamVars::load(&mut tape, &self.params);
        let out = self.forward(&mut tape, &vars, &batch)?;
        let (mu, sigma, rho) = (tape.value(out.mu).data(), tape.value(out.sigma).data(), tape.value(out.rho).data());
        let fl = self.config.future_len;
        let trajs = samples
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let origin = batch.origins[b];
                let steps = (0..fl)
                    .map(|k| {
                        let i = b * fl + k;
                        GaussianParams {
                            mu_x: origin[0] + mu[2 * i],
                            mu_y: origin[1] + mu[2 * i + 1],
                            sigma_x: sigma[2 * i],
                            sigma_y: sigma[2 * i + 1],
                            rho: rho[i],
                        }
                    })
                    .collect();
                GaussianTrajectory { t0: s.t0, steps }
            })
            .collect::<Vec<_>>();
        for t in &trajs {
            t.validate().map_err(|e| PredictError::Numerical(e.to_string()))?;
        }
        Ok(trajs)
    }
}
