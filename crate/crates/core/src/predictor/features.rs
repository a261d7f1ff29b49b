use std::fmt;

use serde::{Deserialize, Serialize};

use super::{MeanAnchor, ModelConfig};
use crate::data::{Sample, STEP};
use crate::scene::{MotionState, SV_SLOTS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinematics {
    Pos,
    PosVel,
    PosVelAcc,
}

impl Kinematics {
    /// Number of (x, y) pairs used.
    pub fn pairs(self) -> usize {
        match self {
            Kinematics::Pos => 1,
            Kinematics::PosVel => 2,
            Kinematics::PosVelAcc => 3,
        }
    }
}

/// Which motion quantities feed the encoders. The OV always sees its own
/// state; SVs additionally see their state relative to the OV when
/// `relative` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSet {
    pub kinematics: Kinematics,
    pub relative: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self {
            kinematics: Kinematics::PosVelAcc,
            relative: true,
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kinematics {
            Kinematics::Pos => "pos",
            Kinematics::PosVel => "pos+vel",
            Kinematics::PosVelAcc => "pos+vel+acc",
        };
        write!(f, "{k}/{}", if self.relative { "abs+rel" } else { "abs" })
    }
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 6] = [
        FeatureSet { kinematics: Kinematics::Pos, relative: false },
        FeatureSet { kinematics: Kinematics::PosVel, relative: false },
        FeatureSet { kinematics: Kinematics::PosVelAcc, relative: false },
        FeatureSet { kinematics: Kinematics::Pos, relative: true },
        FeatureSet { kinematics: Kinematics::PosVel, relative: true },
        FeatureSet { kinematics: Kinematics::PosVelAcc, relative: true },
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.to_string() == s)
    }

    pub fn ov_width(self) -> usize {
        2 * self.kinematics.pairs()
    }

    pub fn sv_width(self) -> usize {
        self.ov_width() * if self.relative { 2 } else { 1 }
    }
}

/// Where each encoded SV row of a batch sits: `rows[i] = (sample, slot)`,
/// sorted by slot then sample so per-slot groups are contiguous.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SvLayout {
    pub batch: usize,
    pub rows: Vec<(usize, usize)>,
}

impl SvLayout {
    pub fn new(batch: usize, mut rows: Vec<(usize, usize)>) -> Self {
        rows.sort_by_key(|&(b, s)| (s, b));
        Self { batch, rows }
    }

    pub fn row_of(&self, sample: usize, slot: usize) -> Option<usize> {
        self.rows.iter().position(|&r| r == (sample, slot))
    }

    /// `[batch * 11]` occupancy, row-major by sample.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.batch * SV_SLOTS.len()];
        for &(b, s) in &self.rows {
            m[b * SV_SLOTS.len() + s] = true;
        }
        m
    }

    /// Row range of each slot's group.
    pub fn slot_ranges(&self) -> Vec<std::ops::Range<usize>> {
        (0..SV_SLOTS.len())
            .map(|slot| {
                let start = self.rows.partition_point(|r| r.1 < slot);
                let end = self.rows.partition_point(|r| r.1 <= slot);
                start..end
            })
            .collect()
    }
}

/// Encoder inputs and targets for a set of samples, expressed in each
/// sample's frame: origin at the OV position at `t0`, features scaled.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    /// `history_len` tensors of `[size, ov_width]`.
    pub ov_steps: Vec<Tensor>,
    /// `history_len` tensors of `[layout.rows.len(), sv_width]`.
    pub sv_steps: Vec<Tensor>,
    pub layout: SvLayout,
    pub origins: Vec<[f64; 2]>,
    /// `[size, future_len, 2]` future positions relative to the origin (m),
    /// NaN where the sample has no ground truth.
    pub targets: Tensor,
    /// `[size, future_len, 2]` offsets added to the decoded means (m).
    pub anchors: Tensor,
}

/// Velocity over the last second of the position history.
pub fn history_velocity(sample: &Sample) -> [f64; 2] {
    let h = &sample.ov_history;
    let back = 5.min(h.len() - 1);
    if back == 0 {
        return [0.0, 0.0];
    }
    let (a, b) = (&h[h.len() - 1 - back], &h[h.len() - 1]);
    let dt = b.t - a.t;
    [(b.x - a.x) / dt, (b.y - a.y) / dt]
}

fn push_state(out: &mut Vec<f64>, s: [f64; 6], origin: [f64; 2], pairs: usize, cfg: &ModelConfig) {
    out.push((s[0] - origin[0]) / cfg.position_scale);
    out.push((s[1] - origin[1]) / cfg.position_scale);
    if pairs > 1 {
        out.push(s[2] / cfg.velocity_scale);
        out.push(s[3] / cfg.velocity_scale);
    }
    if pairs > 2 {
        out.push(s[4] / cfg.acceleration_scale);
        out.push(s[5] / cfg.acceleration_scale);
    }
}

fn push_relative(out: &mut Vec<f64>, r: [f64; 6], pairs: usize, cfg: &ModelConfig) {
    push_state(out, r, [0.0, 0.0], pairs, cfg);
}

impl Batch {
    pub fn new(samples: &[&Sample], cfg: &ModelConfig, features: FeatureSet) -> Self {
        let size = samples.len();
        let pairs = features.kinematics.pairs();
        let hl = cfg.history_len;
        let origins: Vec<[f64; 2]> = samples
            .iter()
            .map(|s| {
                let c: &MotionState = s.ov_current();
                [c.x, c.y]
            })
            .collect();

        let mut rows = Vec::new();
        for (b, s) in samples.iter().enumerate() {
            for sv in &s.svs {
                if let Some(slot) = sv.slot.sv_index() {
                    rows.push((b, slot));
                }
            }
        }
        let layout = SvLayout::new(size, rows);

        let ov_steps = (0..hl)
            .map(|k| {
                let mut data = Vec::with_capacity(size * features.ov_width());
                for (b, s) in samples.iter().enumerate() {
                    push_state(&mut data, s.ov_history[k].as_array(), origins[b], pairs, cfg);
                }
                Tensor::new(vec![size, features.ov_width()], data).expect("ov feature shape")
            })
            .collect();

        let sv_steps = (0..hl)
            .map(|k| {
                let mut data = Vec::with_capacity(layout.rows.len() * features.sv_width());
                for &(b, slot) in &layout.rows {
                    let sv = samples[b].sv(SV_SLOTS[slot]).expect("layout row has an SV");
                    push_state(&mut data, sv.states[k].as_array(), origins[b], pairs, cfg);
                    if features.relative {
                        push_relative(&mut data, sv.relative[k], pairs, cfg);
                    }
                }
                Tensor::new(vec![layout.rows.len(), features.sv_width()], data).expect("sv feature shape")
            })
            .collect();

        let fl = cfg.future_len;
        let mut targets = Vec::with_capacity(size * fl * 2);
        for (b, s) in samples.iter().enumerate() {
            // Unknown future steps (prediction-only samples) become NaN.
            for k in 0..fl {
                match s.ov_future.get(k) {
                    Some(p) => targets.extend([p[0] - origins[b][0], p[1] - origins[b][1]]),
                    None => targets.extend([f64::NAN; 2]),
                }
            }
        }
        let targets = Tensor::new(vec![size, fl, 2], targets).expect("target shape");
        let anchors = match cfg.mean_anchor {
            MeanAnchor::Origin => Tensor::zeros(vec![size, fl, 2]),
            MeanAnchor::ConstantVelocity => {
                let mut a = Vec::with_capacity(size * fl * 2);
                for s in samples {
                    let v = history_velocity(s);
                    for k in 1..=fl {
                        let t = k as f64 * STEP;
                        a.extend([v[0] * t, v[1] * t]);
                    }
                }
                Tensor::new(vec![size, fl, 2], a).expect("anchor shape")
            }
        };

        Self {
            size,
            ov_steps,
            sv_steps,
            layout,
            origins,
            targets,
            anchors,
        }
    }
}
