use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Sample};

/// What the 70/10/20 partition shuffles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    #[default]
    Sample,
    /// All windows of one vehicle land in the same split.
    Vehicle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub unit: SplitUnit,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// `(train, val)` sizes for `n` units; test takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize) {
    ((7 * n + 5) / 10, (n + 5) / 10)
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DataError> {
        serde_json::from_str(s).map_err(|e| DataError::Format(format!("manifest: {e}")))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle into 70/10/20 train/validation/test partitions.
pub fn split_dataset(samples: &[Sample], seed: u64, unit: SplitUnit) -> Result<SplitManifest, DataError> {
    if samples.len() < 10 {
        return Err(DataError::InsufficientData(format!("{} samples; at least 10 required", samples.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val, test) = match unit {
        SplitUnit::Sample => {
            let mut ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
            ids.shuffle(&mut rng);
            let (nt, nv) = split_sizes(ids.len());
            let test = ids.split_off(nt + nv);
            let val = ids.split_off(nt);
            (ids, val, test)
        }
        SplitUnit::Vehicle => {
            let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for s in samples {
                let recording = s.id.split(':').next().unwrap_or_default();
                groups.entry(format!("{recording}:{}", s.ov_id)).or_default().push(s.id.clone());
            }
            let mut keys: Vec<String> = groups.keys().cloned().collect();
            if keys.len() < 3 {
                return Err(DataError::InsufficientData(format!("{} vehicles; at least 3 required", keys.len())));
            }
            keys.shuffle(&mut rng);
            let (nt, nv) = split_sizes(keys.len());
            let collect = |ks: &[String]| ks.iter().flat_map(|k| groups[k].iter().cloned()).collect::<Vec<_>>();
            (collect(&keys[..nt]), collect(&keys[nt..nt + nv]), collect(&keys[nt + nv..]))
        }
    };
    Ok(SplitManifest {
        seed,
        unit,
        train,
        val,
        test,
    })
}
