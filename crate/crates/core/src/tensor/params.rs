use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, TensorError, Var};

/// Named trainable arrays in a fixed insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"));
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape.to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.values().cloned().collect()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.values_mut()
    }

    /// Rebuilds a set with the same names from `tensors` (same order).
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self, TensorError> {
        if tensors.len() != self.len() {
            return Err(TensorError::Invalid {
                op: "ParamSet::with_tensors",
                msg: format!("expected {} tensors, got {}", self.len(), tensors.len()),
            });
        }
        let mut out = Self::new();
        for ((name, old), new) in self.entries.iter().zip(tensors) {
            if old.shape() != new.shape() {
                return Err(super::shape_err("ParamSet::with_tensors", old.shape(), new.shape()));
            }
            out.insert(name.clone(), new);
        }
        Ok(out)
    }

    pub fn total_size(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }
}

/// A [`ParamSet`] loaded onto a tape as leaves.
#[derive(Debug, Clone)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn load(tape: &mut Tape, params: &ParamSet) -> Self {
        let names = params.names().map(str::to_owned).collect();
        let vars = params.entries.values().map(|t| tape.leaf(t.clone())).collect();
        Self { names, vars }
    }

    /// Pairs already-recorded vars with names, e.g. inside a gradient check.
    pub fn from_vars(params: &ParamSet, vars: &[Var]) -> Self {
        Self {
            names: params.names().map(str::to_owned).collect(),
            vars: vars.to_vec(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, TensorError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| TensorError::UnknownParam(name.to_owned()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients aligned with the parameter order; unreached parameters get zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec())))
            .collect()
    }
}
