use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{ActionParams, ActionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerMode {
    MinMax,
    None,
}

/// Maps actions to the space models regress in, and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNormalizer {
    pub mode: NormalizerMode,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub spec: ActionSpec,
}

impl ActionNormalizer {
    /// Min-max from the training actions, except for tasks regressed in raw units.
    pub fn fit(train_actions: &[ActionParams], spec: &ActionSpec) -> Result<Self> {
        let mode = if spec.task_id.uses_raw_action_space() {
            NormalizerMode::None
        } else {
            NormalizerMode::MinMax
        };
        Self::fit_with_mode(train_actions, spec, mode)
    }

    pub fn fit_with_mode(train_actions: &[ActionParams], spec: &ActionSpec, mode: NormalizerMode) -> Result<Self> {
        if train_actions.is_empty() {
            return Err(Error::Dataset("cannot fit an action normalizer on an empty split".into()));
        }
        let mut min = vec![f64::INFINITY; spec.dims];
        let mut max = vec![f64::NEG_INFINITY; spec.dims];
        for a in train_actions {
            if a.values.len() != spec.dims {
                return Err(Error::shape(
                    "ActionNormalizer::fit",
                    format!("{} expects {} dims, got {}", spec.task_id, spec.dims, a.values.len()),
                ));
            }
            for (d, &v) in a.values.iter().enumerate() {
                min[d] = min[d].min(v);
                max[d] = max[d].max(v);
            }
        }
        if mode == NormalizerMode::MinMax {
            if let Some(d) = (0..spec.dims).find(|&d| !(max[d] > min[d])) {
                return Err(Error::Dataset(format!(
                    "action dimension {} is constant ({}) in the training split",
                    spec.names[d], min[d]
                )));
            }
        }
        Ok(Self {
            mode,
            min,
            max,
            spec: spec.clone(),
        })
    }

    pub fn dims(&self) -> usize {
        self.spec.dims
    }

    pub fn normalize(&self, action: &ActionParams) -> Vec<f64> {
        match self.mode {
            NormalizerMode::None => action.values.clone(),
            NormalizerMode::MinMax => action
                .values
                .iter()
                .enumerate()
                .map(|(d, &v)| (v - self.min[d]) / (self.max[d] - self.min[d]))
                .collect(),
        }
    }

    /// Inverse of [`normalize`](Self::normalize), without clipping.
    pub fn denormalize_raw(&self, values: &[f64]) -> Vec<f64> {
        match self.mode {
            NormalizerMode::None => values.to_vec(),
            NormalizerMode::MinMax => values
                .iter()
                .enumerate()
                .map(|(d, &v)| self.min[d] + v * (self.max[d] - self.min[d]))
                .collect(),
        }
    }

    /// Back to action units, clipped to the bounds (integer dims rounded).
    pub fn denormalize(&self, values: &[f64]) -> ActionParams {
        self.spec.clip(&self.denormalize_raw(values))
    }
}
