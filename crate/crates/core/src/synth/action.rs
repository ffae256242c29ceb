use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Rattle,
    Tambourine,
    Swatter,
    StrikeH,
    StrikeV,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::Rattle,
        TaskId::Tambourine,
        TaskId::Swatter,
        TaskId::StrikeH,
        TaskId::StrikeV,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Rattle => "rattle",
            TaskId::Tambourine => "tambourine",
            TaskId::Swatter => "swatter",
            TaskId::StrikeH => "strike_h",
            TaskId::StrikeV => "strike_v",
        }
    }

    /// Contact microphones used by the task.
    pub fn channels(self) -> usize {
        match self {
            TaskId::Rattle | TaskId::Tambourine => 1,
            TaskId::Swatter | TaskId::StrikeH | TaskId::StrikeV => 2,
        }
    }

    /// Tasks whose actions are regressed in raw units instead of min-max space.
    pub fn uses_raw_action_space(self) -> bool {
        matches!(self, TaskId::Rattle | TaskId::Tambourine)
    }

    pub fn action_spec(self) -> ActionSpec {
        const VEL: (f64, f64) = (0.5, 2.0);
        const ACC: (f64, f64) = (0.5, 2.0);
        let dims: &[(&str, (f64, f64), DimKind)] = match self {
            TaskId::Rattle | TaskId::Tambourine => &[
                ("elbow_velocity", VEL, DimKind::Velocity),
                ("elbow_acceleration", ACC, DimKind::Other),
                ("oscillations", (1.0, 5.0), DimKind::Integer),
            ],
            TaskId::Swatter => &[
                ("base_velocity", VEL, DimKind::Velocity),
                ("shoulder_velocity", VEL, DimKind::Velocity),
                ("acceleration", ACC, DimKind::Other),
            ],
            TaskId::StrikeH => &[
                ("shoulder_velocity", VEL, DimKind::Velocity),
                ("elbow_velocity", VEL, DimKind::Velocity),
                ("wrist_velocity", VEL, DimKind::Velocity),
                ("acceleration", ACC, DimKind::Other),
                ("shoulder_steps", (1.0, 8.0), DimKind::Integer),
                ("elbow_steps", (1.0, 8.0), DimKind::Integer),
                ("wrist_steps", (1.0, 8.0), DimKind::Integer),
            ],
            TaskId::StrikeV => &[
                ("shoulder_velocity", VEL, DimKind::Velocity),
                ("elbow_velocity", VEL, DimKind::Velocity),
                ("wrist_velocity", VEL, DimKind::Velocity),
                ("acceleration", ACC, DimKind::Other),
            ],
        };
        ActionSpec {
            task_id: self,
            dims: dims.len(),
            bounds: dims.iter().map(|d| d.1).collect(),
            names: dims.iter().map(|d| d.0.to_string()).collect(),
            integer_dims: kind_indices(dims, DimKind::Integer),
            velocity_dims: kind_indices(dims, DimKind::Velocity),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum DimKind {
    Velocity,
    Integer,
    Other,
}

fn kind_indices(dims: &[(&str, (f64, f64), DimKind)], kind: DimKind) -> Vec<usize> {
    dims.iter()
        .enumerate()
        .filter(|(_, d)| d.2 == kind)
        .map(|(i, _)| i)
        .collect()
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task `{s}`")))
    }
}

/// Motion-primitive parameter space of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub task_id: TaskId,
    pub dims: usize,
    pub bounds: Vec<(f64, f64)>,
    pub names: Vec<String>,
    pub integer_dims: Vec<usize>,
    /// Joint-velocity dimensions; sound energy grows with each of them.
    pub velocity_dims: Vec<usize>,
}

impl ActionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bounds.len() != self.dims || self.names.len() != self.dims {
            return Err(Error::invalid(format!(
                "action spec for {} declares {} dims but has {} bounds and {} names",
                self.task_id,
                self.dims,
                self.bounds.len(),
                self.names.len()
            )));
        }
        for (name, (lo, hi)) in self.names.iter().zip(&self.bounds) {
            if !(lo < hi) {
                return Err(Error::invalid(format!("dimension {name}: bounds [{lo}, {hi}] are empty")));
            }
        }
        Ok(())
    }

    pub fn is_integer(&self, dim: usize) -> bool {
        self.integer_dims.contains(&dim)
    }

    /// Checks dimension count, bounds and integrality.
    pub fn check(&self, action: &ActionParams) -> Result<()> {
        if action.values.len() != self.dims {
            return Err(Error::shape(
                "ActionSpec::check",
                format!("{} expects {} dims, got {}", self.task_id, self.dims, action.values.len()),
            ));
        }
        for (d, &v) in action.values.iter().enumerate() {
            let (lo, hi) = self.bounds[d];
            if !(lo..=hi).contains(&v) {
                return Err(Error::invalid(format!(
                    "{} = {v} is outside [{lo}, {hi}]",
                    self.names[d]
                )));
            }
            if self.is_integer(d) && v.fract() != 0.0 {
                return Err(Error::invalid(format!("{} = {v} must be an integer", self.names[d])));
            }
        }
        Ok(())
    }

    /// Clamps every dimension into its bounds; integer dims are also rounded.
    pub fn clip(&self, values: &[f64]) -> ActionParams {
        ActionParams::new(
            values
                .iter()
                .enumerate()
                .map(|(d, &v)| {
                    let (lo, hi) = self.bounds[d];
                    let v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
                    if self.is_integer(d) {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect(),
        )
    }

    pub fn midpoint(&self) -> ActionParams {
        self.clip(&self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect::<Vec<_>>())
    }
}

/// One behavior: a point in a task's action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionParams {
    pub values: Vec<f64>,
}

impl ActionParams {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn squared_distance(&self, other: &ActionParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Uniform draw over the box; integer dims uniform over their integer range.
pub fn sample_action(spec: &ActionSpec, seed: u64) -> ActionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ActionParams::new(
        spec.bounds
            .iter()
            .enumerate()
            .map(|(d, &(lo, hi))| {
                if spec.is_integer(d) {
                    rng.gen_range(lo.round() as i64..=hi.round() as i64) as f64
                } else {
                    rng.gen_range(lo..hi)
                }
            })
            .collect(),
    )
}
