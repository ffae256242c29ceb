//! Action normalization, the linear probe, supervised baselines and the
//! random and oracle reference methods.

mod normalizer;
mod policy;
mod probe;
mod supervised;

pub use normalizer::{ActionNormalizer, NormalizerMode};
pub use policy::{
    behavior_actions, clip_spectrogram, nearest_action, oracle_baseline, random_baseline, random_choice, Policy,
    PolicyKind, PolicyModel,
};
pub use probe::{fit_probe, Precondition, ProbeConfig, ProbeFit, ProbeWeights, PROBE_MODEL_KIND};
pub use supervised::{train_supervised, SupervisedConfig, SupervisedNet, SupervisedOutcome, SUPERVISED_MODEL_KIND};
