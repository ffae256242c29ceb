use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{PolicyKind, ProbeConfig, SupervisedConfig};
use crate::nn::EncoderConfig;
use crate::ssl::{PretrainConfig, PretrainVariant};
use crate::synth::{TaskId, DEFAULT_NOISE_LEVEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(format!("unknown scale `{s}`, expected desk or paper"))),
        }
    }
}

/// A row of the results tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Aurl,
    AurlAct,
    AurlAa,
    AurlAll,
    /// BYOL with mixup added to the crop augmentation.
    AurlMixup,
    Supervised,
    SupervisedAug,
    Random,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Aurl,
        Method::AurlAct,
        Method::AurlAa,
        Method::AurlAll,
        Method::AurlMixup,
        Method::Supervised,
        Method::SupervisedAug,
        Method::Random,
        Method::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Aurl => "aurl",
            Method::AurlAct => "aurl_act",
            Method::AurlAa => "aurl_aa",
            Method::AurlAll => "aurl_all",
            Method::AurlMixup => "aurl_mixup",
            Method::Supervised => "supervised",
            Method::SupervisedAug => "supervised_aug",
            Method::Random => "random",
            Method::Oracle => "oracle",
        }
    }

    /// Pretraining variant and mixup flag for probe-based methods.
    pub fn pretraining(self) -> Option<(PretrainVariant, bool)> {
        match self {
            Method::Aurl => Some((PretrainVariant::Byol, false)),
            Method::AurlAct => Some((PretrainVariant::ByolAct, false)),
            Method::AurlAa => Some((PretrainVariant::ByolAa, false)),
            Method::AurlAll => Some((PretrainVariant::ByolAll, false)),
            Method::AurlMixup => Some((PretrainVariant::Byol, true)),
            _ => None,
        }
    }

    pub fn policy_kind(self) -> PolicyKind {
        match self {
            Method::Supervised => PolicyKind::Supervised,
            Method::SupervisedAug => PolicyKind::SupervisedAug,
            Method::Random => PolicyKind::Random,
            Method::Oracle => PolicyKind::Oracle,
            _ => PolicyKind::Probe,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_behaviors: u64,
    pub repeats: u32,
    pub noise_level: f64,
    pub master_seed: u64,
    /// Directories written by `gen`, per task. Tasks without an entry are
    /// rendered in memory from the planned manifest.
    pub roots: BTreeMap<TaskId, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub dtw: bool,
    /// Ground-truth re-simulations per test clip for DTW normalization.
    pub dtw_repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Behaviors in the sweep dataset; its training split must cover the largest slice.
    pub n_behaviors: u64,
    pub slices: Vec<usize>,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scale: Scale,
    pub tasks: Vec<TaskId>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub dataset: DatasetConfig,
    /// `in_channels` is replaced by each task's channel count.
    pub encoder: EncoderConfig,
    /// `variant` and `seed` are set per method and run seed.
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    /// `augmentation` is set per method from `pretrain.augmentation`.
    pub supervised: SupervisedConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub out_dir: PathBuf,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn for_scale(scale: Scale) -> Self {
        let (encoder, pretrain, n_behaviors) = match scale {
            Scale::Desk => (
                EncoderConfig::desk(2),
                PretrainConfig::desk(PretrainVariant::Byol, 0),
                200,
            ),
            Scale::Paper => (
                EncoderConfig::paper(2),
                PretrainConfig::paper(PretrainVariant::Byol, 0),
                1000,
            ),
        };
        let supervised = SupervisedConfig {
            epochs: pretrain.epochs,
            batch_size: pretrain.batch_size,
            ..SupervisedConfig::desk(0)
        };
        Self {
            scale,
            tasks: TaskId::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            methods: vec![Method::Random, Method::Oracle, Method::Supervised, Method::Aurl],
            dataset: DatasetConfig {
                n_behaviors,
                repeats: 5,
                noise_level: DEFAULT_NOISE_LEVEL,
                master_seed: 0,
                roots: BTreeMap::new(),
            },
            encoder,
            pretrain,
            probe: ProbeConfig::default(),
            supervised,
            eval: EvalConfig {
                dtw: true,
                dtw_repeats: 5,
                seed: 0,
            },
            sweep: SweepConfig {
                n_behaviors: n_behaviors * 5 / 4,
                slices: match scale {
                    Scale::Desk => vec![50, 100, 200],
                    Scale::Paper => vec![100, 250, 500, 1000],
                },
                methods: vec![Method::Aurl, Method::Supervised],
            },
            out_dir: PathBuf::from("runs"),
            deterministic: false,
        }
    }

    /// Reads a TOML file over the defaults of its `scale` (or `scale_override`).
    pub fn load(path: &Path, scale_override: Option<Scale>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, scale_override)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))
    }

    pub fn from_toml(text: &str, scale_override: Option<Scale>) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let scale = match (scale_override, user.get("scale")) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .as_str()
                .ok_or_else(|| Error::Config("scale must be a string".into()))?
                .parse()?,
            (None, None) => Scale::Desk,
        };
        let mut base = toml::Value::try_from(Self::for_scale(scale)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        base.as_table_mut()
            .expect("config serializes to a table")
            .insert("scale".into(), toml::Value::String(scale.as_str().into()));
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("tasks, seeds and methods must be non-empty".into()));
        }
        for (name, dup) in [
            ("tasks", has_duplicates(&self.tasks)),
            ("seeds", has_duplicates(&self.seeds)),
            ("methods", has_duplicates(&self.methods)),
            ("sweep.methods", has_duplicates(&self.sweep.methods)),
        ] {
            if dup {
                return Err(Error::Config(format!("{name} contains duplicates")));
            }
        }
        for (task, root) in &self.dataset.roots {
            if !root.join("manifest.json").is_file() {
                return Err(Error::Config(format!(
                    "dataset root for {task} has no manifest.json: {}",
                    root.display()
                )));
            }
        }
        if self.dataset.n_behaviors < 5 || self.dataset.repeats < 1 {
            return Err(Error::Config("dataset needs at least 5 behaviors and 1 repeat".into()));
        }
        if !(self.dataset.noise_level >= 0.0) {
            return Err(Error::Config("dataset.noise_level must be non-negative".into()));
        }
        self.encoder.validate()?;
        self.pretrain.validate()?;
        self.supervised.validate()?;
        if self.probe.epochs == 0 || self.probe.batch_cap == 0 {
            return Err(Error::Config("probe epochs and batch_cap must be positive".into()));
        }
        if self.eval.dtw_repeats < 2 {
            return Err(Error::Config("eval.dtw_repeats must be at least 2".into()));
        }
        let sweep_train = (self.sweep.n_behaviors as f64 * 0.8).round() as usize;
        if self.sweep.slices.is_empty() || self.sweep.slices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep.slices must be non-empty and strictly increasing".into()));
        }
        if self.sweep.slices[0] == 0 {
            return Err(Error::Config("sweep slices must be positive".into()));
        }
        if let Some(&s) = self.sweep.slices.last().filter(|&&s| s > sweep_train) {
            return Err(Error::Config(format!(
                "sweep slice {s} exceeds the {sweep_train} training behaviors of a {}-behavior dataset",
                self.sweep.n_behaviors
            )));
        }
        if self.sweep.methods.contains(&Method::AurlAll) {
            return Err(Error::Config("aurl_all is not supported in the sweep".into()));
        }
        Ok(())
    }

    pub fn encoder_for(&self, channels: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels: channels,
            ..self.encoder.clone()
        }
    }

    pub fn pretrain_for(&self, method: Method, seed: u64) -> Option<PretrainConfig> {
        let (variant, mixup) = method.pretraining()?;
        let mut c = self.pretrain.clone();
        c.variant = variant;
        c.seed = seed;
        c.augmentation.use_mixup = mixup;
        Some(c)
    }

    pub fn supervised_for(&self, method: Method, seed: u64) -> SupervisedConfig {
        let mut c = self.supervised.clone();
        c.seed = seed;
        c.augmentation = (method == Method::SupervisedAug).then(|| self.pretrain.augmentation.clone());
        c
    }

    pub fn probe_for(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            seed,
            ..self.probe.clone()
        }
    }

    /// Hash of everything that affects results (not `out_dir` or `deterministic`).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.deterministic = false;
        content_hash(&c)
    }
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_overrides_defaults() {
        let cfg = RunConfig::from_toml(
            "tasks = [\"swatter\"]\nseeds = [7]\n[pretrain]\nepochs = 3\n[pretrain.optimizer]\nlr = 0.1\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.tasks, vec![TaskId::Swatter]);
        assert_eq!(cfg.pretrain.epochs, 3);
        assert_eq!(cfg.pretrain.optimizer.lr, 0.1);
        assert_eq!(cfg.pretrain.batch_size, 128);
        cfg.validate().unwrap();
    }

    #[test]
    fn scale_override_wins() {
        let cfg = RunConfig::from_toml("scale = \"desk\"", Some(Scale::Paper)).unwrap();
        assert_eq!(cfg.scale, Scale::Paper);
        assert_eq!(cfg.pretrain.epochs, 1000);
        assert!(RunConfig::from_toml("scale = \"huge\"", None).is_err());
        assert!(RunConfig::from_toml("unknown_key = 1", None).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::for_scale(Scale::Desk);
        cfg.dataset.roots.insert(TaskId::Swatter, "/data/swatter".into());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap(), None).unwrap(), cfg);
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::for_scale(Scale::Desk);
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.deterministic = true;
        assert_eq!(a.config_hash(), b.config_hash());
        b.seeds = vec![9];
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn sweep_slices_checked() {
        let mut c = RunConfig::for_scale(Scale::Desk);
        c.validate().unwrap();
        c.sweep.slices = vec![50, 201];
        assert!(c.validate().is_err());
        c.sweep.slices = vec![100, 50];
        assert!(c.validate().is_err());
    }
}
