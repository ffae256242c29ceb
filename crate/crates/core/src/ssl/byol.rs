use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{mix_into, resize_crop_into, AugmentationConfig, CropParams};
use super::SpecSet;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamSet, Real, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainVariant {
    /// Two augmentations of one clip.
    Byol,
    /// Two repeats of one behavior, no augmentation.
    ByolAct,
    /// Two repeats of one behavior, each augmented.
    ByolAa,
    /// Plain pairing over the audio of every task.
    ByolAll,
}

impl PretrainVariant {
    pub const ALL: [PretrainVariant; 4] = [Self::Byol, Self::ByolAct, Self::ByolAa, Self::ByolAll];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Byol => "byol",
            Self::ByolAct => "byol_act",
            Self::ByolAa => "byol_aa",
            Self::ByolAll => "byol_all",
        }
    }

    pub fn pairs_repeats(self) -> bool {
        matches!(self, Self::ByolAct | Self::ByolAa)
    }
}

impl std::str::FromStr for PretrainVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown pretraining variant {s:?}")))
    }
}

/// `mean(2 − 2·⟨q̄, z̄⟩)` over rows. The target enters as a constant, so no
/// gradient reaches it.
pub fn byol_loss<T: Real>(g: &mut Graph<T>, online_pred: Var, target_proj: Var) -> Result<Var> {
    let q = g.l2_normalize(online_pred)?;
    let z = g.l2_normalize(target_proj)?;
    let cos = g.row_dot(q, z)?;
    let m = g.mean(cos);
    Ok(g.affine(m, -2.0, 2.0))
}

/// Loss value for plain `[N, D]` arrays, without a tape.
pub fn byol_loss_value(pred: &[f32], target: &[f32], dim: usize) -> f64 {
    let rows = pred.len() / dim.max(1);
    let mut total = 0.0;
    for (p, z) in pred.chunks(dim).zip(target.chunks(dim)) {
        let np = p.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
        let nz = z.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
        let dot: f64 = p.iter().zip(z).map(|(a, b)| *a as f64 * *b as f64).sum();
        total += 2.0 - 2.0 * dot / (np * nz);
    }
    total / rows.max(1) as f64
}

/// `target ← τ·target + (1 − τ)·online` over the target's tensors, which are
/// the leading entries of `online`. Buffers are averaged too.
pub fn ema_update<T: Real>(target: &mut ParamSet<T>, online: &ParamSet<T>, tau: f64) -> Result<()> {
    if target.len() > online.len() {
        return Err(Error::shape(
            "ema_update",
            format!("target has {} tensors, online only {}", target.len(), online.len()),
        ));
    }
    for i in 0..target.len() {
        if target.name(i) != online.name(i) || target.get(i).shape() != online.get(i).shape() {
            return Err(Error::shape(
                "ema_update",
                format!("{} {:?} vs {} {:?}", target.name(i), target.get(i).shape(), online.name(i), online.get(i).shape()),
            ));
        }
        let src = online.get(i).data();
        for (t, &o) in target.get_mut(i).data_mut().iter_mut().zip(src) {
            *t = T::from_f64(tau * t.to_f64() + (1.0 - tau) * o.to_f64());
        }
    }
    Ok(())
}

/// Items grouped by behavior, for repeat pairing.
#[derive(Debug, Clone)]
pub struct RepeatIndex {
    by_group: BTreeMap<u64, Vec<usize>>,
}

impl RepeatIndex {
    pub fn new(set: &SpecSet) -> Self {
        let mut by_group: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, &g) in set.groups.iter().enumerate() {
            by_group.entry(g).or_default().push(i);
        }
        Self { by_group }
    }

    pub fn min_group_size(&self) -> usize {
        self.by_group.values().map(Vec::len).min().unwrap_or(0)
    }

    /// A different repeat of the same behavior, chosen uniformly.
    pub fn partner<R: Rng>(&self, set: &SpecSet, i: usize, rng: &mut R) -> Result<usize> {
        let members = &self.by_group[&set.groups[i]];
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "behavior {} has a single repeat; repeat pairing needs at least two",
                set.groups[i]
            )));
        }
        let k = rng.gen_range(0..members.len() - 1);
        let pos = members.iter().position(|&m| m == i).expect("item indexed");
        Ok(members[if k >= pos { k + 1 } else { k }])
    }
}

/// Applies crop (and mixup when enabled) to one item.
fn augment_item<R: Rng>(set: &SpecSet, i: usize, aug: &AugmentationConfig, rng: &mut R, out: &mut [f32]) {
    let p = CropParams::sample(aug, rng);
    resize_crop_into(set.item(i), set.channels, set.n_mels, set.n_frames, p, out);
    if aug.use_mixup && set.len() > 1 {
        let j = rng.gen_range(0..set.len());
        let mut other = vec![0.0; set.item_len()];
        let p = CropParams::sample(aug, rng);
        resize_crop_into(set.item(j), set.channels, set.n_mels, set.n_frames, p, &mut other);
        let (lo, hi) = aug.mixup_alpha_range;
        let alpha = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        mix_into(out, &other, alpha);
    }
}

/// The two inputs BYOL compares for item `i`.
pub fn make_view_pair<R: Rng>(
    set: &SpecSet,
    index: &RepeatIndex,
    i: usize,
    variant: PretrainVariant,
    aug: &AugmentationConfig,
    rng: &mut R,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let n = set.item_len();
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    match variant {
        PretrainVariant::Byol | PretrainVariant::ByolAll => {
            augment_item(set, i, aug, rng, &mut a);
            augment_item(set, i, aug, rng, &mut b);
        }
        PretrainVariant::ByolAct => {
            let j = index.partner(set, i, rng)?;
            a.copy_from_slice(set.item(i));
            b.copy_from_slice(set.item(j));
        }
        PretrainVariant::ByolAa => {
            let j = index.partner(set, i, rng)?;
            augment_item(set, i, aug, rng, &mut a);
            augment_item(set, j, aug, rng, &mut b);
        }
    }
    Ok((a, b))
}
