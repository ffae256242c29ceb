use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::PreparedDataset;
use crate::align::{dtw_distance, fit_normalization, normalized_score, NormalizationStats};
use crate::dsp::{amplitude_envelope, condition, Envelope, ENVELOPE_FRAME};
use crate::error::{Error, Result};
use crate::models::{ActionNormalizer, PolicyModel};
use crate::synth::{simulate, splitmix64, ActionParams};

const REFERENCE_TAG: u64 = 0x4454_5752_4546;
const ROLLOUT_TAG: u64 = 0x524f_4c4c_4f55;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseResult {
    pub mse_raw: f64,
    pub mse_normalized: f64,
    pub n_test: usize,
}

/// Mean squared L2 error in raw units and in the normalizer's space.
pub fn mse_of(preds: &[ActionParams], truths: &[ActionParams], normalizer: &ActionNormalizer) -> Result<MseResult> {
    if truths.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty test split".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::shape("mse", format!("{} predictions for {} targets", preds.len(), truths.len())));
    }
    let n = truths.len() as f64;
    let mut raw = 0.0;
    let mut norm = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        raw += p.squared_distance(t);
        let (pn, tn) = (normalizer.normalize(p), normalizer.normalize(t));
        norm += pn.iter().zip(&tn).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let out = MseResult {
        mse_raw: raw / n,
        mse_normalized: norm / n,
        n_test: truths.len(),
    };
    if !(out.mse_raw.is_finite() && out.mse_normalized.is_finite()) {
        return Err(Error::NonFinite(format!("mse {out:?}")));
    }
    Ok(out)
}

fn check_task(model: &PolicyModel, ds: &PreparedDataset) -> Result<()> {
    if model.task != ds.task() {
        return Err(Error::invalid(format!(
            "model was trained for {}, dataset is {}",
            model.task,
            ds.task()
        )));
    }
    Ok(())
}

/// Predictions for every test record, in split order.
pub fn predict_test(model: &PolicyModel, ds: &PreparedDataset) -> Result<Vec<ActionParams>> {
    check_task(model, ds)?;
    let truths = ds.actions(&ds.test);
    model.predict_specs(&ds.raw_specs(&ds.test), Some(&truths))
}

pub fn eval_mse(model: &PolicyModel, ds: &PreparedDataset) -> Result<MseResult> {
    let preds = predict_test(model, ds)?;
    mse_of(&preds, &ds.actions(&ds.test), &model.normalizer)
}

/// Envelope of a rendered clip, computed the same way as for recorded clips.
pub fn rollout_envelope(ds: &PreparedDataset, action: &ActionParams, seed: u64) -> Result<Envelope> {
    let clip = simulate(ds.task(), action, seed, ds.manifest.noise_level)?;
    amplitude_envelope(&condition(&clip)?, ENVELOPE_FRAME)
}

fn desired(ds: &PreparedDataset, record: usize) -> Result<&Envelope> {
    ds.envelopes[record]
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("record {record} has no envelope")))
}

/// DTW distances between each desired test clip and re-simulations of its
/// true action, pooled into one normalization per task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwReference {
    pub stats: NormalizationStats,
    pub repeats: usize,
    pub seed: u64,
}

pub fn dtw_reference(ds: &PreparedDataset, repeats: usize, seed: u64) -> Result<DtwReference> {
    let jobs: Vec<(usize, usize)> = ds.test.iter().flat_map(|&i| (0..repeats).map(move |r| (i, r))).collect();
    let distances: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let rec = &ds.manifest.records[i];
            let s = splitmix64(seed ^ REFERENCE_TAG ^ splitmix64(rec.seed ^ r as u64));
            let env = rollout_envelope(ds, &rec.action, s)?;
            Ok(dtw_distance(desired(ds, i)?, &env)?.distance)
        })
        .collect::<Result<_>>()?;
    Ok(DtwReference {
        stats: fit_normalization(&distances)?,
        repeats,
        seed,
    })
}

/// Normalized DTW score of each test record when `actions[k]` is executed
/// for test record `k`. Rollout seeds depend only on the record, so methods
/// are compared on the same noise.
pub fn rollout_scores(ds: &PreparedDataset, actions: &[ActionParams], reference: &DtwReference) -> Result<Vec<f64>> {
    if actions.len() != ds.test.len() {
        return Err(Error::shape("rollout", format!("{} actions for {} test records", actions.len(), ds.test.len())));
    }
    ds.test
        .par_iter()
        .zip(actions)
        .map(|(&i, a)| {
            let rec = &ds.manifest.records[i];
            let s = splitmix64(reference.seed ^ ROLLOUT_TAG ^ splitmix64(rec.seed));
            let env = rollout_envelope(ds, a, s)?;
            Ok(normalized_score(dtw_distance(desired(ds, i)?, &env)?.distance, &reference.stats))
        })
        .collect()
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty test split".into()));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mean normalized DTW between desired clips and rollouts of the model's predictions.
pub fn eval_dtw_rollout(model: &PolicyModel, ds: &PreparedDataset, reference: &DtwReference) -> Result<f64> {
    let preds = predict_test(model, ds)?;
    mean(&rollout_scores(ds, &preds, reference)?)
}

/// The same score for the true actions, which is centred by construction.
pub fn ground_truth_dtw(ds: &PreparedDataset, reference: &DtwReference) -> Result<f64> {
    mean(&rollout_scores(ds, &ds.actions(&ds.test), reference)?)
}
