use super::config::{Method, RunConfig};
use super::data::PreparedDataset;
use super::experiment::fit_method;
use super::metrics::eval_mse;
use super::pipeline::SweepRow;
use crate::error::{Error, Result};

/// One (slice, method) entry: trains on the first `slice` training
/// behaviors (by id) and evaluates on the full test split.
pub fn sweep_cell(ds: &PreparedDataset, slice: usize, method: Method, cfg: &RunConfig, seed: u64) -> Result<SweepRow> {
    if method == Method::AurlAll {
        return Err(Error::Config("aurl_all is not supported in the sweep".into()));
    }
    let train = ds.train_slice(slice)?;
    let fit = fit_method(ds, &train, method, cfg, seed)?;
    let mse = eval_mse(&fit.model, ds)?;
    Ok(SweepRow {
        task: ds.task(),
        slice,
        method,
        seed,
        n_train_records: train.len(),
        n_test: mse.n_test,
        mse_raw: mse.mse_raw,
        mse_normalized: mse.mse_normalized,
    })
}

/// Rows for every slice and method, slices in the given order.
pub fn low_data_sweep(
    ds: &PreparedDataset,
    slices: &[usize],
    methods: &[Method],
    cfg: &RunConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if let Some(&s) = slices.iter().find(|&&s| s > ds.manifest.split.train.len()) {
        return Err(Error::Config(format!(
            "slice of {s} behaviors exceeds the {} training behaviors",
            ds.manifest.split.train.len()
        )));
    }
    let mut rows = Vec::new();
    for &slice in slices {
        for &method in methods {
            rows.push(sweep_cell(ds, slice, method, cfg, seed)?);
        }
    }
    Ok(rows)
}
