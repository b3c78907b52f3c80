//! Monte Carlo cross-validation and error metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Labels below this are left out of MAPE.
pub const MAPE_MIN_LABEL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    pub rmse: f64,
}

/// Metrics over `(prediction, label)` pairs.
pub fn metrics(pairs: &[(f64, f64)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let rmse = (pairs.iter().map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n).sqrt();
    let pct: Vec<f64> = pairs
        .iter()
        .filter(|(_, y)| y.abs() >= MAPE_MIN_LABEL)
        .map(|(p, y)| ((p - y) / y).abs() * 100.0)
        .collect();
    let mape = if pct.is_empty() { 0.0 } else { pct.iter().sum::<f64>() / pct.len() as f64 };
    Ok(Metrics { mae, mape, rmse })
}

/// Train and test indices of one Monte Carlo repeat. The training part has
/// `round(n * train_fraction)` samples.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64, repeat: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InsufficientData(format!(
            "cannot split {n} samples with train fraction {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64 + 1);
    idx.shuffle(&mut rng);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Repeats a random train/test split `repeats` times and averages each
/// metric. `fit_predict(train, test)` returns one `(prediction, label)` per
/// test sample; it may return several groups of pairs (for example one per
/// tree), and metrics are reported per group.
pub fn cross_validate<F>(
    n: usize,
    repeats: usize,
    train_fraction: f64,
    seed: u64,
    fit_predict: F,
) -> Result<Vec<Metrics>>
where
    F: Fn(&[usize], &[usize]) -> Result<Vec<Vec<(f64, f64)>>> + Sync,
{
    if n < 10 {
        return Err(Error::InsufficientData(format!("{n} samples; cross-validation needs at least 10")));
    }
    if repeats == 0 {
        return Err(Error::Input("zero cross-validation repeats".into()));
    }
    let per_repeat: Vec<Vec<Metrics>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let (train, test) = split_indices(n, train_fraction, seed, r)?;
            fit_predict(&train, &test)?.iter().map(|g| metrics(g)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let groups = per_repeat[0].len();
    let mut out = vec![Metrics::default(); groups];
    for rep in &per_repeat {
        if rep.len() != groups {
            return Err(Error::Input("fit_predict returned a varying number of groups".into()));
        }
        for (acc, m) in out.iter_mut().zip(rep) {
            acc.mae += m.mae;
            acc.mape += m.mape;
            acc.rmse += m.rmse;
        }
    }
    let k = repeats as f64;
    for m in &mut out {
        m.mae /= k;
        m.mape /= k;
        m.rmse /= k;
    }
    Ok(out)
}
