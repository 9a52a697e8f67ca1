//! Self-supervised data distillation and online hard normal mining.
//!
//! Both are rank selections over squared distances. Distillation keeps the
//! fraction rho_n of training instances whose latents sit closest to the
//! current center, bounding each epoch's processed elements; mining keeps
//! the fraction rho_h of a mini-batch's largest distance terms so updates
//! concentrate on the hardest in-distribution points.
//!
//! Selection counts use round-half-up with a floor of one: K = max(1,
//! floor(rho*N + 0.5)). Ties rank by ascending original index, so every
//! selection is deterministic.

use crate::error::{Error, Result};
use crate::losses::{latent_center, squared_distance, DistanceSet};
use crate::matrix::Matrix;
use crate::net::MetricNet;

/// K = max(1, round-half-up(rho * n)) for rho in (0, 1].
pub fn selection_count(rho: f64, n: usize) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "selection fraction must lie in (0, 1], got {rho}"
        )));
    }
    if n == 0 {
        return Err(Error::EmptySelection("selecting from zero elements".into()));
    }
    Ok(((rho * n as f64 + 0.5).floor() as usize).max(1))
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in ranked selection".into()));
    }
    Ok(())
}

/// Indices of all values ranked ascending by (value, original index).
fn rank_ascending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// The k smallest values, ascending. Ties keep the earliest occurrences.
pub fn smallest_k(values: &[f64], k: usize) -> Result<Vec<f64>> {
    Ok(smallest_k_indices(values, k)?.iter().map(|&i| values[i]).collect())
}

/// The k largest values, descending. Ties keep the earliest occurrences.
pub fn largest_k(values: &[f64], k: usize) -> Result<Vec<f64>> {
    Ok(largest_k_indices(values, k)?.iter().map(|&i| values[i]).collect())
}

/// Original indices of the k smallest values, in ascending rank order.
pub fn smallest_k_indices(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::InvalidSelection(format!(
            "asked for {k} of {} values",
            values.len()
        )));
    }
    check_finite(values)?;
    let mut idx = rank_ascending(values);
    idx.truncate(k);
    Ok(idx)
}

/// Original indices of the k largest values, in descending rank order.
/// Among equal values, lower original indices win a slot first.
pub fn largest_k_indices(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::InvalidSelection(format!(
            "asked for {k} of {} values",
            values.len()
        )));
    }
    check_finite(values)?;
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// The distilled subset of one epoch: row indices into the source matrix,
/// the distance threshold that admitted them, and the epoch stamp the
/// training loop assigns.
#[derive(Clone, Debug, PartialEq)]
pub struct DistilledSet {
    /// Ascending row indices of the kept instances.
    pub indices: Vec<usize>,
    /// Largest squared center distance among the kept instances.
    pub tau_n: f64,
    /// Which epoch selected this set; 0 until the training loop stamps it.
    pub epoch: usize,
}

/// Rank core of distillation: keep the fraction rho_n of smallest squared
/// center distances. Returns ascending indices and the admission threshold.
pub fn distill_from_distances(sq_distances: &[f64], rho_n: f64) -> Result<(Vec<usize>, f64)> {
    let k = selection_count(rho_n, sq_distances.len())?;
    let ranked = smallest_k_indices(sq_distances, k)?;
    let tau_n = sq_distances[*ranked.last().expect("k >= 1 by construction")];
    let mut indices = ranked;
    indices.sort_unstable();
    Ok((indices, tau_n))
}

/// Distills `m` under the current network: maps every row to metric space,
/// measures squared distances to the latent center, and keeps the closest
/// fraction rho_n.
pub fn distill(net: &MetricNet, m: &Matrix, rho_n: f64) -> Result<DistilledSet> {
    if m.is_empty() {
        return Err(Error::EmptyBatch("distilling zero instances".into()));
    }
    let mu = latent_center(net, m)?;
    let latents = net.forward_batch(m)?;
    let sq: Vec<f64> = latents.iter_rows().map(|r| squared_distance(r, &mu)).collect();
    let (indices, tau_n) = distill_from_distances(&sq, rho_n)?;
    Ok(DistilledSet { indices, tau_n, epoch: 0 })
}

/// The hard terms mined from one mini-batch: ascending term indices into
/// the batch's [`DistanceSet`] and the smallest distance that still counted
/// as hard.
#[derive(Clone, Debug, PartialEq)]
pub struct MinedSelection {
    /// Ascending indices of the kept terms.
    pub kept: Vec<usize>,
    /// Smallest squared distance among the kept terms.
    pub tau_h: f64,
}

/// Keeps the fraction rho_h of the largest distance terms.
pub fn mine(distances: &DistanceSet, rho_h: f64) -> Result<MinedSelection> {
    if distances.is_empty() {
        return Err(Error::EmptySelection("mining an empty distance set".into()));
    }
    let k = selection_count(rho_h, distances.len())?;
    let ranked = largest_k_indices(distances.values(), k)?;
    let tau_h = distances.values()[*ranked.last().expect("k >= 1 by construction")];
    let mut kept = ranked;
    kept.sort_unstable();
    Ok(MinedSelection { kept, tau_h })
}
