//! Closeness losses over metric-space latents, their gradients with respect
//! to the latents, and the per-term distance sets that mining ranks.
//!
//! Two loss kinds exist. The instance form averages squared distances over
//! every unordered pair of latents, scaled by 1/k^2; the center form
//! averages squared distances to a center vector mu. With mu equal to the
//! latent mean the two coincide, which the test suites verify numerically.
//!
//! Throughout training mu is treated as a constant: gradients never flow
//! through it, and the finite-difference oracles hold it fixed the same way.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{GradientSet, MetricNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Pull every pair of mapped points together.
    InstanceCloseness,
    /// Pull every mapped point toward the current center.
    CenterCloseness,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::InstanceCloseness => write!(f, "instance"),
            LossKind::CenterCloseness => write!(f, "center"),
        }
    }
}

/// Which pairs the instance-kind validation loss sums over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairConvention {
    /// All unordered pairs of distinct rows, matching training batches.
    DistinctUnordered,
    /// All ordered pairs including self-pairs (which contribute zero);
    /// exactly twice the distinct-unordered sum.
    OrderedWithSelf,
}

/// Squared Euclidean distance between two equal-length vectors.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// All unordered pairs (i, j) with i < j < k, in lexicographic order.
/// This ordering defines the term indices of pair-based distance sets.
pub fn unordered_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Instance closeness loss: (1/k^2) * sum over unordered pairs of the
/// squared latent distance.
pub fn instance_loss(latents: &Matrix) -> Result<f64> {
    let k = latents.rows();
    if k == 0 {
        return Err(Error::EmptyBatch("instance loss of zero latents".into()));
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            sum += squared_distance(latents.row(i), latents.row(j));
        }
    }
    Ok(sum / (k * k) as f64)
}

/// Center closeness loss: (1/k) * sum of squared distances to `mu`.
pub fn center_loss(latents: &Matrix, mu: &[f64]) -> Result<f64> {
    let k = latents.rows();
    if k == 0 {
        return Err(Error::EmptyBatch("center loss of zero latents".into()));
    }
    if mu.len() != latents.cols() {
        return Err(Error::ShapeMismatch(format!(
            "center has {} entries, latents have {} columns",
            mu.len(),
            latents.cols()
        )));
    }
    let sum: f64 = latents.iter_rows().map(|r| squared_distance(r, mu)).sum();
    Ok(sum / k as f64)
}

/// Maps `m` through the network and returns the mean latent: the center
/// used for distillation, center-kind distances, and scoring.
pub fn latent_center(net: &MetricNet, m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::EmptyBatch("center of zero instances".into()));
    }
    net.forward_batch(m)?.col_mean()
}

/// How the entries of a [`DistanceSet`] were produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceProvenance {
    /// One term per unordered latent pair, in `unordered_pairs` order.
    PairBased,
    /// One term per latent row, distance to the center.
    CenterBased,
}

/// The per-term squared distances of one mini-batch, in canonical term
/// order. Term index t refers to the t-th unordered pair (pair-based) or
/// the t-th row (center-based); mining selections and loss-term subsets
/// use the same indexing.
#[derive(Clone, Debug)]
pub struct DistanceSet {
    values: Vec<f64>,
    provenance: DistanceProvenance,
}

impl DistanceSet {
    /// Builds the distance terms the combined loss is made of: pair
    /// distances for the instance kind, center distances for the center
    /// kind. A single-row batch under the instance kind yields an empty
    /// set (there is no pair to form).
    pub fn for_batch(kind: LossKind, latents: &Matrix, mu: &[f64]) -> Result<Self> {
        let k = latents.rows();
        if k == 0 {
            return Err(Error::EmptyBatch("distance terms of zero latents".into()));
        }
        let (values, provenance) = match kind {
            LossKind::InstanceCloseness => {
                let mut v = Vec::with_capacity(k * (k - 1) / 2);
                for i in 0..k {
                    for j in (i + 1)..k {
                        v.push(squared_distance(latents.row(i), latents.row(j)));
                    }
                }
                (v, DistanceProvenance::PairBased)
            }
            LossKind::CenterCloseness => {
                if mu.len() != latents.cols() {
                    return Err(Error::ShapeMismatch(format!(
                        "center has {} entries, latents have {} columns",
                        mu.len(),
                        latents.cols()
                    )));
                }
                let v = latents.iter_rows().map(|r| squared_distance(r, mu)).collect();
                (v, DistanceProvenance::CenterBased)
            }
        };
        let set = DistanceSet { values, provenance };
        if !set.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite distance term".into()));
        }
        Ok(set)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> DistanceProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_selection(selected: &[usize], n_terms: usize, what: &str) -> Result<()> {
    if selected.is_empty() {
        return Err(Error::EmptySelection(format!("no {what} terms selected")));
    }
    for w in selected.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidSelection(
                "selection indices must be strictly increasing".into(),
            ));
        }
    }
    let last = *selected.last().expect("selection checked nonempty");
    if last >= n_terms {
        return Err(Error::InvalidSelection(format!(
            "selection index {last} out of range for {n_terms} {what} terms"
        )));
    }
    Ok(())
}

/// Mini-batch training loss restricted to the selected terms, plus its
/// gradient with respect to each latent row.
///
/// The loss is the mean of the selected squared-distance terms. `selected`
/// holds strictly increasing term indices in the canonical order of
/// [`DistanceSet::for_batch`]. `mu` enters center-kind terms as a constant;
/// no gradient flows through it. Rows touching no selected term get a zero
/// gradient row.
pub fn loss_and_upstream(
    kind: LossKind,
    latents: &Matrix,
    mu: &[f64],
    selected: &[usize],
) -> Result<(f64, Matrix)> {
    let k = latents.rows();
    if k == 0 {
        return Err(Error::EmptyBatch("loss of zero latents".into()));
    }
    let mut upstream = Matrix::zeros(k, latents.cols());
    let mut sum = 0.0;
    match kind {
        LossKind::InstanceCloseness => {
            let pairs = unordered_pairs(k);
            check_selection(selected, pairs.len(), "pair")?;
            let scale = 2.0 / selected.len() as f64;
            for &t in selected {
                let (i, j) = pairs[t];
                sum += squared_distance(latents.row(i), latents.row(j));
                for q in 0..latents.cols() {
                    let g = scale * (latents.row(i)[q] - latents.row(j)[q]);
                    upstream.row_mut(i)[q] += g;
                    upstream.row_mut(j)[q] -= g;
                }
            }
        }
        LossKind::CenterCloseness => {
            if mu.len() != latents.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "center has {} entries, latents have {} columns",
                    mu.len(),
                    latents.cols()
                )));
            }
            check_selection(selected, k, "instance")?;
            let scale = 2.0 / selected.len() as f64;
            for &t in selected {
                sum += squared_distance(latents.row(t), mu);
                for (q, &mu_q) in mu.iter().enumerate() {
                    upstream.row_mut(t)[q] = scale * (latents.row(t)[q] - mu_q);
                }
            }
        }
    }
    Ok((sum / selected.len() as f64, upstream))
}

/// Frobenius weight-decay term: (lambda/2) * sum of squared weight entries
/// over all layers. Biases are not decayed.
pub fn weight_decay_term(net: &MetricNet, lambda: f64) -> f64 {
    let frob: f64 = net
        .layers()
        .iter()
        .map(|l| l.weights().as_slice().iter().map(|w| w * w).sum::<f64>())
        .sum();
    0.5 * lambda * frob
}

/// Full mini-batch objective: raw selected-term loss plus weight decay.
pub fn regularized_loss(raw_loss: f64, net: &MetricNet, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "weight decay must be nonnegative, got {lambda}"
        )));
    }
    Ok(raw_loss + weight_decay_term(net, lambda))
}

/// Adds the weight-decay gradient lambda*W to `grads` in place. Bias
/// gradients are left untouched.
pub fn add_weight_decay(grads: &mut GradientSet, net: &MetricNet, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (dw, layer) in grads.d_weights.iter_mut().zip(net.layers()) {
        for (g, &w) in dw.as_mut_slice().iter_mut().zip(layer.weights().as_slice()) {
            *g += lambda * w;
        }
    }
}

/// Validation loss: the sum (not mean) of squared-distance terms over the
/// validation rows, using the same term structure as training. For the
/// instance kind the pair set follows `convention`; for the center kind
/// each row contributes its squared distance to `mu`.
pub fn validation_loss(
    kind: LossKind,
    net: &MetricNet,
    validation: &Matrix,
    mu: &[f64],
    convention: PairConvention,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::EmptyBatch("validation loss of zero rows".into()));
    }
    let latents = net.forward_batch(validation)?;
    let k = latents.rows();
    let sum = match kind {
        LossKind::InstanceCloseness => {
            let mut s = 0.0;
            for i in 0..k {
                for j in (i + 1)..k {
                    s += squared_distance(latents.row(i), latents.row(j));
                }
            }
            match convention {
                PairConvention::DistinctUnordered => s,
                PairConvention::OrderedWithSelf => 2.0 * s,
            }
        }
        LossKind::CenterCloseness => {
            if mu.len() != latents.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "center has {} entries, latents have {} columns",
                    mu.len(),
                    latents.cols()
                )));
            }
            latents.iter_rows().map(|r| squared_distance(r, mu)).sum()
        }
    };
    if !sum.is_finite() {
        return Err(Error::Numeric("non-finite validation loss".into()));
    }
    Ok(sum)
}
