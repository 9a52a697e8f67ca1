//! Anomaly scoring against a trained metric network.
//!
//! A scorer maps a point into metric space and measures how far it lands
//! from the normal data. Center scoring compares against a single stored
//! center vector, so each score costs one forward pass plus one distance:
//! constant in the size of the data the scorer was built over. Dissimilarity
//! scoring averages squared distances to every stored retrieval latent and
//! costs one distance per stored row; it equals the center score plus a
//! constant that does not depend on the scored point, so both produce the
//! same ranking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::squared_distance;
use crate::matrix::Matrix;
use crate::net::{squash_counted, MetricNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Score is the squared distance to the stored center. Theta(1) per
    /// score; the scorer keeps only the center (metric_dim reals).
    Center,
    /// Score is the mean squared distance to every stored retrieval latent.
    /// Theta(|M|) per score.
    Dissimilarity,
}

impl std::fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoringMode::Center => write!(f, "center"),
            ScoringMode::Dissimilarity => write!(f, "dissimilarity"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    net: MetricNet,
    mu: Vec<f64>,
    retrieval: Option<Matrix>,
    mode: ScoringMode,
}

/// Builds a scorer over the reference data `m` (the training partition
/// after the validation split). Center mode accumulates the latent mean
/// row by row and stores nothing else; dissimilarity mode additionally
/// stores every mapped row.
pub fn build_scorer(net: MetricNet, m: &Matrix, mode: ScoringMode) -> Result<Scorer> {
    if m.is_empty() {
        return Err(Error::EmptyBatch("building a scorer over zero instances".into()));
    }
    match mode {
        ScoringMode::Center => {
            let mut mu = vec![0.0; net.output_dim()];
            for i in 0..m.rows() {
                let latent = net.forward(m.row(i))?;
                for (a, v) in mu.iter_mut().zip(&latent) {
                    *a += v;
                }
            }
            for a in &mut mu {
                *a /= m.rows() as f64;
            }
            Ok(Scorer { net, mu, retrieval: None, mode })
        }
        ScoringMode::Dissimilarity => {
            let retrieval = net.forward_batch(m)?;
            let mu = retrieval.col_mean()?;
            Ok(Scorer { net, mu, retrieval: Some(retrieval), mode })
        }
    }
}

impl Scorer {
    /// Reassembles a scorer from stored parts (e.g. a loaded model file).
    /// When retrieval latents are present their row mean must agree with
    /// `mu` to within 1e-12 relative.
    pub fn from_parts(
        net: MetricNet,
        mu: Vec<f64>,
        retrieval: Option<Matrix>,
        mode: ScoringMode,
    ) -> Result<Self> {
        if mu.len() != net.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "center has {} entries, network maps into {} dimensions",
                mu.len(),
                net.output_dim()
            )));
        }
        if let Some(r) = &retrieval {
            if r.cols() != net.output_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "retrieval latents have {} columns, network maps into {}",
                    r.cols(),
                    net.output_dim()
                )));
            }
            let mean = r.col_mean()?;
            for (a, b) in mean.iter().zip(&mu) {
                let diff = (a - b).abs();
                if diff > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidConfig(
                        "stored center disagrees with the retrieval latent mean".into(),
                    ));
                }
            }
        } else if mode == ScoringMode::Dissimilarity {
            return Err(Error::Mode(
                "dissimilarity mode needs retrieval latents".into(),
            ));
        }
        Ok(Scorer { net, mu, retrieval, mode })
    }

    /// Returns the scorer with its active mode switched. Switching to
    /// dissimilarity requires stored retrieval latents.
    pub fn with_mode(self, mode: ScoringMode) -> Result<Self> {
        if mode == ScoringMode::Dissimilarity && self.retrieval.is_none() {
            return Err(Error::Mode(
                "dissimilarity mode needs retrieval latents, but this scorer stored none".into(),
            ));
        }
        Ok(Scorer { mode, ..self })
    }

    pub fn mode(&self) -> ScoringMode {
        self.mode
    }

    pub fn net(&self) -> &MetricNet {
        &self.net
    }

    pub fn center(&self) -> &[f64] {
        &self.mu
    }

    pub fn retrieval(&self) -> Option<&Matrix> {
        self.retrieval.as_ref()
    }

    /// Squared metric-space distance from `x` to the center.
    pub fn score_center(&self, x: &[f64]) -> Result<f64> {
        let latent = self.net.forward(x)?;
        Ok(squared_distance(&latent, &self.mu))
    }

    /// Same value as [`score_center`](Self::score_center), computed while
    /// counting every floating-point operation. The count depends only on
    /// the network architecture, never on how much data built the scorer.
    pub fn score_center_counted(&self, x: &[f64]) -> Result<(f64, u64)> {
        if x.len() != self.net.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.net.input_dim()
            )));
        }
        let mut ops: u64 = 0;
        let mut cur = x.to_vec();
        for layer in self.net.layers() {
            let mut next = vec![0.0; layer.out_dim()];
            for (r, slot) in next.iter_mut().enumerate() {
                let mut z = layer.bias()[r];
                for (w, v) in layer.weights().row(r).iter().zip(&cur) {
                    z += w * v;
                    ops += 2;
                }
                *slot = squash_counted(z, &mut ops);
            }
            cur = next;
        }
        let mut score = 0.0;
        for (a, b) in cur.iter().zip(&self.mu) {
            let d = a - b;
            score += d * d;
            ops += 3;
        }
        Ok((score, ops))
    }

    /// Mean squared metric-space distance from `x` to every retrieval
    /// latent. Errors when the scorer holds none.
    pub fn score_dissimilarity(&self, x: &[f64]) -> Result<f64> {
        let retrieval = self.retrieval.as_ref().ok_or_else(|| {
            Error::Mode("scorer was built without retrieval latents".into())
        })?;
        let latent = self.net.forward(x)?;
        let sum: f64 = retrieval.iter_rows().map(|r| squared_distance(&latent, r)).sum();
        Ok(sum / retrieval.rows() as f64)
    }

    /// Scores `x` with the scorer's own mode.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self.mode {
            ScoringMode::Center => self.score_center(x),
            ScoringMode::Dissimilarity => self.score_dissimilarity(x),
        }
    }

    /// Scores every row of `m` with the scorer's own mode.
    pub fn score_all(&self, m: &Matrix) -> Result<Vec<f64>> {
        (0..m.rows()).map(|i| self.score(m.row(i))).collect()
    }
}

/// Anomaly decision at threshold `tau`: anomalous iff the score strictly
/// exceeds it. A score exactly at the threshold is normal.
pub fn decide(score: f64, tau: f64) -> bool {
    score > tau
}
