use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{HistoricalPool, QuantileTable};

/// Length of a feature vector for `n_agents` agents: `2n′` base features plus
/// every unordered pair of them.
pub fn feature_count(n_agents: usize) -> usize {
    let base = 2 * n_agents;
    base + base * (base.saturating_sub(1)) / 2
}

/// Costs by agent, then quantiles by agent, then the products of every pair
/// `(a, b)` of those base features with `a < b`, in lexicographic order.
/// Squares are not included.
pub fn feature_vector(costs: &[f64], quantiles: &[f64]) -> Result<Vec<f64>> {
    if costs.len() != quantiles.len() {
        return Err(Error::DimensionMismatch {
            expected: costs.len(),
            actual: quantiles.len(),
        });
    }
    let mut out = Vec::with_capacity(feature_count(costs.len()));
    out.extend_from_slice(costs);
    out.extend_from_slice(quantiles);
    let base = out.len();
    for a in 0..base {
        for b in a + 1..base {
            out.push(out[a] * out[b]);
        }
    }
    Ok(out)
}

/// Per-feature centring and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl FeatureScaling {
    /// Mean and population standard deviation of each feature over the
    /// historical pool. Constant features get scale 1.
    pub fn from_pool(pool: &HistoricalPool, quantiles: &QuantileTable) -> Result<Self> {
        let rows = pool
            .vectors()
            .iter()
            .map(|v| feature_vector(v, &quantiles.quantile_vector(v)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::fit(&rows))
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut means = vec![0.0; p];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut scales = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in scales.iter_mut().zip(r).zip(&means) {
                *s += (v - m).powi(2);
            }
        }
        for s in &mut scales {
            let sd = (*s / n).sqrt();
            *s = if sd > 1e-12 && sd.is_finite() { sd } else { 1.0 };
        }
        Self { means, scales }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}
