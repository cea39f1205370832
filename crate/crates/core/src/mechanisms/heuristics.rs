//! Cost-quantile heuristics. Both run in linear time per arrival.

use super::{argmin_by, DynamicState, Recommendation, ScoreKind};
use crate::error::{Error, Result};
use crate::stochastic::standardize;

fn check_quantiles(state: &DynamicState, quantiles: &[f64]) -> Result<()> {
    if quantiles.len() != state.agents().len() {
        return Err(Error::DimensionMismatch {
            expected: state.agents().len(),
            actual: quantiles.len(),
        });
    }
    Ok(())
}

/// Weighted cost-quantile rule: minimise `λ·s_ij + (1 − λ)·q_ij` over available
/// agents, where `s_i` is the per-item standardized cost vector.
pub fn assign_weighted_cq(state: &DynamicState, costs: &[f64], quantiles: &[f64], lambda: f64) -> Result<Recommendation> {
    let available = state.check_arrival(costs)?;
    check_quantiles(state, quantiles)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let standardized = standardize(costs)?;
    let f = |j: usize| lambda * standardized[j] + (1.0 - lambda) * quantiles[j];
    let chosen = argmin_by(&available, f);
    let scores = state.scores(&available, f);
    Ok(state.recommendation("weighted_cq", chosen, ScoreKind::WeightedScore, scores))
}

/// Sequential cost-quantile rule: among the `t` cheapest available agents,
/// take the one with the lowest quantile.
///
/// Cost ties when forming the shortlist favour the lower agent index; quantile
/// ties favour the lower cost, then the lower index.
pub fn assign_sequential_cq(state: &DynamicState, costs: &[f64], quantiles: &[f64], t: usize) -> Result<Recommendation> {
    let mut available = state.check_arrival(costs)?;
    check_quantiles(state, quantiles)?;
    if t == 0 {
        return Err(Error::invalid("t must be a positive integer"));
    }
    let all = available.clone();
    // Stable sort keeps index order among equal costs.
    available.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
    let shortlist = &available[..t.min(available.len())];
    let chosen = *shortlist
        .iter()
        .min_by(|&&a, &&b| {
            quantiles[a]
                .total_cmp(&quantiles[b])
                .then(costs[a].total_cmp(&costs[b]))
                .then(a.cmp(&b))
        })
        .expect("shortlist is non-empty");
    let scores = state.scores(&all, |j| quantiles[j]);
    Ok(state.recommendation("sequential_cq", chosen, ScoreKind::Quantile, scores))
}
