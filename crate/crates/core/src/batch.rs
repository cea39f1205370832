//! Batch arrivals.
//!
//! Items sometimes arrive in groups whose cost vectors are all observed before
//! any of them is assigned. The approximate rule still assigns one item at a
//! time in arrival order, but each draw's future set holds the later in-batch
//! vectors as observed plus simulated vectors for items after the batch. The
//! exact rule enumerates joint agent tuples for the whole batch and is only
//! usable on small instances.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::solve_capacitated;
use crate::mechanisms::{
    approx_min_risk_with, for_each_future, min_risk_with, DynamicState, Mechanism, MechanismConfig, Recommendation,
    ScoreKind,
};
use crate::stochastic::HistoricalPool;

/// Largest batch the exact rule will enumerate.
pub const EXACT_MAX_BATCH: usize = 4;
/// Largest number of remaining capacity units the exact rule accepts.
pub const EXACT_MAX_UNITS: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub item_id: String,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub group: usize,
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Splits an arrival sequence into maximal runs of equal batch ids.
pub fn batch_ranges<T: PartialEq>(batch_ids: &[T]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=batch_ids.len() {
        if i == batch_ids.len() || batch_ids[i] != batch_ids[start] {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn check_batch(state: &DynamicState, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("batch has no items"));
    }
    let left = state.horizon() - state.history().len();
    if batch.len() > left {
        return Err(Error::invalid(format!(
            "batch of {} items exceeds the {left} arrivals left in the horizon",
            batch.len()
        )));
    }
    Ok(())
}

/// Assigns and commits every item of the batch in arrival order with the
/// configured min-risk or approximate min-risk rule.
pub fn assign_batch_approx(
    state: &mut DynamicState,
    batch: &Batch,
    pool: &HistoricalPool,
    config: &MechanismConfig,
) -> Result<Vec<Recommendation>> {
    config.validate()?;
    check_batch(state, batch)?;
    let last_ordinal = state.next_ordinal() + batch.len() - 1;
    let simulated = state.horizon() - last_ordinal;
    let mut out = Vec::with_capacity(batch.len());
    for (k, item) in batch.items.iter().enumerate() {
        let observed: Vec<&[f64]> = batch.items[k + 1..].iter().map(|b| b.costs.as_slice()).collect();
        let ordinal = state.next_ordinal() as u64;
        let rec = match config.mechanism {
            Mechanism::MinRisk { m } => {
                min_risk_with(state, &item.costs, &observed, simulated, pool, &config.simulation(m), ordinal)?
            }
            Mechanism::ApproxMinRisk { m } => {
                approx_min_risk_with(state, &item.costs, &observed, simulated, pool, &config.simulation(m), ordinal)?
            }
            other => {
                return Err(Error::invalid(format!(
                    "batch assignment needs a simulation mechanism, got {}",
                    other.name()
                )))
            }
        };
        state.commit(item.item_id.clone(), rec.chosen, Some(rec.clone()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Every agent tuple for `len` items that respects `remaining`, in
/// lexicographic order.
fn feasible_tuples(remaining: &[u32], len: usize) -> Vec<Vec<usize>> {
    fn extend(remaining: &mut [u32], tuple: &mut Vec<usize>, len: usize, out: &mut Vec<Vec<usize>>) {
        if tuple.len() == len {
            out.push(tuple.clone());
            return;
        }
        for j in 0..remaining.len() {
            if remaining[j] > 0 {
                remaining[j] -= 1;
                tuple.push(j);
                extend(remaining, tuple, len, out);
                tuple.pop();
                remaining[j] += 1;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut remaining.to_vec(), &mut Vec::with_capacity(len), len, &mut out);
    out
}

/// Joint minimum-risk assignment of a small batch.
///
/// For each draw `r` and each feasible agent tuple `φ`, the objective is
/// `Σ_d c_{d φ_d} + Ψ^r(z − counts(φ))`, with `Ψ^r` the optimum over the
/// simulated post-batch items. The tuple with the lowest mean objective is
/// committed; ties go to the lexicographically smallest tuple. Each item's
/// per-agent score is the best mean objective among tuples that send it to
/// that agent. The first recommendation carries the batch's expected loss.
pub fn assign_batch_exact(
    state: &mut DynamicState,
    batch: &Batch,
    pool: &HistoricalPool,
    config: &MechanismConfig,
) -> Result<Vec<Recommendation>> {
    config.validate()?;
    check_batch(state, batch)?;
    let Mechanism::MinRisk { m } = config.mechanism else {
        return Err(Error::invalid("exact batch assignment is configured through min_risk"));
    };
    if batch.len() > EXACT_MAX_BATCH {
        return Err(Error::GuardExceeded(format!(
            "exact batch assignment enumerates at most {EXACT_MAX_BATCH} items, got {}",
            batch.len()
        )));
    }
    let units: u64 = state.remaining().iter().map(|&z| u64::from(z)).sum();
    if units > EXACT_MAX_UNITS {
        return Err(Error::GuardExceeded(format!(
            "exact batch assignment accepts at most {EXACT_MAX_UNITS} remaining capacity units, got {units}"
        )));
    }
    for item in &batch.items {
        state.check_arrival(&item.costs)?;
    }
    if pool.n_agents() != state.agents().len() {
        return Err(Error::DimensionMismatch {
            expected: state.agents().len(),
            actual: pool.n_agents(),
        });
    }
    let first_ordinal = state.next_ordinal();
    let simulated = state.horizon() - (first_ordinal + batch.len() - 1);
    if units < (batch.len() + simulated) as u64 {
        return Err(Error::infeasible(format!(
            "{units} remaining capacity units cannot hold the batch plus {simulated} later items"
        )));
    }

    let n_agents = state.agents().len();
    let tuples = feasible_tuples(state.remaining(), batch.len());
    let immediate: Vec<f64> = tuples
        .iter()
        .map(|t| t.iter().enumerate().map(|(d, &j)| batch.items[d].costs[j]).sum())
        .collect();
    // Tuples sharing an agent count vector share the continuation problem.
    let mut residuals: Vec<Vec<u32>> = Vec::new();
    let residual_of: Vec<usize> = tuples
        .iter()
        .map(|t| {
            let mut z = state.remaining().to_vec();
            for &j in t {
                z[j] -= 1;
            }
            match residuals.iter().position(|r| *r == z) {
                Some(p) => p,
                None => {
                    residuals.push(z);
                    residuals.len() - 1
                }
            }
        })
        .collect();

    let sim = config.simulation(m);
    let per_draw = for_each_future(pool, &sim, first_ordinal as u64, simulated, |drawn| {
        let psi = residuals
            .iter()
            .map(|z| Ok(solve_capacitated(drawn, z)?.total_cost()))
            .collect::<Result<Vec<f64>>>()?;
        Ok((0..tuples.len())
            .map(|t| immediate[t] + psi[residual_of[t]])
            .collect::<Vec<f64>>())
    })?;

    let draws = per_draw.len();
    let mut means = vec![0.0; tuples.len()];
    let mut best_per_draw = 0.0;
    for objective in &per_draw {
        for (mean, &v) in means.iter_mut().zip(objective) {
            *mean += v;
        }
        best_per_draw += objective.iter().copied().fold(f64::INFINITY, f64::min);
    }
    means.iter_mut().for_each(|v| *v /= draws as f64);
    let mut best = 0;
    for t in 1..tuples.len() {
        if means[t] < means[best] {
            best = t;
        }
    }
    let expected_loss = means[best] - best_per_draw / draws as f64;

    let mut out = Vec::with_capacity(batch.len());
    for (d, item) in batch.items.iter().enumerate() {
        let mut by_agent = vec![f64::INFINITY; n_agents];
        for (t, tuple) in tuples.iter().enumerate() {
            let j = tuple[d];
            by_agent[j] = by_agent[j].min(means[t]);
        }
        let candidates: Vec<usize> = (0..n_agents).filter(|&j| by_agent[j].is_finite()).collect();
        let chosen = tuples[best][d];
        let mut rec =
            state.recommendation("batch_exact", chosen, ScoreKind::MeanTotalCost, state.scores(&candidates, |j| by_agent[j]));
        rec.draws_used = draws;
        if d == 0 {
            rec.expected_loss = Some(expected_loss);
        }
        state.commit(item.item_id.clone(), chosen, Some(rec.clone()))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lap::AgentPool;
    use crate::mechanisms::{assign_min_risk, Sampling};

    fn pool(vectors: Vec<Vec<f64>>) -> HistoricalPool {
        let ids = (1..=vectors[0].len()).map(|j| j.to_string()).collect();
        HistoricalPool::new(ids, vectors).unwrap()
    }

    fn batch(vectors: &[&[f64]]) -> Batch {
        Batch {
            group: 0,
            items: vectors
                .iter()
                .enumerate()
                .map(|(k, v)| BatchItem {
                    item_id: format!("b{k}"),
                    costs: v.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn ranges() {
        assert_eq!(batch_ranges(&["a", "a", "b", "c", "c"]), vec![0..2, 2..3, 3..5]);
        assert_eq!(batch_ranges::<u8>(&[]), Vec::<Range<usize>>::new());
    }

    #[test]
    fn tuples_respect_capacity() {
        let t = feasible_tuples(&[1, 2], 2);
        assert_eq!(t, vec![vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn two_item_batch_uses_second_vector() {
        // Jointly: (1→1, 2→2) costs 1.0 and (1→2, 2→1) costs 0.7.
        let p = pool(vec![vec![0.5, 0.5]]);
        let b = batch(&[&[0.1, 0.5], &[0.2, 0.9]]);
        let config = MechanismConfig::new(Mechanism::MinRisk { m: 10 }, 1);
        let mut s = DynamicState::new(AgentPool::numbered(vec![1, 1]), 2).unwrap();
        let recs = assign_batch_approx(&mut s, &b, &p, &config).unwrap();
        assert_eq!(recs[0].chosen, 1);
        assert_eq!(recs[1].chosen, 0);

        let mut s = DynamicState::new(AgentPool::numbered(vec![1, 1]), 2).unwrap();
        let recs = assign_batch_exact(&mut s, &b, &p, &config).unwrap();
        assert_eq!(recs[0].chosen, 1);
        assert_eq!(recs[1].chosen, 0);
        assert!((recs[0].score_of(1).unwrap() - 0.7).abs() < 1e-12);
        assert!((recs[0].score_of(0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(recs[0].expected_loss, Some(0.0));
    }

    #[test]
    fn singleton_batch_matches_min_risk() {
        let p = pool(vec![vec![0.2, 0.6, 0.4], vec![0.7, 0.1, 0.3], vec![0.5, 0.5, 0.0]]);
        let agents = AgentPool::numbered(vec![2, 1, 2]);
        let config = MechanismConfig::new(Mechanism::MinRisk { m: 64 }, 17);
        let c = [0.3, 0.2, 0.6];
        let mut s = DynamicState::new(agents.clone(), 4).unwrap();
        let direct = assign_min_risk(&s, &c, &p, &config.simulation(64)).unwrap();
        let recs = assign_batch_approx(&mut s, &batch(&[&c]), &p, &config).unwrap();
        assert_eq!(recs[0], direct);

        let exact = MechanismConfig {
            sampling: Sampling::Exhaustive,
            ..config
        };
        let mut s = DynamicState::new(agents, 3).unwrap();
        let direct = assign_min_risk(&s, &c, &p, &exact.simulation(0)).unwrap();
        let recs = assign_batch_exact(&mut s, &batch(&[&c]), &p, &exact).unwrap();
        assert_eq!(recs[0].chosen, direct.chosen);
        for a in &direct.per_agent {
            assert!((recs[0].score_of(a.agent).unwrap() - a.score).abs() < 1e-12);
        }
    }

    #[test]
    fn guards() {
        let p = pool(vec![vec![0.1, 0.2]]);
        let config = MechanismConfig::new(Mechanism::MinRisk { m: 4 }, 1);
        let mut s = DynamicState::new(AgentPool::numbered(vec![5, 5]), 5).unwrap();
        let b = batch(&[&[0.1, 0.2][..]; 5]);
        assert!(matches!(assign_batch_exact(&mut s, &b, &p, &config), Err(Error::GuardExceeded(_))));
        let b = batch(&[&[0.1, 0.2]]);
        assert!(matches!(assign_batch_exact(&mut s, &b, &p, &config), Err(Error::GuardExceeded(_))));
        let greedy = MechanismConfig::new(Mechanism::Greedy, 1);
        assert!(assign_batch_approx(&mut s, &b, &p, &greedy).is_err());
        assert!(s.history().is_empty());
    }
}
