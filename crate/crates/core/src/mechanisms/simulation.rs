//! Simulation-based minimum-risk rules.
//!
//! For draw `r` the future arrivals `S_i^r` are sampled from the historical
//! pool through the stream `(seed, i, r)`. The exact rule fixes the arrival
//! on each available agent `j` and solves the remainder:
//! `σ_rj = c_ij + Ψ^r_{i+1}(z − e_j)`. The approximate rule solves one
//! assignment per draw with the arrival included and votes on where it lands.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DynamicState, Recommendation, Sampling, ScoreKind};
use crate::error::{Error, Result};
use crate::lap::solve_capacitated;
use crate::stochastic::{draw_set, DrawStream, HistoricalPool};

/// Upper bound on enumerated futures in [`Sampling::Exhaustive`] mode.
pub const EXHAUSTIVE_MAX_FUTURES: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Simulation {
    /// Draw count `m`; ignored in exhaustive mode.
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl Simulation {
    pub fn monte_carlo(draws: usize, seed: u64) -> Self {
        Self {
            draws,
            seed,
            sampling: Sampling::MonteCarlo,
        }
    }

    pub fn exhaustive() -> Self {
        Self {
            draws: 0,
            seed: 0,
            sampling: Sampling::Exhaustive,
        }
    }
}

/// Number of futures the simulation will evaluate for `simulated` unseen items.
pub(crate) fn draw_count(sim: &Simulation, pool_len: usize, simulated: usize) -> Result<usize> {
    match sim.sampling {
        Sampling::MonteCarlo => {
            if sim.draws == 0 {
                return Err(Error::invalid("simulation needs at least one draw"));
            }
            Ok(sim.draws)
        }
        Sampling::Exhaustive => {
            let exp = u32::try_from(simulated).unwrap_or(u32::MAX);
            match (pool_len as u64).checked_pow(exp) {
                Some(n) if n <= EXHAUSTIVE_MAX_FUTURES => Ok(n as usize),
                _ => Err(Error::GuardExceeded(format!(
                    "exhaustive mode would enumerate {pool_len}^{simulated} futures"
                ))),
            }
        }
    }
}

/// Evaluates `f` on every simulated future, in draw order.
///
/// Draws are evaluated in parallel; the returned vector is indexed by `r`, so
/// any reduction over it is independent of thread scheduling.
pub(crate) fn for_each_future<T, F>(
    pool: &HistoricalPool,
    sim: &Simulation,
    item_index: u64,
    simulated: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[&[f64]]) -> Result<T> + Sync,
{
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let count = draw_count(sim, pool.len(), simulated)?;
    (0..count)
        .into_par_iter()
        .map(|r| {
            let future = match sim.sampling {
                Sampling::MonteCarlo => draw_set(pool, simulated, DrawStream::new(sim.seed, item_index, r as u64))?,
                Sampling::Exhaustive => {
                    // Base-|pool| digits of r, most significant first.
                    let mut digits = vec![0usize; simulated];
                    let mut rest = r;
                    for d in digits.iter_mut().rev() {
                        *d = rest % pool.len();
                        rest /= pool.len();
                    }
                    digits.into_iter().map(|k| pool.vector(k)).collect()
                }
            };
            f(&future)
        })
        .collect()
}

fn check_horizon(state: &DynamicState, pool: &HistoricalPool, items_after: usize) -> Result<()> {
    if pool.n_agents() != state.agents().len() {
        return Err(Error::DimensionMismatch {
            expected: state.agents().len(),
            actual: pool.n_agents(),
        });
    }
    let capacity: u64 = state.remaining().iter().map(|&z| u64::from(z)).sum();
    if capacity < items_after as u64 + 1 {
        return Err(Error::infeasible(format!(
            "{capacity} remaining capacity units cannot hold the arrival plus {items_after} later items"
        )));
    }
    Ok(())
}

/// Exact minimum-risk rule.
///
/// Chooses the available agent with the lowest mean simulated total cost
/// `σ̄_j`, ties to the lowest agent index. The expected-loss estimate reuses
/// the same draws: `R̂ = σ̄_k − mean_r Ψ_i^r`, where `Ψ_i^r = min_j σ_rj` is the
/// optimum over the arrival together with the draw.
pub fn assign_min_risk(
    state: &DynamicState,
    costs: &[f64],
    pool: &HistoricalPool,
    sim: &Simulation,
) -> Result<Recommendation> {
    min_risk_with(state, costs, &[], state.future_count(), pool, sim, state.next_ordinal() as u64)
}

/// [`assign_min_risk`] with some later items already observed (batch arrivals).
///
/// `observed` are the cost vectors of later items in the same batch;
/// `simulated` more are drawn from the pool per future.
pub(crate) fn min_risk_with(
    state: &DynamicState,
    costs: &[f64],
    observed: &[&[f64]],
    simulated: usize,
    pool: &HistoricalPool,
    sim: &Simulation,
    item_index: u64,
) -> Result<Recommendation> {
    let available = state.check_arrival(costs)?;
    check_horizon(state, pool, observed.len() + simulated)?;
    let remaining = state.remaining();

    let per_draw = for_each_future(pool, sim, item_index, simulated, |drawn| {
        let rows: Vec<&[f64]> = observed.iter().copied().chain(drawn.iter().copied()).collect();
        let solution = solve_capacitated(&rows, remaining)?;
        let without_unit = solution.unit_removal_totals(&rows, remaining);
        available
            .iter()
            .map(|&j| {
                without_unit[j]
                    .map(|rest| costs[j] + rest)
                    .ok_or_else(|| Error::infeasible("fixing the arrival leaves too little capacity"))
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let m = per_draw.len();
    let k = available.len();
    let mut sums = vec![0.0; k];
    let mut sq_sums = vec![0.0; k];
    let mut best_sum = 0.0;
    for sigma in &per_draw {
        let mut best = f64::INFINITY;
        for (a, &s) in sigma.iter().enumerate() {
            sums[a] += s;
            sq_sums[a] += s * s;
            best = best.min(s);
        }
        best_sum += best;
    }
    let means: Vec<f64> = sums.iter().map(|s| s / m as f64).collect();
    let stderr = |a: usize| -> Option<f64> {
        if sim.sampling == Sampling::Exhaustive || m < 2 {
            return None;
        }
        let var = (sq_sums[a] - sums[a] * sums[a] / m as f64) / (m as f64 - 1.0);
        Some((var.max(0.0) / m as f64).sqrt())
    };

    let mut chosen_pos = 0;
    for a in 1..k {
        if means[a] < means[chosen_pos] {
            chosen_pos = a;
        }
    }
    let chosen = available[chosen_pos];
    let mut mean_by_agent = vec![f64::NAN; state.agents().len()];
    for (a, &j) in available.iter().enumerate() {
        mean_by_agent[j] = means[a];
    }
    let mut per_agent = state.scores(&available, |j| mean_by_agent[j]);
    for (a, score) in per_agent.iter_mut().enumerate() {
        score.stderr = stderr(a);
    }
    let mut rec = state.recommendation("min_risk", chosen, ScoreKind::MeanTotalCost, per_agent);
    rec.expected_loss = Some(means[chosen_pos] - best_sum / m as f64);
    rec.draws_used = m;
    Ok(rec)
}

/// Approximate minimum-risk rule: the modal agent that the arrival receives in
/// the per-draw optimal assignment.
///
/// Ties among modal agents go to the one whose winning draws have the lower
/// mean total assignment cost, then to the lowest agent index.
pub fn assign_approx_min_risk(
    state: &DynamicState,
    costs: &[f64],
    pool: &HistoricalPool,
    sim: &Simulation,
) -> Result<Recommendation> {
    approx_min_risk_with(state, costs, &[], state.future_count(), pool, sim, state.next_ordinal() as u64)
}

pub(crate) fn approx_min_risk_with(
    state: &DynamicState,
    costs: &[f64],
    observed: &[&[f64]],
    simulated: usize,
    pool: &HistoricalPool,
    sim: &Simulation,
    item_index: u64,
) -> Result<Recommendation> {
    let available = state.check_arrival(costs)?;
    check_horizon(state, pool, observed.len() + simulated)?;
    let remaining = state.remaining();

    let per_draw = for_each_future(pool, sim, item_index, simulated, |drawn| {
        let mut rows: Vec<&[f64]> = Vec::with_capacity(1 + observed.len() + drawn.len());
        rows.push(costs);
        rows.extend_from_slice(observed);
        rows.extend_from_slice(drawn);
        let solution = solve_capacitated(&rows, remaining)?;
        Ok((solution.agent_of()[0], solution.total_cost()))
    })?;

    let n_agents = state.agents().len();
    let mut votes = vec![0usize; n_agents];
    let mut winning_totals = vec![0.0; n_agents];
    for &(agent, total) in &per_draw {
        votes[agent] += 1;
        winning_totals[agent] += total;
    }
    let m = per_draw.len();
    let mut chosen = available[0];
    for &j in &available[1..] {
        let better = votes[j] > votes[chosen]
            || (votes[j] == votes[chosen]
                && votes[j] > 0
                && winning_totals[j] / (votes[j] as f64) < winning_totals[chosen] / (votes[chosen] as f64));
        if better {
            chosen = j;
        }
    }
    let mut per_agent = state.scores(&available, |j| votes[j] as f64 / m as f64);
    if sim.sampling == Sampling::MonteCarlo && m > 1 {
        for s in &mut per_agent {
            s.stderr = Some((s.score * (1.0 - s.score) / m as f64).sqrt());
        }
    }
    let mut rec = state.recommendation("approx_min_risk", chosen, ScoreKind::VoteShare, per_agent);
    rec.draws_used = m;
    Ok(rec)
}
