//! Dynamic assignment rules.
//!
//! Every rule looks only at the committed [`DynamicState`], the arriving
//! item's cost vector and (for the simulation rules) the historical pool.
//! None of them mutate the state: the caller commits the chosen agent.

mod heuristics;
mod simulation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::{self, AgentPool, Assignment};
use crate::predictor::{self, Ensemble};
use crate::stochastic::{HistoricalPool, QuantileTable};

pub use heuristics::{assign_sequential_cq, assign_weighted_cq};
pub use simulation::{assign_approx_min_risk, assign_min_risk, Simulation, EXHAUSTIVE_MAX_FUTURES};
pub(crate) use simulation::{approx_min_risk_with, for_each_future, min_risk_with};

pub const DEFAULT_MIN_RISK_DRAWS: usize = 1_000;
pub const DEFAULT_APPROX_DRAWS: usize = 5_000;

/// How simulated futures are generated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `m` independent draws with replacement from the pool.
    #[default]
    MonteCarlo,
    /// Every ordered sequence of pool vectors, each with equal weight. Only
    /// practical for tiny pools and horizons.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    Greedy,
    MinRisk { m: usize },
    ApproxMinRisk { m: usize },
    WeightedCq { lambda: f64 },
    SequentialCq { t: usize },
    Predicted,
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Greedy => "greedy",
            Mechanism::MinRisk { .. } => "min_risk",
            Mechanism::ApproxMinRisk { .. } => "approx_min_risk",
            Mechanism::WeightedCq { .. } => "weighted_cq",
            Mechanism::SequentialCq { .. } => "sequential_cq",
            Mechanism::Predicted => "predicted",
        }
    }

    /// The tuning parameter rendered as `name=value`, empty when there is none.
    pub fn parameter(&self) -> String {
        match self {
            Mechanism::MinRisk { m } | Mechanism::ApproxMinRisk { m } => format!("m={m}"),
            Mechanism::WeightedCq { lambda } => format!("lambda={lambda}"),
            Mechanism::SequentialCq { t } => format!("t={t}"),
            Mechanism::Greedy | Mechanism::Predicted => String::new(),
        }
    }

    pub fn is_simulation(&self) -> bool {
        matches!(self, Mechanism::MinRisk { .. } | Mechanism::ApproxMinRisk { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    #[serde(flatten)]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl MechanismConfig {
    pub fn new(mechanism: Mechanism, seed: u64) -> Self {
        Self {
            mechanism,
            seed,
            sampling: Sampling::MonteCarlo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mechanism {
            Mechanism::MinRisk { m } | Mechanism::ApproxMinRisk { m } if m == 0 => {
                Err(Error::invalid("simulation mechanisms need m >= 1"))
            }
            Mechanism::WeightedCq { lambda } if !(0.0..=1.0).contains(&lambda) => {
                Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")))
            }
            Mechanism::SequentialCq { t } if t == 0 => Err(Error::invalid("t must be a positive integer")),
            _ => Ok(()),
        }
    }

    /// Mechanism name plus parameter, e.g. `min_risk(m=1000)`.
    pub fn label(&self) -> String {
        let p = self.mechanism.parameter();
        if p.is_empty() {
            self.mechanism.name().to_string()
        } else {
            format!("{}({p})", self.mechanism.name())
        }
    }

    pub(crate) fn simulation(&self, draws: usize) -> Simulation {
        Simulation {
            draws,
            seed: self.seed,
            sampling: self.sampling,
        }
    }
}

/// What the numbers in [`Recommendation::per_agent`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// The arrival's own cost `c_ij`.
    Cost,
    /// Mean simulated total cost `σ̄_j` with agent `j` fixed.
    MeanTotalCost,
    /// Share of draws in which agent `j` received the item.
    VoteShare,
    /// Weighted standardized-cost / quantile score `f_ij`.
    WeightedScore,
    /// Cost quantile `q_ij`.
    Quantile,
    /// Ensemble probability that `j` is the item's optimal agent.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub agent: usize,
    pub agent_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub mechanism: String,
    pub chosen: usize,
    pub chosen_agent: String,
    pub score_kind: ScoreKind,
    /// One entry per available agent, in agent order.
    pub per_agent: Vec<AgentScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_loss: Option<f64>,
    pub draws_used: usize,
}

impl Recommendation {
    pub fn score_of(&self, agent: usize) -> Option<f64> {
        self.per_agent.iter().find(|s| s.agent == agent).map(|s| s.score)
    }
}

/// A committed assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub ordinal: usize,
    pub item_id: String,
    pub agent: usize,
    pub agent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<Recommendation>,
}

/// Remaining capacities and the append-only list of committed assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicState {
    agents: AgentPool,
    horizon: usize,
    remaining: Vec<u32>,
    history: Vec<Commit>,
}

impl DynamicState {
    /// A fresh state for `horizon` arrivals. Fails when capacity is short.
    pub fn new(agents: AgentPool, horizon: usize) -> Result<Self> {
        if agents.total_capacity() < horizon as u64 {
            return Err(Error::infeasible(format!(
                "total capacity {} cannot hold {horizon} arrivals",
                agents.total_capacity()
            )));
        }
        let remaining = agents.capacities().to_vec();
        Ok(Self {
            agents,
            horizon,
            remaining,
            history: Vec::new(),
        })
    }

    pub fn agents(&self) -> &AgentPool {
        &self.agents
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn remaining(&self) -> &[u32] {
        &self.remaining
    }

    pub fn history(&self) -> &[Commit] {
        &self.history
    }

    pub fn is_closed(&self) -> bool {
        self.history.len() >= self.horizon
    }

    /// 1-based ordinal of the next arrival.
    pub fn next_ordinal(&self) -> usize {
        self.history.len() + 1
    }

    /// Arrivals still to come after the current one (`n − i`).
    pub fn future_count(&self) -> usize {
        self.horizon.saturating_sub(self.history.len() + 1)
    }

    pub fn is_available(&self, agent: usize) -> bool {
        self.remaining.get(agent).is_some_and(|&z| z > 0)
    }

    pub fn available(&self) -> Vec<usize> {
        (0..self.remaining.len()).filter(|&j| self.remaining[j] > 0).collect()
    }

    pub fn committed_to(&self, agent: usize) -> u32 {
        self.agents.capacities()[agent] - self.remaining[agent]
    }

    pub fn commit(&mut self, item_id: impl Into<String>, agent: usize, recommendation: Option<Recommendation>) -> Result<&Commit> {
        if self.is_closed() {
            return Err(Error::invalid("all declared arrivals have already been assigned"));
        }
        if agent >= self.remaining.len() {
            return Err(Error::UnknownAgent(agent.to_string()));
        }
        if self.remaining[agent] == 0 {
            return Err(Error::infeasible(format!(
                "agent `{}` has no remaining capacity",
                self.agents.id(agent)
            )));
        }
        self.remaining[agent] -= 1;
        self.history.push(Commit {
            ordinal: self.history.len() + 1,
            item_id: item_id.into(),
            agent,
            agent_id: self.agents.id(agent).to_string(),
            recommendation,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// A copy in which the given agents have no capacity left. The horizon
    /// shrinks when the remaining agents cannot hold every declared arrival.
    pub fn without_agents(&self, excluded: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        for &j in excluded {
            if j >= out.remaining.len() {
                return Err(Error::UnknownAgent(j.to_string()));
            }
            out.remaining[j] = 0;
        }
        let left: u64 = out.remaining.iter().map(|&z| u64::from(z)).sum();
        out.horizon = out.horizon.min(out.history.len() + left as usize);
        Ok(out)
    }

    pub(crate) fn check_arrival(&self, costs: &[f64]) -> Result<Vec<usize>> {
        if self.is_closed() {
            return Err(Error::invalid("session horizon already reached"));
        }
        if costs.len() != self.agents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.agents.len(),
                actual: costs.len(),
            });
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("arrival cost vector has non-finite entries"));
        }
        let available = self.available();
        if available.is_empty() {
            return Err(Error::NoCapacity);
        }
        Ok(available)
    }

    pub(crate) fn scores(&self, agents: &[usize], score: impl Fn(usize) -> f64) -> Vec<AgentScore> {
        agents
            .iter()
            .map(|&j| AgentScore {
                agent: j,
                agent_id: self.agents.id(j).to_string(),
                score: score(j),
                stderr: None,
            })
            .collect()
    }

    pub(crate) fn recommendation(
        &self,
        mechanism: &str,
        chosen: usize,
        score_kind: ScoreKind,
        per_agent: Vec<AgentScore>,
    ) -> Recommendation {
        Recommendation {
            mechanism: mechanism.to_string(),
            chosen,
            chosen_agent: self.agents.id(chosen).to_string(),
            score_kind,
            per_agent,
            expected_loss: None,
            draws_used: 0,
        }
    }
}

/// Lowest-scoring candidate; ties go to the earliest entry.
pub(crate) fn argmin_by(candidates: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &j in &candidates[1..] {
        let s = score(j);
        if s < best_score {
            best = j;
            best_score = s;
        }
    }
    best
}

/// Myopic rule: the cheapest agent that still has capacity.
pub fn assign_greedy(state: &DynamicState, costs: &[f64]) -> Result<Recommendation> {
    let available = state.check_arrival(costs)?;
    let chosen = argmin_by(&available, |j| costs[j]);
    let scores = state.scores(&available, |j| costs[j]);
    Ok(state.recommendation("greedy", chosen, ScoreKind::Cost, scores))
}

/// Static optimum for a fully observed cohort: the benchmark no dynamic rule
/// can beat.
pub fn static_optimal_assign(cohort: &[Vec<f64>], agents: &AgentPool) -> Result<Assignment> {
    let (matrix, _) = lap::expand_capacity(cohort, agents)?;
    lap::solve(&matrix)
}

/// Agent index for each item of a static optimal assignment.
pub fn static_optimal_agents(cohort: &[Vec<f64>], agents: &AgentPool) -> Result<(Vec<usize>, f64)> {
    let (matrix, unit_to_agent) = lap::expand_capacity(cohort, agents)?;
    let assignment = lap::solve(&matrix)?;
    let chosen = assignment.columns().iter().map(|&u| unit_to_agent[u]).collect();
    Ok((chosen, assignment.total_cost()))
}

/// Everything a mechanism may consult besides the state and the arrival.
#[derive(Debug, Clone, Copy)]
pub struct MechanismContext<'a> {
    pub pool: &'a HistoricalPool,
    pub quantiles: &'a QuantileTable,
    pub ensemble: Option<&'a Ensemble>,
}

/// Dispatches to the configured rule.
pub fn recommend(
    state: &DynamicState,
    costs: &[f64],
    ctx: &MechanismContext<'_>,
    config: &MechanismConfig,
) -> Result<Recommendation> {
    config.validate()?;
    match config.mechanism {
        Mechanism::Greedy => assign_greedy(state, costs),
        Mechanism::MinRisk { m } => assign_min_risk(state, costs, ctx.pool, &config.simulation(m)),
        Mechanism::ApproxMinRisk { m } => assign_approx_min_risk(state, costs, ctx.pool, &config.simulation(m)),
        Mechanism::WeightedCq { lambda } => {
            let q = ctx.quantiles.quantile_vector(costs)?;
            assign_weighted_cq(state, costs, &q, lambda)
        }
        Mechanism::SequentialCq { t } => {
            let q = ctx.quantiles.quantile_vector(costs)?;
            assign_sequential_cq(state, costs, &q, t)
        }
        Mechanism::Predicted => {
            let ensemble = ctx
                .ensemble
                .ok_or_else(|| Error::invalid("predicted mechanism needs a trained ensemble"))?;
            let q = ctx.quantiles.quantile_vector(costs)?;
            predictor::assign_predicted(state, costs, &q, ensemble)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(caps: Vec<u32>, horizon: usize) -> DynamicState {
        DynamicState::new(AgentPool::numbered(caps), horizon).unwrap()
    }

    #[test]
    fn greedy_picks_cheapest() {
        let s = state(vec![1, 1, 1], 3);
        assert_eq!(assign_greedy(&s, &[0.5, 0.2, 0.9]).unwrap().chosen, 1);
    }

    #[test]
    fn greedy_skips_exhausted() {
        let mut s = state(vec![1, 1, 1], 3);
        s.commit("a", 1, None).unwrap();
        let r = assign_greedy(&s, &[0.5, 0.2, 0.9]).unwrap();
        assert_eq!(r.chosen, 0);
        assert_eq!(r.per_agent.len(), 2);
    }

    #[test]
    fn greedy_single_agent_left() {
        let mut s = state(vec![1, 1], 2);
        s.commit("a", 0, None).unwrap();
        assert_eq!(assign_greedy(&s, &[0.0, 0.9]).unwrap().chosen, 1);
    }

    #[test]
    fn greedy_ties_go_low() {
        let s = state(vec![1, 1, 1], 3);
        assert_eq!(assign_greedy(&s, &[0.3, 0.2, 0.2]).unwrap().chosen, 1);
    }

    #[test]
    fn commit_errors() {
        let mut s = state(vec![1, 2], 2);
        s.commit("a", 0, None).unwrap();
        assert!(matches!(s.commit("b", 0, None), Err(Error::Infeasible(_))));
        assert!(matches!(s.commit("b", 5, None), Err(Error::UnknownAgent(_))));
        s.commit("b", 1, None).unwrap();
        assert!(s.is_closed());
        assert!(s.commit("c", 1, None).is_err());
        assert_eq!(s.committed_to(1), 1);
        assert_eq!(s.remaining(), &[0, 1]);
    }

    #[test]
    fn without_agents_leaves_original() {
        let mut s = state(vec![1, 2, 1], 4);
        s.commit("a", 1, None).unwrap();
        let w = s.without_agents(&[1]).unwrap();
        assert_eq!(w.remaining(), &[1, 0, 1]);
        assert_eq!(w.horizon(), 3);
        assert_eq!(s.remaining(), &[1, 1, 1]);
        assert!(s.without_agents(&[7]).is_err());
    }

    #[test]
    fn state_rejects_short_capacity() {
        assert!(matches!(
            DynamicState::new(AgentPool::numbered(vec![1, 1]), 3),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn arrival_validation() {
        let s = state(vec![1, 1], 2);
        assert!(matches!(
            assign_greedy(&s, &[0.1]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(assign_greedy(&s, &[0.1, f64::INFINITY]).is_err());
        let mut empty = DynamicState::new(AgentPool::numbered(vec![1, 0]), 1).unwrap();
        empty.commit("x", 0, None).unwrap();
        assert!(assign_greedy(&empty, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn static_optimal_examples() {
        let agents = AgentPool::numbered(vec![1, 1]);
        let a = static_optimal_assign(&[vec![1.0, 2.0], vec![2.0, 4.0]], &agents).unwrap();
        assert_eq!(a.total_cost(), 4.0);
        let (chosen, total) = static_optimal_agents(&[vec![0.7, 0.1]], &AgentPool::numbered(vec![2, 2])).unwrap();
        assert_eq!(chosen, vec![1]);
        assert_eq!(total, 0.1);
    }

    #[test]
    fn config_validation_and_labels() {
        assert!(MechanismConfig::new(Mechanism::MinRisk { m: 0 }, 1).validate().is_err());
        assert!(MechanismConfig::new(Mechanism::WeightedCq { lambda: 1.5 }, 1).validate().is_err());
        assert!(MechanismConfig::new(Mechanism::SequentialCq { t: 0 }, 1).validate().is_err());
        let c = MechanismConfig::new(Mechanism::WeightedCq { lambda: 0.2 }, 1);
        assert_eq!(c.label(), "weighted_cq(lambda=0.2)");
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"kind":"weighted_cq","lambda":0.2,"seed":1,"sampling":"monte_carlo"}"#);
        let back: MechanismConfig = serde_json::from_str(r#"{"kind":"min_risk","m":10}"#).unwrap();
        assert_eq!(back.mechanism, Mechanism::MinRisk { m: 10 });
    }
}
