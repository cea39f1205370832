//! Prediction-based assignment.
//!
//! Simulated cohorts are drawn from the historical pool and solved as static
//! assignment problems. Each item's optimal agent becomes a label, and one
//! lasso-logistic model per agent learns `Pr(agent j is optimal | c, q)`.
//! Models from `runs` independent simulations are averaged into an
//! [`Ensemble`], which then routes each arrival to the available agent with
//! the highest predicted probability.

mod codec;
mod features;
mod lasso;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::{self, AgentPool};
use crate::mechanisms::{argmin_by, DynamicState, Recommendation, ScoreKind};
use crate::stochastic::{self, mix_seed, namespace_seed, DrawStream, HistoricalPool, QuantileTable};

pub use codec::{decode_ensemble, encode_ensemble, summary, ENSEMBLE_MAGIC, ENSEMBLE_VERSION};
pub use features::{feature_count, feature_vector, FeatureScaling};
pub use lasso::{
    fit_at_penalty, fit_lasso_logistic, lambda_max, penalty_grid, sigmoid, LassoOptions, LogisticModel, ModelKind,
};

/// Raw (unscaled) features and optimal-agent labels for one simulated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// How many items each agent received in the static optimum.
    pub fn label_counts(&self, n_agents: usize) -> Vec<usize> {
        let mut counts = vec![0; n_agents];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Draws `n` vectors from the pool, solves the capacitated static problem and
/// labels each drawn item with its optimal agent.
pub fn simulate_training_run(
    pool: &HistoricalPool,
    quantiles: &QuantileTable,
    agents: &AgentPool,
    n: usize,
    stream: DrawStream,
) -> Result<TrainingSet> {
    if pool.n_agents() != agents.len() {
        return Err(Error::DimensionMismatch {
            expected: agents.len(),
            actual: pool.n_agents(),
        });
    }
    if agents.total_capacity() < n as u64 {
        return Err(Error::infeasible(format!(
            "total capacity {} cannot hold {n} simulated items",
            agents.total_capacity()
        )));
    }
    let rows = stochastic::draw_set(pool, n, stream)?;
    let solution = lap::solve_capacitated(&rows, agents.capacities())?;
    let features = rows
        .iter()
        .map(|v| feature_vector(v, &quantiles.quantile_vector(v)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet {
        features,
        labels: solution.agent_of().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Number of simulated cohorts (`m`).
    pub runs: usize,
    /// Items per simulated cohort (`n`).
    pub horizon: usize,
    pub seed: u64,
    pub lasso: LassoOptions,
}

impl EnsembleConfig {
    pub fn new(runs: usize, horizon: usize, seed: u64) -> Self {
        Self {
            runs,
            horizon,
            seed,
            lasso: LassoOptions::default(),
        }
    }
}

/// Per-agent model lists plus the feature scaling they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub agent_ids: Vec<String>,
    pub config: EnsembleConfig,
    pub scaling: FeatureScaling,
    /// `models[j][r]`: agent `j`, run `r`.
    pub models: Vec<Vec<LogisticModel>>,
}

impl Ensemble {
    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn runs(&self) -> usize {
        self.models.first().map_or(0, Vec::len)
    }

    /// Averaged probability per agent. Values need not sum to one.
    pub fn predict(&self, costs: &[f64], quantiles: &[f64]) -> Result<Vec<f64>> {
        if costs.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: self.n_agents(),
                actual: costs.len(),
            });
        }
        let x = self.scaling.apply(&feature_vector(costs, quantiles)?);
        Ok(self
            .models
            .iter()
            .map(|runs| runs.iter().map(|m| m.predict(&x)).sum::<f64>() / runs.len() as f64)
            .collect())
    }

    /// Number of constant-fallback models per agent.
    pub fn constant_counts(&self) -> Vec<usize> {
        self.models
            .iter()
            .map(|runs| runs.iter().filter(|m| m.kind == ModelKind::Constant).count())
            .collect()
    }
}

/// Fits one agent's model on a run, or the smoothed constant when the agent's
/// positive rate falls below `1 / (10 n′)`.
fn fit_agent(x: &[Vec<f64>], labels: &[usize], agent: usize, n_agents: usize, opts: &LassoOptions) -> LogisticModel {
    let y: Vec<f64> = labels.iter().map(|&l| if l == agent { 1.0 } else { 0.0 }).collect();
    let positives = labels.iter().filter(|&&l| l == agent).count();
    let rate = positives as f64 / labels.len().max(1) as f64;
    if rate < 1.0 / (10.0 * n_agents as f64) {
        return LogisticModel::constant(positives, labels.len());
    }
    fit_lasso_logistic(x, &y, opts)
}

pub fn train_ensemble(pool: &HistoricalPool, agents: &AgentPool, config: &EnsembleConfig) -> Result<Ensemble> {
    if config.runs == 0 {
        return Err(Error::invalid("ensemble needs at least one run"));
    }
    if config.horizon == 0 {
        return Err(Error::invalid("simulated cohorts need at least one item"));
    }
    let quantiles = QuantileTable::from_pool(pool);
    let scaling = FeatureScaling::from_pool(pool, &quantiles)?;
    let n_agents = agents.len();
    let master = namespace_seed(config.seed, "predictor-training");

    let per_run = (0..config.runs)
        .into_par_iter()
        .map(|r| {
            let stream = DrawStream::new(master, 0, r as u64);
            let set = simulate_training_run(pool, &quantiles, agents, config.horizon, stream)?;
            let x: Vec<Vec<f64>> = set.features.iter().map(|f| scaling.apply(f)).collect();
            Ok((0..n_agents)
                .map(|j| {
                    let opts = LassoOptions {
                        fold_seed: mix_seed(stream.seed(), j as u64),
                        ..config.lasso
                    };
                    fit_agent(&x, &set.labels, j, n_agents, &opts)
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut models: Vec<Vec<LogisticModel>> = (0..n_agents).map(|_| Vec::with_capacity(config.runs)).collect();
    for run in per_run {
        for (j, m) in run.into_iter().enumerate() {
            models[j].push(m);
        }
    }
    Ok(Ensemble {
        agent_ids: agents.ids().to_vec(),
        config: *config,
        scaling,
        models,
    })
}

/// Routes the arrival to the available agent with the highest averaged
/// probability; ties go to the lower agent index.
pub fn assign_predicted(
    state: &DynamicState,
    costs: &[f64],
    quantiles: &[f64],
    ensemble: &Ensemble,
) -> Result<Recommendation> {
    let available = state.check_arrival(costs)?;
    if ensemble.n_agents() != state.agents().len() {
        return Err(Error::DimensionMismatch {
            expected: state.agents().len(),
            actual: ensemble.n_agents(),
        });
    }
    let probs = ensemble.predict(costs, quantiles)?;
    let chosen = argmin_by(&available, |j| -probs[j]);
    let scores = state.scores(&available, |j| probs[j]);
    Ok(state.recommendation("predicted", chosen, ScoreKind::Probability, scores))
}
