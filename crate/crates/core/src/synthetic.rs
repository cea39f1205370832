//! Synthetic instances.
//!
//! Outcome scores follow `s_ij = sigmoid(base + a_j + u_i + e_ij + b·[j = k_i])`:
//!
//! - `a_j ~ N(0, agent_spread²)`: agent effect, fixed per world;
//! - `u_i ~ N(0, item_spread²)`: item effect shared by all agents;
//! - `e_ij ~ N(0, noise²)`: idiosyncratic match noise;
//! - with probability `specialist_rate` item `i` has a specialist agent `k_i`,
//!   uniform over agents, whose score gets the boost `b`.
//!
//! Costs are `1 − s_ij`. Seed contract: the agent effects come from the
//! stream labelled `world`, pool vectors from `pool`, cohort vectors from
//! `cohort`, each derived from the master seed, so pool and cohort are
//! independent samples from one stationary distribution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::AgentPool;
use crate::predictor::sigmoid;
use crate::stochastic::{namespace_seed, HistoricalPool};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_agents: usize,
    pub base: f64,
    pub agent_spread: f64,
    pub item_spread: f64,
    pub noise: f64,
    pub specialist_rate: f64,
    pub specialist_boost: f64,
}

impl SyntheticConfig {
    pub fn new(n_agents: usize) -> Self {
        Self {
            n_agents,
            base: -0.4,
            agent_spread: 0.5,
            item_spread: 0.6,
            noise: 0.5,
            specialist_rate: 0.3,
            specialist_boost: 1.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::invalid("synthetic world needs at least one agent"));
        }
        let spreads = [self.agent_spread, self.item_spread, self.noise];
        if spreads.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("spreads must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.specialist_rate) {
            return Err(Error::invalid("specialist_rate must lie in [0, 1]"));
        }
        if !self.base.is_finite() || !self.specialist_boost.is_finite() {
            return Err(Error::invalid("base and specialist_boost must be finite"));
        }
        Ok(())
    }
}

/// A fixed draw of agent effects from which any number of items can be sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    config: SyntheticConfig,
    seed: u64,
    agent_effects: Vec<f64>,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("spread validated as finite and non-negative")
}

impl SyntheticWorld {
    pub fn new(config: SyntheticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(namespace_seed(seed, "world"));
        let dist = normal(config.agent_spread);
        let agent_effects = (0..config.n_agents).map(|_| dist.sample(&mut rng)).collect();
        Ok(Self {
            config,
            seed,
            agent_effects,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn agent_effects(&self) -> &[f64] {
        &self.agent_effects
    }

    pub fn agent_ids(&self) -> Vec<String> {
        (1..=self.config.n_agents).map(|j| format!("A{j}")).collect()
    }

    /// `count` cost vectors from the stream labelled `label`.
    pub fn sample(&self, count: usize, label: &str) -> Vec<Vec<f64>> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(namespace_seed(self.seed, label));
        let item = normal(c.item_spread);
        let noise = normal(c.noise);
        (0..count)
            .map(|_| {
                let u = item.sample(&mut rng);
                let specialist = if rng.random::<f64>() < c.specialist_rate {
                    Some(rng.random_range(0..c.n_agents))
                } else {
                    None
                };
                (0..c.n_agents)
                    .map(|j| {
                        let boost = if specialist == Some(j) { c.specialist_boost } else { 0.0 };
                        let s = sigmoid(c.base + self.agent_effects[j] + u + noise.sample(&mut rng) + boost);
                        1.0 - s
                    })
                    .collect()
            })
            .collect()
    }

    pub fn pool(&self, size: usize) -> Result<HistoricalPool> {
        HistoricalPool::new(self.agent_ids(), self.sample(size, "pool"))
    }

    pub fn cohort(&self, size: usize) -> Vec<Vec<f64>> {
        self.sample(size, "cohort")
    }

    /// Capacities summing to exactly `n`, split as evenly as possible with the
    /// remainder going to the first agents.
    pub fn even_capacities(&self, n: usize) -> AgentPool {
        even_capacities(self.agent_ids(), n)
    }
}

pub fn even_capacities(ids: Vec<String>, n: usize) -> AgentPool {
    let k = ids.len();
    let caps = (0..k).map(|j| (n / k + usize::from(j < n % k)) as u32).collect();
    AgentPool::new(ids, caps).expect("ids are non-empty and capacities valid")
}
