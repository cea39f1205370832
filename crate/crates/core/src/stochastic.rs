//! Historical pool sampling, empirical quantiles and per-item standardization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Empirical stand-in for the generating distribution of cost vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalPool {
    agent_ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl HistoricalPool {
    pub fn new(agent_ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyPool);
        }
        for (r, v) in vectors.iter().enumerate() {
            if v.len() != agent_ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: agent_ids.len(),
                    actual: v.len(),
                });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("pool vector {} has a non-finite entry", r + 1)));
            }
        }
        Ok(Self { agent_ids, vectors })
    }

    pub fn agent_ids(&self) -> &[String] {
        &self.agent_ids
    }

    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }
}

/// 64-bit finalizer from SplitMix64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines two words into one seed. Not commutative.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b).rotate_left(23))
}

/// Derives an independent seed for a named sub-namespace.
pub fn namespace_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix_seed(master, h)
}

/// Addresses one simulated draw: the random state is a pure function of
/// `(master_seed, item_index, draw)`.
///
/// The stream seed is `mix_seed(mix_seed(master_seed, item_index), draw)`
/// feeding a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawStream {
    pub master_seed: u64,
    pub item_index: u64,
    pub draw: u64,
}

impl DrawStream {
    pub fn new(master_seed: u64, item_index: u64, draw: u64) -> Self {
        Self {
            master_seed,
            item_index,
            draw,
        }
    }

    pub fn seed(&self) -> u64 {
        mix_seed(mix_seed(self.master_seed, self.item_index), self.draw)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

/// Draws `count` pool indices uniformly with replacement.
pub fn draw_indices(pool: &HistoricalPool, count: usize, stream: DrawStream) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = stream.rng();
    Ok((0..count).map(|_| rng.random_range(0..pool.len())).collect())
}

/// Draws `count` cost vectors uniformly with replacement.
pub fn draw_set<'p>(pool: &'p HistoricalPool, count: usize, stream: DrawStream) -> Result<Vec<&'p [f64]>> {
    Ok(draw_indices(pool, count, stream)?
        .into_iter()
        .map(|i| pool.vector(i))
        .collect())
}

/// Per-agent sorted historical costs; the empirical quantile functions `Q_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    agent_ids: Vec<String>,
    sorted: Vec<Vec<f64>>,
}

impl QuantileTable {
    pub fn from_pool(pool: &HistoricalPool) -> Self {
        let sorted = (0..pool.n_agents())
            .map(|j| {
                let mut col: Vec<f64> = pool.vectors().iter().map(|v| v[j]).collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Self {
            agent_ids: pool.agent_ids().to_vec(),
            sorted,
        }
    }

    pub fn agent_ids(&self) -> &[String] {
        &self.agent_ids
    }

    pub fn n_agents(&self) -> usize {
        self.sorted.len()
    }

    /// Empirical CDF: the fraction of historical costs for `agent` that are
    /// `<= cost`.
    pub fn quantile(&self, agent: usize, cost: f64) -> Result<f64> {
        let col = self
            .sorted
            .get(agent)
            .ok_or_else(|| Error::UnknownAgent(agent.to_string()))?;
        let at_or_below = col.partition_point(|&h| h <= cost);
        Ok(at_or_below as f64 / col.len() as f64)
    }

    pub fn quantile_by_id(&self, agent_id: &str, cost: f64) -> Result<f64> {
        let agent = self
            .agent_ids
            .iter()
            .position(|a| a == agent_id)
            .ok_or_else(|| Error::UnknownAgent(agent_id.to_string()))?;
        self.quantile(agent, cost)
    }

    pub fn quantile_vector(&self, costs: &[f64]) -> Result<Vec<f64>> {
        if costs.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: self.n_agents(),
                actual: costs.len(),
            });
        }
        costs
            .iter()
            .enumerate()
            .map(|(j, &c)| self.quantile(j, c))
            .collect()
    }
}

/// Per-item z-score of a cost vector, using its own mean and sample standard
/// deviation (divisor `n − 1`). Constant or single-element vectors map to zeros.
pub fn standardize(costs: &[f64]) -> Result<Vec<f64>> {
    if costs.is_empty() {
        return Err(Error::invalid("cannot standardize an empty vector"));
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    if costs.len() < 2 {
        return Ok(vec![0.0; costs.len()]);
    }
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    // Rounding in the mean leaves a tiny spread on constant vectors.
    if sd <= 1e-12 * mean.abs().max(1.0) || !sd.is_finite() {
        return Ok(vec![0.0; costs.len()]);
    }
    Ok(costs.iter().map(|c| (c - mean) / sd).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(vectors: Vec<Vec<f64>>) -> HistoricalPool {
        let ids = (1..=vectors[0].len()).map(|j| j.to_string()).collect();
        HistoricalPool::new(ids, vectors).unwrap()
    }

    #[test]
    fn draw_zero() {
        let p = pool(vec![vec![0.1, 0.2]]);
        assert!(draw_set(&p, 0, DrawStream::new(1, 1, 1)).unwrap().is_empty());
    }

    #[test]
    fn degenerate_support_repeats() {
        let p = pool(vec![vec![0.3, 0.7]]);
        let d = draw_set(&p, 3, DrawStream::new(9, 2, 4)).unwrap();
        assert_eq!(d, vec![&[0.3, 0.7][..]; 3]);
    }

    #[test]
    fn draws_are_replayable() {
        let p = pool((0..50).map(|i| vec![i as f64, 0.0]).collect());
        let s = DrawStream::new(42, 7, 3);
        assert_eq!(draw_indices(&p, 20, s).unwrap(), draw_indices(&p, 20, s).unwrap());
        let other = DrawStream::new(42, 7, 4);
        assert_ne!(draw_indices(&p, 20, s).unwrap(), draw_indices(&p, 20, other).unwrap());
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(matches!(
            HistoricalPool::new(vec!["a".into()], vec![]),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn quantile_examples() {
        let t = QuantileTable::from_pool(&pool(vec![vec![0.3], vec![0.1], vec![0.4], vec![0.2]]));
        assert_eq!(t.quantile(0, 0.2).unwrap(), 0.5);
        assert_eq!(t.quantile(0, 0.05).unwrap(), 0.0);
        assert_eq!(t.quantile(0, 0.4).unwrap(), 1.0);
        assert!(matches!(t.quantile(1, 0.1), Err(Error::UnknownAgent(_))));
        assert!(matches!(t.quantile_by_id("x", 0.1), Err(Error::UnknownAgent(_))));
    }

    #[test]
    fn quantile_vectors() {
        let t = QuantileTable::from_pool(&pool(vec![
            vec![0.1, 1.0],
            vec![0.2, 2.0],
            vec![0.3, 3.0],
            vec![0.4, 4.0],
        ]));
        assert_eq!(t.quantile_vector(&[0.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(t.quantile_vector(&[0.4, 9.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(t.quantile_vector(&[0.2, 3.5]).unwrap(), vec![0.5, 0.75]);
        assert!(matches!(
            t.quantile_vector(&[0.1]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(standardize(&[0.4, 0.4, 0.4]).unwrap(), vec![0.0; 3]);
        assert!(standardize(&[]).is_err());
    }

    fn argmin(v: &[f64]) -> usize {
        let mut best = 0;
        for (j, &x) in v.iter().enumerate() {
            if x < v[best] {
                best = j;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn standardized_moments(v in prop::collection::vec(-10.0f64..10.0, 2..12)) {
            let s = standardize(&v).unwrap();
            let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-6);
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!(mean.abs() <= 1e-12);
            prop_assert!((sd - 1.0).abs() <= 1e-9);
            prop_assert_eq!(argmin(&s), argmin(&v));
        }

        #[test]
        fn quantile_is_monotone(hist in prop::collection::vec(0.0f64..1.0, 1..40), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let t = QuantileTable::from_pool(&pool(hist.into_iter().map(|h| vec![h]).collect()));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (ql, qh) = (t.quantile(0, lo).unwrap(), t.quantile(0, hi).unwrap());
            prop_assert!(ql <= qh);
            prop_assert!((0.0..=1.0).contains(&ql) && (0.0..=1.0).contains(&qh));
        }
    }
}
