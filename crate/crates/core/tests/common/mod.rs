//! Independent oracles shared by the integration tests. They only use the
//! brute-force solver and plain enumeration.

#![allow(dead_code)]

use dynassign::lap::{brute_force_solve, expand_capacity, AgentPool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Optimal static cost of `rows` over agents with capacities `caps`, by
/// exhaustive search over capacity units.
pub fn brute_psi(rows: &[Vec<f64>], caps: &[u32]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let pool = AgentPool::numbered(caps.to_vec());
    let (m, _) = expand_capacity(rows, &pool).unwrap();
    brute_force_solve(&m).unwrap().total_cost()
}

/// Every sequence of `len` indices into `0..base`, most significant first.
pub fn sequences(base: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..base).map(move |k| {
                    let mut next = prefix.clone();
                    next.push(k);
                    next
                })
            })
            .collect();
    }
    out
}

/// `E[c_j + Ψ(z − e_j)]` for each agent with capacity left, with the future
/// uniform over all ordered `future`-length sequences of pool vectors.
pub fn expected_sigma(remaining: &[u32], costs: &[f64], pool: &[Vec<f64>], future: usize) -> Vec<Option<f64>> {
    let seqs = sequences(pool.len(), future);
    (0..remaining.len())
        .map(|j| {
            if remaining[j] == 0 {
                return None;
            }
            let mut caps = remaining.to_vec();
            caps[j] -= 1;
            let total: f64 = seqs
                .iter()
                .map(|s| {
                    let rows: Vec<Vec<f64>> = s.iter().map(|&k| pool[k].clone()).collect();
                    costs[j] + brute_psi(&rows, &caps)
                })
                .sum();
            Some(total / seqs.len() as f64)
        })
        .collect()
}

/// Expected batch objective for every feasible agent tuple, in lexicographic
/// tuple order.
pub fn expected_tuple_objectives(
    remaining: &[u32],
    batch: &[Vec<f64>],
    pool: &[Vec<f64>],
    future: usize,
) -> Vec<(Vec<usize>, f64)> {
    let seqs = sequences(pool.len(), future);
    sequences(remaining.len(), batch.len())
        .into_iter()
        .filter_map(|tuple| {
            let mut caps = remaining.to_vec();
            for &j in &tuple {
                if caps[j] == 0 {
                    return None;
                }
                caps[j] -= 1;
            }
            let immediate: f64 = tuple.iter().enumerate().map(|(d, &j)| batch[d][j]).sum();
            let total: f64 = seqs
                .iter()
                .map(|s| {
                    let rows: Vec<Vec<f64>> = s.iter().map(|&k| pool[k].clone()).collect();
                    immediate + brute_psi(&rows, &caps)
                })
                .sum();
            Some((tuple, total / seqs.len() as f64))
        })
        .collect()
}

/// Random dyadic cost vectors (multiples of 1/16 in [0, 1)).
pub fn dyadic_vectors(rng: &mut ChaCha8Rng, count: usize, n_agents: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n_agents).map(|_| rng.random_range(0..16u32) as f64 / 16.0).collect())
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
