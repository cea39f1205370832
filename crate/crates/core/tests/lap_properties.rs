use dynassign::lap::{brute_force_solve, expand_capacity, solve, solve_capacitated, AgentPool, CostMatrix};
use proptest::prelude::*;

/// Rectangular matrices with rows ≤ columns ≤ 6 and dyadic entries, so sums
/// are exact in floating point.
fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=6)
        .prop_flat_map(|cols| (1usize..=cols, Just(cols)))
        .prop_flat_map(|(rows, cols)| {
            prop::collection::vec(prop::collection::vec((0u32..64).prop_map(|v| v as f64 / 16.0), cols), rows)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_brute_force(rows in matrix()) {
        let m = CostMatrix::new(rows).unwrap();
        prop_assert_eq!(solve(&m).unwrap().total_cost(), brute_force_solve(&m).unwrap().total_cost());
    }

    #[test]
    fn assignment_is_injective(rows in matrix()) {
        let m = CostMatrix::new(rows).unwrap();
        let a = solve(&m).unwrap();
        let mut cols = a.columns().to_vec();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(cols.len(), m.n_rows());
        let sum: f64 = a.columns().iter().enumerate().map(|(i, &c)| m.get(i, c)).sum();
        prop_assert_eq!(sum, a.total_cost());
    }

    #[test]
    fn row_permutation_permutes_assignment(rows in matrix(), seed in any::<u64>()) {
        let n = rows.len();
        let mut perm: Vec<usize> = (0..n).collect();
        // Deterministic shuffle from the seed.
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let a = solve(&CostMatrix::new(rows).unwrap()).unwrap();
        let b = solve(&CostMatrix::new(permuted).unwrap()).unwrap();
        prop_assert_eq!(a.total_cost(), b.total_cost());
    }

    #[test]
    fn row_shift_moves_cost_by_constant(rows in matrix(), row in any::<prop::sample::Index>(), shift in (0u32..32).prop_map(|v| v as f64 / 4.0)) {
        let r = row.index(rows.len());
        let base = solve(&CostMatrix::new(rows.clone()).unwrap()).unwrap();
        let mut shifted = rows;
        shifted[r].iter_mut().for_each(|c| *c += shift);
        let moved = solve(&CostMatrix::new(shifted).unwrap()).unwrap();
        prop_assert_eq!(moved.total_cost(), base.total_cost() + shift);
    }

    #[test]
    fn capacitated_respects_quota(caps in prop::collection::vec(0u32..4, 1..5), seed in any::<u64>()) {
        let total: u32 = caps.iter().sum();
        prop_assume!(total > 0);
        let n = (seed % u64::from(total)) as usize + 1;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..caps.len()).map(|j| ((seed >> ((i * 7 + j * 3) % 60)) & 31) as f64 / 8.0).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let sol = solve_capacitated(&refs, &caps).unwrap();
        for (j, &z) in caps.iter().enumerate() {
            prop_assert!(sol.load()[j] <= z);
        }
        let pool = AgentPool::numbered(caps);
        let (expanded, _) = expand_capacity(&rows, &pool).unwrap();
        prop_assert_eq!(sol.total_cost(), solve(&expanded).unwrap().total_cost());
    }
}

#[test]
fn solve_is_repeatable_across_threads() {
    let rows: Vec<Vec<f64>> = (0..7)
        .map(|i| (0..7).map(|j| ((i * 13 + j * 7) % 11) as f64 / 4.0).collect())
        .collect();
    let m = CostMatrix::new(rows).unwrap();
    let first = solve(&m).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let m = m.clone();
            std::thread::spawn(move || solve(&m).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), first);
    }
}
