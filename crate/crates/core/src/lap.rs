//! Exact static linear assignment.
//!
//! The solver is a shortest-augmenting-path method with row and column dual
//! variables (the Jonker–Volgenant / Hungarian family). Rows are inserted one
//! at a time and each insertion runs a dense Dijkstra over the columns on
//! reduced costs, so the whole solve is `O(rows² · cols)`.
//!
//! Columns may carry an integer capacity. A unit-capacity problem is the
//! classic rectangular assignment; a column with capacity `z` behaves exactly
//! like `z` duplicated columns, without materialising the duplicates. This is
//! what the simulation mechanisms call in their inner loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agents and their capacity units `z_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPool {
    ids: Vec<String>,
    capacities: Vec<u32>,
}

impl AgentPool {
    pub fn new(ids: Vec<String>, capacities: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("agent pool must contain at least one agent"));
        }
        if ids.len() != capacities.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: capacities.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate agent id `{id}`")));
            }
        }
        Ok(Self { ids, capacities })
    }

    /// Agents named `1..=n` with the given capacities.
    pub fn numbered(capacities: Vec<u32>) -> Self {
        let ids = (1..=capacities.len()).map(|j| j.to_string()).collect();
        Self { ids, capacities }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, agent: usize) -> &str {
        &self.ids[agent]
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacities.iter().map(|&z| u64::from(z)).sum()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|a| a == id)
            .ok_or_else(|| Error::UnknownAgent(id.to_string()))
    }
}

/// Dense `rows × cols` grid of finite costs with row/column identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl CostMatrix {
    /// Builds a matrix with identifiers `1..=n` on both axes.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let row_ids = (1..=n_rows).map(|i| i.to_string()).collect();
        let col_ids = (1..=n_cols).map(|j| j.to_string()).collect();
        Self::with_ids(rows, row_ids, col_ids)
    }

    pub fn with_ids(rows: Vec<Vec<f64>>, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = col_ids.len();
        if row_ids.len() != n_rows {
            return Err(Error::DimensionMismatch {
                expected: n_rows,
                actual: row_ids.len(),
            });
        }
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    actual: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("non-finite cost at ({}, {})", i + 1, j + 1)));
            }
            values.extend(row);
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
            row_ids,
            col_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    fn check_solvable(&self) -> Result<()> {
        if self.values.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("cost matrix contains non-finite entries"));
        }
        if self.n_rows > self.n_cols {
            return Err(Error::infeasible(format!(
                "{} items cannot be placed on {} capacity units",
                self.n_rows, self.n_cols
            )));
        }
        Ok(())
    }
}

/// An injective map from rows (items) to columns (capacity units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    columns: Vec<usize>,
    total_cost: f64,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl Assignment {
    fn from_columns(matrix: &CostMatrix, columns: Vec<usize>) -> Self {
        let total_cost = columns.iter().enumerate().map(|(i, &j)| matrix.get(i, j)).sum();
        Self {
            columns,
            total_cost,
            row_ids: matrix.row_ids.clone(),
            col_ids: matrix.col_ids.clone(),
        }
    }

    /// Column index assigned to each row, in row order.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, &j)| (self.row_ids[i].as_str(), self.col_ids[j].as_str()))
    }
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Ties among optimal assignments are resolved deterministically: during each
/// augmentation columns are scanned in ascending index order and the lowest
/// index wins among equal reduced distances.
pub fn solve(matrix: &CostMatrix) -> Result<Assignment> {
    matrix.check_solvable()?;
    let capacities = vec![1; matrix.n_cols];
    let mut engine = Engine::new(matrix.n_cols, &capacities);
    for i in 0..matrix.n_rows {
        engine.insert(i, |r, c| matrix.get(r, c));
    }
    Ok(Assignment::from_columns(matrix, engine.column_of))
}

/// Largest column count accepted by [`brute_force_solve`].
pub const BRUTE_FORCE_MAX_COLS: usize = 8;

/// Exhaustive enumeration over every injection of rows into columns.
///
/// Injections are visited in lexicographic order of their column sequence and
/// the first minimum is kept. Intended as a test oracle only.
pub fn brute_force_solve(matrix: &CostMatrix) -> Result<Assignment> {
    matrix.check_solvable()?;
    if matrix.n_cols > BRUTE_FORCE_MAX_COLS {
        return Err(Error::GuardExceeded(format!(
            "brute force limited to {BRUTE_FORCE_MAX_COLS} columns, got {}",
            matrix.n_cols
        )));
    }

    struct Search<'a> {
        matrix: &'a CostMatrix,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn descend(&mut self, row: usize) {
            if row == self.matrix.n_rows {
                // Summed in row order so the value matches Assignment::total_cost.
                let total: f64 = self
                    .current
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| self.matrix.get(i, j))
                    .sum();
                if self.best.as_ref().is_none_or(|(b, _)| total < *b) {
                    self.best = Some((total, self.current.clone()));
                }
                return;
            }
            for col in 0..self.matrix.n_cols {
                if !self.used[col] {
                    self.used[col] = true;
                    self.current.push(col);
                    self.descend(row + 1);
                    self.current.pop();
                    self.used[col] = false;
                }
            }
        }
    }

    let mut search = Search {
        matrix,
        used: vec![false; matrix.n_cols],
        current: Vec::with_capacity(matrix.n_rows),
        best: None,
    };
    search.descend(0);
    let (_, columns) = search.best.unwrap_or((0.0, Vec::new()));
    Ok(Assignment::from_columns(matrix, columns))
}

/// Duplicates each agent column once per capacity unit.
///
/// Returns the expanded matrix and, for every expanded column, the index of
/// the agent it came from. Unit columns are named `<agent>#<k>` with `k`
/// counting from 1.
pub fn expand_capacity(costs_over_agents: &[Vec<f64>], pool: &AgentPool) -> Result<(CostMatrix, Vec<usize>)> {
    let n = costs_over_agents.len();
    if pool.total_capacity() < n as u64 {
        return Err(Error::infeasible(format!(
            "total capacity {} is less than {} items",
            pool.total_capacity(),
            n
        )));
    }
    let mut unit_to_agent = Vec::new();
    let mut col_ids = Vec::new();
    for (agent, &z) in pool.capacities().iter().enumerate() {
        for unit in 1..=z {
            unit_to_agent.push(agent);
            col_ids.push(format!("{}#{unit}", pool.id(agent)));
        }
    }
    let mut rows = Vec::with_capacity(n);
    for row in costs_over_agents {
        if row.len() != pool.len() {
            return Err(Error::DimensionMismatch {
                expected: pool.len(),
                actual: row.len(),
            });
        }
        rows.push(unit_to_agent.iter().map(|&a| row[a]).collect());
    }
    let row_ids = (1..=n).map(|i| i.to_string()).collect();
    let matrix = CostMatrix::with_ids(rows, row_ids, col_ids)?;
    Ok((matrix, unit_to_agent))
}

/// Optimal placement of items onto agents with integer capacities.
#[derive(Debug, Clone)]
pub struct CapacitatedSolution {
    agent_of: Vec<usize>,
    load: Vec<u32>,
    total_cost: f64,
}

impl CapacitatedSolution {
    pub fn agent_of(&self) -> &[usize] {
        &self.agent_of
    }

    pub fn load(&self) -> &[u32] {
        &self.load
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }
}

/// Solves the capacitated assignment of `rows` (each a cost vector over
/// agents) onto agents with the given capacities.
///
/// Equivalent to [`solve`] on the matrix produced by [`expand_capacity`], but
/// works directly on agents. Inputs are assumed finite; callers in this crate
/// validate vectors at ingestion.
pub fn solve_capacitated(rows: &[&[f64]], capacities: &[u32]) -> Result<CapacitatedSolution> {
    let total: u64 = capacities.iter().map(|&z| u64::from(z)).sum();
    if total < rows.len() as u64 {
        return Err(Error::infeasible(format!(
            "total capacity {total} is less than {} items",
            rows.len()
        )));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != capacities.len()) {
        return Err(Error::DimensionMismatch {
            expected: capacities.len(),
            actual: bad.len(),
        });
    }
    let mut engine = Engine::new(capacities.len(), capacities);
    for i in 0..rows.len() {
        engine.insert(i, |r, c| rows[r][c]);
    }
    let total_cost = engine
        .column_of
        .iter()
        .enumerate()
        .map(|(i, &a)| rows[i][a])
        .sum();
    Ok(CapacitatedSolution {
        load: engine.load,
        agent_of: engine.column_of,
        total_cost,
    })
}

impl CapacitatedSolution {
    /// Optimal total cost after removing one capacity unit from each agent in
    /// turn, i.e. `Ψ(z − e_j)` for every `j`.
    ///
    /// `None` for agents with no capacity, or when removing the unit would
    /// leave too little capacity for the items. An agent with spare capacity
    /// keeps the current optimum. A saturated agent must hand one item on: the
    /// cheapest rerouting is a shortest path in the residual agent graph, where
    /// moving through agent `a` to `b` costs `min_{y at a} c_yb − c_ya`, ending
    /// at any agent with spare capacity.
    pub fn unit_removal_totals(&self, rows: &[&[f64]], capacities: &[u32]) -> Vec<Option<f64>> {
        let k = capacities.len();
        let spare: Vec<bool> = (0..k).map(|a| self.load[a] < capacities[a]).collect();
        if spare.iter().all(|s| !s) {
            return (0..k)
                .map(|_| None)
                .collect();
        }
        let dist = self.residual_distances(rows, k);
        (0..k)
            .map(|j| {
                if capacities[j] == 0 {
                    None
                } else if spare[j] {
                    Some(self.total_cost)
                } else {
                    let reroute = (0..k)
                        .filter(|&b| spare[b])
                        .map(|b| dist[j * k + b])
                        .fold(f64::INFINITY, f64::min);
                    reroute.is_finite().then_some(self.total_cost + reroute)
                }
            })
            .collect()
    }

    /// All-pairs shortest paths over agents in the residual graph.
    fn residual_distances(&self, rows: &[&[f64]], k: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; k * k];
        for a in 0..k {
            dist[a * k + a] = 0.0;
        }
        for (y, &a) in self.agent_of.iter().enumerate() {
            let row = rows[y];
            for b in 0..k {
                if b != a {
                    let w = row[b] - row[a];
                    if w < dist[a * k + b] {
                        dist[a * k + b] = w;
                    }
                }
            }
        }
        for via in 0..k {
            for a in 0..k {
                let d_av = dist[a * k + via];
                if !d_av.is_finite() {
                    continue;
                }
                for b in 0..k {
                    let cand = d_av + dist[via * k + b];
                    if cand < dist[a * k + b] {
                        dist[a * k + b] = cand;
                    }
                }
            }
        }
        dist
    }
}

/// Shortest-augmenting-path state shared by [`solve`] and
/// [`solve_capacitated`].
struct Engine<'c> {
    capacities: &'c [u32],
    row_dual: Vec<f64>,
    col_dual: Vec<f64>,
    column_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    load: Vec<u32>,
    // Scratch buffers reused across insertions.
    min_reduced: Vec<f64>,
    via_row: Vec<usize>,
    visited: Vec<bool>,
    tree_rows: Vec<usize>,
    visited_cols: Vec<usize>,
}

impl<'c> Engine<'c> {
    fn new(n_cols: usize, capacities: &'c [u32]) -> Self {
        Self {
            capacities,
            row_dual: Vec::new(),
            col_dual: vec![0.0; n_cols],
            column_of: Vec::new(),
            members: vec![Vec::new(); n_cols],
            load: vec![0; n_cols],
            min_reduced: vec![0.0; n_cols],
            via_row: vec![usize::MAX; n_cols],
            visited: vec![false; n_cols],
            tree_rows: Vec::new(),
            visited_cols: Vec::new(),
        }
    }

    fn relax(&mut self, row: usize, cost: &impl Fn(usize, usize) -> f64) {
        let u = self.row_dual[row];
        for col in 0..self.col_dual.len() {
            if self.visited[col] || self.capacities[col] == 0 {
                continue;
            }
            let reduced = cost(row, col) - u - self.col_dual[col];
            if reduced < self.min_reduced[col] {
                self.min_reduced[col] = reduced;
                self.via_row[col] = row;
            }
        }
    }

    /// Adds `row` to the assignment along a shortest augmenting path.
    fn insert(&mut self, row: usize, cost: impl Fn(usize, usize) -> f64) {
        debug_assert_eq!(row, self.column_of.len());
        let n_cols = self.col_dual.len();
        self.row_dual.push(0.0);
        self.column_of.push(usize::MAX);
        self.min_reduced.fill(f64::INFINITY);
        self.via_row.fill(usize::MAX);
        self.visited.fill(false);
        self.tree_rows.clear();
        self.visited_cols.clear();

        self.tree_rows.push(row);
        self.relax(row, &cost);

        let terminal = loop {
            let mut delta = f64::INFINITY;
            let mut next = usize::MAX;
            for col in 0..n_cols {
                if !self.visited[col] && self.capacities[col] > 0 && self.min_reduced[col] < delta {
                    delta = self.min_reduced[col];
                    next = col;
                }
            }
            debug_assert!(next != usize::MAX, "capacity was checked before insertion");

            for &r in &self.tree_rows {
                self.row_dual[r] += delta;
            }
            for &c in &self.visited_cols {
                self.col_dual[c] -= delta;
            }
            for col in 0..n_cols {
                if !self.visited[col] {
                    self.min_reduced[col] -= delta;
                }
            }

            if self.load[next] < self.capacities[next] {
                break next;
            }
            self.visited[next] = true;
            self.visited_cols.push(next);
            let occupants = std::mem::take(&mut self.members[next]);
            for &r in &occupants {
                self.tree_rows.push(r);
                self.relax(r, &cost);
            }
            self.members[next] = occupants;
        };

        // Walk the path back from the terminal column, shifting one row per hop.
        self.load[terminal] += 1;
        let mut col = terminal;
        loop {
            let moving = self.via_row[col];
            let previous = self.column_of[moving];
            self.column_of[moving] = col;
            self.members[col].push(moving);
            if previous == usize::MAX {
                break;
            }
            let slot = self.members[previous]
                .iter()
                .position(|&r| r == moving)
                .expect("row is listed under its column");
            self.members[previous].swap_remove(slot);
            col = previous;
        }
    }
}
