//! Replays a cohort under the static optimum, greedy and any configured
//! mechanisms, with the cohort's own capacities.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::batch::assign_batch_approx;
use crate::data::{Cohort, Direction};
use crate::error::{Error, Result};
use crate::lap::AgentPool;
use crate::mechanisms::{
    assign_greedy, recommend, static_optimal_agents, Commit, DynamicState, Mechanism, MechanismConfig,
    MechanismContext, Recommendation,
};
use crate::predictor::Ensemble;
use crate::stochastic::{mix_seed, namespace_seed, HistoricalPool, QuantileTable};

pub const RESULT_SCHEMA: &str = "v1";

/// Everything a backtest reads.
#[derive(Debug, Clone, Copy)]
pub struct BacktestInputs<'a> {
    pub cohort: &'a Cohort,
    pub pool: &'a HistoricalPool,
    pub agents: &'a AgentPool,
    pub ensemble: Option<&'a Ensemble>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktestOptions {
    /// Seed replications per configured mechanism.
    pub replications: usize,
    /// How outcome means are reported.
    pub direction: Direction,
    /// Route simulation mechanisms through batch assignment when the cohort
    /// carries batch ids.
    pub use_batches: bool,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            replications: 1,
            direction: Direction::Max,
            use_batches: true,
        }
    }
}

/// One assignment in a replayed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub mechanism: String,
    pub replication: usize,
    pub ordinal: usize,
    pub item_id: String,
    pub agent_id: String,
    pub agent: usize,
    pub cost: f64,
    /// Remaining capacity per agent after this assignment.
    pub remaining: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub seed: u64,
    pub total_cost: f64,
    pub mean_outcome: f64,
    /// Sum of per-item expected-loss estimates, when the mechanism reports them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_expected_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismRun {
    pub label: String,
    pub mechanism: String,
    pub parameter: String,
    /// Mean outcome over replications: mean score under `max`, mean cost
    /// under `min`.
    pub mean_outcome: f64,
    pub mean_total_cost: f64,
    /// `1.96 · sd / √R` over replication means; zero for a single replication.
    pub ci_half_width: f64,
    pub replications: Vec<ReplicationOutcome>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
    #[serde(skip)]
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAccounting {
    pub optimal_mean: f64,
    pub minrisk_mean: f64,
    pub mean_expected_loss: f64,
    /// Min-risk mean corrected by the expected loss; estimates the optimum.
    pub adjusted_mean: f64,
    /// `(minrisk total − Σ R̂ − optimal total) / n`, averaged over replications.
    pub gap: f64,
    pub gap_stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub schema: String,
    pub direction: Direction,
    pub n_items: usize,
    pub agent_ids: Vec<String>,
    pub capacities: Vec<u32>,
    pub optimal: MechanismRun,
    pub greedy: MechanismRun,
    pub mechanisms: Vec<MechanismRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_accounting: Option<LossAccounting>,
}

impl BacktestResult {
    pub fn runs(&self) -> impl Iterator<Item = &MechanismRun> {
        [&self.optimal, &self.greedy].into_iter().chain(&self.mechanisms)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every trace event, one JSON object per line.
    pub fn write_trace_jsonl(&self, mut out: impl Write) -> Result<()> {
        for run in self.runs() {
            for event in &run.trace {
                serde_json::to_writer(&mut out, event)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

fn check_inputs(inputs: &BacktestInputs<'_>) -> Result<()> {
    let n_agents = inputs.agents.len();
    if inputs.cohort.agent_ids() != inputs.agents.ids() {
        return Err(Error::invalid("cohort columns do not match the agent list"));
    }
    if inputs.pool.agent_ids() != inputs.agents.ids() {
        return Err(Error::invalid("pool columns do not match the agent list"));
    }
    if inputs.cohort.is_empty() {
        return Err(Error::invalid("cohort is empty"));
    }
    if let Some(e) = inputs.ensemble {
        if e.n_agents() != n_agents {
            return Err(Error::DimensionMismatch {
                expected: n_agents,
                actual: e.n_agents(),
            });
        }
    }
    if inputs.agents.total_capacity() < inputs.cohort.len() as u64 {
        return Err(Error::infeasible(format!(
            "total capacity {} cannot hold {} arrivals",
            inputs.agents.total_capacity(),
            inputs.cohort.len()
        )));
    }
    Ok(())
}

fn summarize(
    label: String,
    mechanism: &str,
    parameter: String,
    replications: Vec<ReplicationOutcome>,
    trace: Vec<TraceEvent>,
    runtime: Duration,
) -> MechanismRun {
    let r = replications.len() as f64;
    let mean_outcome = replications.iter().map(|o| o.mean_outcome).sum::<f64>() / r;
    let mean_total_cost = replications.iter().map(|o| o.total_cost).sum::<f64>() / r;
    let ci_half_width = if replications.len() > 1 {
        let var = replications
            .iter()
            .map(|o| (o.mean_outcome - mean_outcome).powi(2))
            .sum::<f64>()
            / (r - 1.0);
        1.96 * (var / r).sqrt()
    } else {
        0.0
    };
    MechanismRun {
        label,
        mechanism: mechanism.to_string(),
        parameter,
        mean_outcome,
        mean_total_cost,
        ci_half_width,
        replications,
        trace,
        runtime,
    }
}

fn outcome(direction: Direction, total_cost: f64, n: usize) -> f64 {
    direction.from_cost(total_cost / n as f64)
}

fn event(state: &DynamicState, label: &str, replication: usize, cost: f64) -> TraceEvent {
    let commit = state.history().last().expect("called after a commit");
    commit_event(commit, state.remaining().to_vec(), label, replication, cost)
}

fn commit_event(commit: &Commit, remaining: Vec<u32>, label: &str, replication: usize, cost: f64) -> TraceEvent {
    TraceEvent {
        mechanism: label.to_string(),
        replication,
        ordinal: commit.ordinal,
        item_id: commit.item_id.clone(),
        agent_id: commit.agent_id.clone(),
        agent: commit.agent,
        cost,
        remaining,
        recommendation: commit.recommendation.clone(),
    }
}

/// Replays `config` once with the given seed. Returns the trace and the
/// summed expected-loss estimates when every recommendation carried one.
fn replay(
    inputs: &BacktestInputs<'_>,
    quantiles: &QuantileTable,
    config: &MechanismConfig,
    options: &BacktestOptions,
    label: &str,
    replication: usize,
) -> Result<(f64, Vec<TraceEvent>, Option<f64>)> {
    let cohort = inputs.cohort;
    let mut state = DynamicState::new(inputs.agents.clone(), cohort.len())?;
    let ctx = MechanismContext {
        pool: inputs.pool,
        quantiles,
        ensemble: inputs.ensemble,
    };
    let mut trace = Vec::with_capacity(cohort.len());
    let mut total = 0.0;
    let mut loss = Some(0.0);
    let mut record = |commit: &Commit, remaining: Vec<u32>, costs: &[f64]| {
        let c = costs[commit.agent];
        total += c;
        loss = match (loss, commit.recommendation.as_ref().and_then(|r| r.expected_loss)) {
            (Some(l), Some(r)) => Some(l + r),
            _ => None,
        };
        trace.push(commit_event(commit, remaining, label, replication, c));
    };

    let batched = options.use_batches && cohort.has_batches() && config.mechanism.is_simulation();
    if batched {
        for batch in cohort.batches() {
            let start = state.history().len();
            let mut remaining = state.remaining().to_vec();
            assign_batch_approx(&mut state, &batch, inputs.pool, config)?;
            for (commit, item) in state.history()[start..].iter().zip(&batch.items) {
                remaining[commit.agent] -= 1;
                record(commit, remaining.clone(), &item.costs);
            }
        }
    } else {
        for item in cohort.items() {
            let rec = recommend(&state, &item.costs, &ctx, config)?;
            state.commit(item.item_id.clone(), rec.chosen, Some(rec))?;
            let commit = state.history().last().expect("just committed");
            record(commit, state.remaining().to_vec(), &item.costs);
        }
    }
    Ok((total, trace, loss))
}

/// Seed used by configured mechanism `index` in replication `r`. Each
/// configuration draws from its own namespace.
pub fn replication_seed(config: &MechanismConfig, index: usize, r: usize) -> u64 {
    let ns = namespace_seed(config.seed, &format!("backtest/{index}/{}", config.label()));
    mix_seed(ns, r as u64)
}

pub fn run_backtest(
    inputs: &BacktestInputs<'_>,
    configs: &[MechanismConfig],
    options: &BacktestOptions,
) -> Result<BacktestResult> {
    check_inputs(inputs)?;
    if options.replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    for c in configs {
        c.validate()?;
        if c.mechanism == Mechanism::Predicted && inputs.ensemble.is_none() {
            return Err(Error::invalid("predicted mechanism needs a trained ensemble"));
        }
    }
    let cohort = inputs.cohort;
    let n = cohort.len();
    let quantiles = QuantileTable::from_pool(inputs.pool);

    let started = Instant::now();
    let vectors = cohort.vectors();
    let (chosen, opt_total) = static_optimal_agents(&vectors, inputs.agents)?;
    let mut state = DynamicState::new(inputs.agents.clone(), n)?;
    let mut opt_trace = Vec::with_capacity(n);
    for (item, &j) in cohort.items().iter().zip(&chosen) {
        state.commit(item.item_id.clone(), j, None)?;
        opt_trace.push(event(&state, "optimal", 0, item.costs[j]));
    }
    let optimal = summarize(
        "optimal".into(),
        "optimal",
        String::new(),
        vec![ReplicationOutcome {
            seed: 0,
            total_cost: opt_total,
            mean_outcome: outcome(options.direction, opt_total, n),
            total_expected_loss: None,
        }],
        opt_trace,
        started.elapsed(),
    );

    let started = Instant::now();
    let mut state = DynamicState::new(inputs.agents.clone(), n)?;
    let mut greedy_trace = Vec::with_capacity(n);
    let mut greedy_total = 0.0;
    for item in cohort.items() {
        let rec = assign_greedy(&state, &item.costs)?;
        let c = item.costs[rec.chosen];
        greedy_total += c;
        state.commit(item.item_id.clone(), rec.chosen, Some(rec))?;
        greedy_trace.push(event(&state, "greedy", 0, c));
    }
    let greedy = summarize(
        "greedy".into(),
        "greedy",
        String::new(),
        vec![ReplicationOutcome {
            seed: 0,
            total_cost: greedy_total,
            mean_outcome: outcome(options.direction, greedy_total, n),
            total_expected_loss: None,
        }],
        greedy_trace,
        started.elapsed(),
    );

    let mut mechanisms = Vec::with_capacity(configs.len());
    for (index, config) in configs.iter().enumerate() {
        let started = Instant::now();
        let label = config.label();
        let mut outcomes = Vec::with_capacity(options.replications);
        let mut trace = Vec::new();
        for r in 0..options.replications {
            let seeded = MechanismConfig {
                seed: replication_seed(config, index, r),
                ..*config
            };
            let (total, events, loss) = replay(inputs, &quantiles, &seeded, options, &label, r)?;
            outcomes.push(ReplicationOutcome {
                seed: seeded.seed,
                total_cost: total,
                mean_outcome: outcome(options.direction, total, n),
                total_expected_loss: loss,
            });
            trace.extend(events);
        }
        mechanisms.push(summarize(
            label,
            config.mechanism.name(),
            config.mechanism.parameter(),
            outcomes,
            trace,
            started.elapsed(),
        ));
    }

    let mut result = BacktestResult {
        schema: RESULT_SCHEMA.into(),
        direction: options.direction,
        n_items: n,
        agent_ids: inputs.agents.ids().to_vec(),
        capacities: inputs.agents.capacities().to_vec(),
        optimal,
        greedy,
        mechanisms,
        loss_accounting: None,
    };
    result.loss_accounting = loss_accounting_report(&result).ok();
    Ok(result)
}

/// Compares the static optimum with min-risk plus its expected-loss estimates,
/// all on the per-item mean scale of the result's direction.
pub fn loss_accounting_report(result: &BacktestResult) -> Result<LossAccounting> {
    let run = result
        .mechanisms
        .iter()
        .find(|m| m.mechanism == "min_risk" && m.replications.iter().all(|o| o.total_expected_loss.is_some()))
        .ok_or_else(|| Error::invalid("loss accounting needs a min_risk run with expected-loss estimates"))?;
    let n = result.n_items as f64;
    let opt_total = result.optimal.mean_total_cost;
    let gaps: Vec<f64> = run
        .replications
        .iter()
        .map(|o| (o.total_cost - o.total_expected_loss.expect("checked above") - opt_total) / n)
        .collect();
    let r = gaps.len() as f64;
    let gap = gaps.iter().sum::<f64>() / r;
    let gap_stderr = (gaps.len() > 1).then(|| {
        let var = gaps.iter().map(|g| (g - gap).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    });
    let mean_expected_loss = run
        .replications
        .iter()
        .map(|o| o.total_expected_loss.expect("checked above"))
        .sum::<f64>()
        / r
        / n;
    let (optimal_mean, minrisk_mean) = (result.optimal.mean_outcome, run.mean_outcome);
    let adjusted_mean = match result.direction {
        Direction::Max => minrisk_mean + mean_expected_loss,
        Direction::Min => minrisk_mean - mean_expected_loss,
    };
    Ok(LossAccounting {
        optimal_mean,
        minrisk_mean,
        mean_expected_loss,
        adjusted_mean,
        gap,
        gap_stderr,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub mechanism: String,
    pub parameter: String,
    pub mean: f64,
    pub ci_half_width: f64,
}

fn plot_header(direction: Direction) -> &'static str {
    match direction {
        Direction::Max => "mechanism,parameter,mean_score,ci_half_width",
        Direction::Min => "mechanism,parameter,mean_cost,ci_half_width",
    }
}

pub fn plot_rows(result: &BacktestResult) -> Vec<PlotRow> {
    result
        .mechanisms
        .iter()
        .map(|m| PlotRow {
            mechanism: m.mechanism.clone(),
            parameter: m.parameter.clone(),
            mean: m.mean_outcome,
            ci_half_width: m.ci_half_width,
        })
        .collect()
}

/// Tidy table with one row per configured mechanism.
pub fn emit_plot_data(result: &BacktestResult, out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(plot_header(result.direction).split(','))?;
    for row in plot_rows(result) {
        w.write_record([
            row.mechanism,
            row.parameter,
            row.mean.to_string(),
            row.ci_half_width.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_plot_data(input: impl BufRead) -> Result<(Direction, Vec<PlotRow>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let direction = match header.join(",") {
        h if h == plot_header(Direction::Max) => Direction::Max,
        h if h == plot_header(Direction::Min) => Direction::Min,
        h => return Err(Error::Parse(format!("unexpected plot header `{h}`"))),
    };
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let num = |k: usize| -> Result<f64> {
            record[k]
                .parse()
                .map_err(|_| Error::Parse(format!("`{}` is not a number", &record[k])))
        };
        rows.push(PlotRow {
            mechanism: record[0].to_string(),
            parameter: record[1].to_string(),
            mean: num(2)?,
            ci_half_width: num(3)?,
        });
    }
    Ok((direction, rows))
}
