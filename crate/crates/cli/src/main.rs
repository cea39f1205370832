mod manifest;

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dynassign::backtest::{emit_plot_data, run_backtest, BacktestInputs, BacktestOptions};
use dynassign::data::{read_cohort_csv, read_matrix_csv, read_pool_csv, write_cohort_csv, write_vectors_csv, CohortItem};
use dynassign::mechanisms::{static_optimal_agents, DEFAULT_APPROX_DRAWS, DEFAULT_MIN_RISK_DRAWS};
use dynassign::predictor::{decode_ensemble, encode_ensemble, summary, train_ensemble, EnsembleConfig};
use dynassign::synthetic::{even_capacities, SyntheticConfig, SyntheticWorld};
use dynassign::{AgentPool, Cohort, Direction, Error, Mechanism, MechanismConfig};
use dynassign_service::AppState;
use serde::Serialize;
use serde_json::json;

use manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "dynassign", version, about = "Dynamic assignment of sequential arrivals to capacity-limited agents")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct Global {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Whether file values are costs to minimize or scores in [0, 1] to maximize.
    #[arg(long, global = true, default_value = "min")]
    direction: Direction,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a static assignment problem from a cost matrix file.
    Solve(SolveArgs),
    /// Replay a cohort through the configured mechanisms.
    Backtest(BacktestArgs),
    /// Train a prediction ensemble on simulated cohorts drawn from a pool.
    TrainPredictor(TrainArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Generate a synthetic pool and cohort.
    #[command(long_about = SYNTHETIC_HELP)]
    GenSynthetic(SyntheticArgs),
}

const SYNTHETIC_HELP: &str = "Generate a synthetic pool and cohort.

Outcome scores are s_ij = sigmoid(base + a_j + u_i + e_ij + boost*[j = k_i]) where
a_j ~ N(0, agent_spread^2) is a per-agent effect fixed by the seed,
u_i ~ N(0, item_spread^2) is an item effect shared across agents,
e_ij ~ N(0, noise^2) is match noise, and with probability specialist_rate an
item has a uniformly chosen specialist agent k_i whose score gets the boost.
Costs are 1 - s_ij.

Seed contract: agent effects, pool vectors and cohort vectors come from
independent streams labelled `world`, `pool` and `cohort`, each derived from
--seed. The same seed and sizes always give the same files, and the pool and
cohort are independent samples from one distribution.

Writes pool.csv, cohort.csv and capacities.csv (an even split of the cohort
size) into --out.";

#[derive(Debug, Args, Serialize)]
struct SolveArgs {
    /// CSV with header `item_id,<agent ids...>`, one row per item.
    #[arg(long)]
    costs: PathBuf,
    /// Capacities as `1,2,...` in column order, or a CSV file with agent ids
    /// as header and one row of capacities. Defaults to 1 per agent.
    #[arg(long)]
    capacities: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct MechanismArgs {
    /// Comma-separated mechanisms: greedy, min_risk, approx_min_risk,
    /// weighted_cq, sequential_cq, predicted.
    #[arg(long, default_value = "min_risk,approx_min_risk,weighted_cq,sequential_cq")]
    mechanism: String,
    /// Simulated draws for the min-risk rules.
    #[arg(long)]
    m: Option<usize>,
    /// Weight on cost versus cost-quantile for weighted_cq.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Number of lowest cost-quantile agents considered by sequential_cq.
    #[arg(long, default_value_t = 2)]
    t: usize,
    /// Enumerate every future instead of Monte Carlo sampling.
    #[arg(long)]
    exhaustive: bool,
}

#[derive(Debug, Args, Serialize)]
struct BacktestArgs {
    /// Cohort CSV with header `item_id[,batch_id],<agent ids...>`.
    #[arg(long)]
    cohort: PathBuf,
    /// Historical pool CSV with agent ids as header.
    #[arg(long)]
    pool: PathBuf,
    /// Defaults to an even split of the cohort size.
    #[arg(long)]
    capacities: Option<String>,
    #[command(flatten)]
    mechanisms: MechanismArgs,
    #[arg(long, default_value_t = 1)]
    replications: usize,
    /// Trained ensemble, required for the predicted mechanism.
    #[arg(long)]
    ensemble: Option<PathBuf>,
    /// Assign batched cohorts one item at a time.
    #[arg(long)]
    ignore_batches: bool,
    /// Directory for result.json, trace.jsonl, plot.csv and manifest.json.
    /// Without it the result goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    pool: PathBuf,
    /// Items per simulated cohort.
    #[arg(long)]
    horizon: usize,
    /// Defaults to an even split of the horizon.
    #[arg(long)]
    capacities: Option<String>,
    /// Number of simulated cohorts.
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Output file for the binary ensemble.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory holding one journal file per session.
    #[arg(long, default_value = "journal")]
    journal_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 5)]
    agents: usize,
    #[arg(long, default_value_t = 500)]
    pool_size: usize,
    #[arg(long, default_value_t = 100)]
    cohort_size: usize,
    /// Group consecutive cohort items into batches of this size.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = -0.4, allow_hyphen_values = true)]
    base: f64,
    #[arg(long, default_value_t = 0.5)]
    agent_spread: f64,
    #[arg(long, default_value_t = 0.6)]
    item_spread: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    specialist_rate: f64,
    #[arg(long, default_value_t = 1.2)]
    specialist_boost: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 validation, 2 infeasibility, 3 I/O.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Infeasible(_) | Error::NoCapacity => 2,
                Error::Io(_) => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Solve(a) => solve(g, a),
        Command::Backtest(a) => backtest(g, a),
        Command::TrainPredictor(a) => train(g, a),
        Command::Serve(a) => serve(g, a),
        Command::GenSynthetic(a) => gen_synthetic(g, a),
    }
}

fn flags(g: &Global, args: &impl Serialize) -> serde_json::Value {
    json!({ "global": g, "command": args })
}

fn read_input(path: &Path, manifest: &mut RunManifest) -> anyhow::Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(Error::Io).with_context(|| format!("reading {}", path.display()))?;
    manifest.input(path, &bytes);
    Ok(bytes)
}

fn write_output(dir: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(Error::Io).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(name, bytes);
    Ok(())
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> anyhow::Result<()> {
    fs::write(path, manifest.to_json() + "\n")
        .map_err(Error::Io)
        .with_context(|| format!("writing {}", path.display()))
}

fn print_stdout(bytes: &[u8], manifest: &mut RunManifest) -> anyhow::Result<()> {
    manifest.output("stdout", bytes);
    io::stdout().write_all(bytes).map_err(Error::Io)?;
    eprintln!("{}", manifest.to_json());
    Ok(())
}

/// Inline `1,2,3` list in agent order, or a CSV file with agent ids as header.
fn capacities(spec: Option<&str>, ids: &[String], n: usize, manifest: &mut RunManifest) -> anyhow::Result<AgentPool> {
    let Some(spec) = spec else {
        return Ok(even_capacities(ids.to_vec(), n));
    };
    let path = Path::new(spec);
    let values: Vec<u32> = if path.is_file() {
        let bytes = read_input(path, manifest)?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
        let header: Vec<String> = rdr.headers().map_err(Error::from)?.iter().map(str::to_string).collect();
        if header != ids {
            bail!(Error::InvalidInput(format!("capacity file {spec} does not list the agents in data order")));
        }
        let record = rdr
            .records()
            .next()
            .ok_or_else(|| Error::Parse(format!("capacity file {spec} has no data row")))?
            .map_err(Error::from)?;
        record
            .iter()
            .map(|v| v.parse().map_err(|_| Error::Parse(format!("bad capacity `{v}`"))))
            .collect::<Result<_, _>>()?
    } else {
        spec.split(',')
            .map(|v| v.trim().parse().map_err(|_| Error::InvalidInput(format!("bad capacity `{v}`"))))
            .collect::<Result<_, _>>()?
    };
    if values.len() != ids.len() {
        bail!(Error::DimensionMismatch {
            expected: ids.len(),
            actual: values.len(),
        });
    }
    Ok(AgentPool::new(ids.to_vec(), values)?)
}

fn solve(g: &Global, a: &SolveArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("solve", flags(g, a), g.seed);
    let bytes = read_input(&a.costs, &mut manifest)?;
    let matrix = read_matrix_csv(bytes.as_slice(), g.direction)?;
    let rows: Vec<Vec<f64>> = (0..matrix.n_rows()).map(|i| matrix.row(i).to_vec()).collect();
    let agents = match &a.capacities {
        None => AgentPool::new(matrix.col_ids().to_vec(), vec![1; matrix.n_cols()])?,
        Some(spec) => capacities(Some(spec), matrix.col_ids(), rows.len(), &mut manifest)?,
    };
    let (chosen, total_cost) = static_optimal_agents(&rows, &agents)?;
    let values: Vec<f64> = chosen.iter().enumerate().map(|(i, &j)| g.direction.from_cost(rows[i][j])).collect();
    let total: f64 = match g.direction {
        Direction::Min => total_cost,
        Direction::Max => values.iter().sum(),
    };
    let out = match g.format {
        Format::Json => {
            let assignment: Vec<_> = chosen
                .iter()
                .enumerate()
                .map(|(i, &j)| json!({ "item_id": matrix.row_ids()[i], "agent_id": agents.id(j), "value": values[i] }))
                .collect();
            let body = json!({ "schema": "v1", "direction": g.direction, "total": total, "assignment": assignment });
            serde_json::to_string_pretty(&body)? + "\n"
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["item_id", "agent_id", "value"]).map_err(Error::from)?;
            for (i, &j) in chosen.iter().enumerate() {
                w.write_record([matrix.row_ids()[i].as_str(), agents.id(j), &values[i].to_string()])
                    .map_err(Error::from)?;
            }
            w.write_record(["total", "", &total.to_string()]).map_err(Error::from)?;
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?
        }
    };
    print_stdout(out.as_bytes(), &mut manifest)
}

fn mechanism_configs(m: &MechanismArgs, seed: u64) -> anyhow::Result<Vec<MechanismConfig>> {
    let sampling = if m.exhaustive {
        dynassign::mechanisms::Sampling::Exhaustive
    } else {
        dynassign::mechanisms::Sampling::MonteCarlo
    };
    m.mechanism
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            let mechanism = match name {
                "greedy" => Mechanism::Greedy,
                "min_risk" => Mechanism::MinRisk {
                    m: m.m.unwrap_or(DEFAULT_MIN_RISK_DRAWS),
                },
                "approx_min_risk" => Mechanism::ApproxMinRisk {
                    m: m.m.unwrap_or(DEFAULT_APPROX_DRAWS),
                },
                "weighted_cq" => Mechanism::WeightedCq { lambda: m.lambda },
                "sequential_cq" => Mechanism::SequentialCq { t: m.t },
                "predicted" => Mechanism::Predicted,
                other => bail!(Error::InvalidInput(format!("unknown mechanism `{other}`"))),
            };
            let config = MechanismConfig {
                sampling,
                ..MechanismConfig::new(mechanism, seed)
            };
            config.validate()?;
            Ok(config)
        })
        .collect()
}

fn backtest(g: &Global, a: &BacktestArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("backtest", flags(g, a), g.seed);
    let cohort = read_cohort_csv(read_input(&a.cohort, &mut manifest)?.as_slice(), g.direction)?;
    let pool = read_pool_csv(read_input(&a.pool, &mut manifest)?.as_slice(), g.direction)?;
    let agents = capacities(a.capacities.as_deref(), cohort.agent_ids(), cohort.len(), &mut manifest)?;
    let ensemble = match &a.ensemble {
        Some(path) => Some(decode_ensemble(&read_input(path, &mut manifest)?)?),
        None => None,
    };
    let configs = mechanism_configs(&a.mechanisms, g.seed)?;
    let inputs = BacktestInputs {
        cohort: &cohort,
        pool: &pool,
        agents: &agents,
        ensemble: ensemble.as_ref(),
    };
    let options = BacktestOptions {
        replications: a.replications,
        direction: g.direction,
        use_batches: !a.ignore_batches,
    };
    let result = run_backtest(&inputs, &configs, &options)?;
    let result_json = result.to_json()? + "\n";
    let mut plot = Vec::new();
    emit_plot_data(&result, &mut plot)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(Error::Io)?;
            let mut trace = Vec::new();
            result.write_trace_jsonl(&mut trace)?;
            write_output(dir, "result.json", result_json.as_bytes(), &mut manifest)?;
            write_output(dir, "trace.jsonl", &trace, &mut manifest)?;
            write_output(dir, "plot.csv", &plot, &mut manifest)?;
            write_manifest(&dir.join("manifest.json"), &manifest)?;
            for run in result.runs() {
                println!("{:<28} {:.6} ± {:.6}", run.label, run.mean_outcome, run.ci_half_width);
            }
            Ok(())
        }
        None => match g.format {
            Format::Json => print_stdout(result_json.as_bytes(), &mut manifest),
            Format::Csv => print_stdout(&plot, &mut manifest),
        },
    }
}

fn train(g: &Global, a: &TrainArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("train-predictor", flags(g, a), g.seed);
    let pool = read_pool_csv(read_input(&a.pool, &mut manifest)?.as_slice(), g.direction)?;
    let agents = capacities(a.capacities.as_deref(), pool.agent_ids(), a.horizon, &mut manifest)?;
    let ensemble = train_ensemble(&pool, &agents, &EnsembleConfig::new(a.runs, a.horizon, g.seed))?;
    let bytes = encode_ensemble(&ensemble)?;
    fs::write(&a.out, &bytes)
        .map_err(Error::Io)
        .with_context(|| format!("writing {}", a.out.display()))?;
    manifest.output(&a.out.display().to_string(), &bytes);
    let mut manifest_path = a.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    write_manifest(Path::new(&manifest_path), &manifest)?;
    let text = match g.format {
        Format::Json => {
            serde_json::to_string_pretty(&json!({
                "schema": "v1",
                "agents": ensemble.agent_ids,
                "runs": ensemble.runs(),
                "horizon": a.horizon,
                "constant_models": ensemble.constant_counts(),
                "out": a.out,
            }))? + "\n"
        }
        Format::Csv => summary(&ensemble),
    };
    io::stdout().write_all(text.as_bytes()).map_err(Error::Io)?;
    Ok(())
}

fn serve(g: &Global, a: &ServeArgs) -> anyhow::Result<()> {
    let manifest = RunManifest::new("serve", flags(g, a), g.seed);
    eprintln!("{}", manifest.to_json());
    let state = AppState::recover(&a.journal_dir)?;
    let runtime = tokio::runtime::Runtime::new().map_err(Error::Io)?;
    runtime.block_on(dynassign_service::serve(a.addr, state)).map_err(Error::Io)?;
    Ok(())
}

fn gen_synthetic(g: &Global, a: &SyntheticArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("gen-synthetic", flags(g, a), g.seed);
    let config = SyntheticConfig {
        n_agents: a.agents,
        base: a.base,
        agent_spread: a.agent_spread,
        item_spread: a.item_spread,
        noise: a.noise,
        specialist_rate: a.specialist_rate,
        specialist_boost: a.specialist_boost,
    };
    if a.batch_size == Some(0) {
        bail!(Error::InvalidInput("batch size must be positive".into()));
    }
    let world = SyntheticWorld::new(config, g.seed)?;
    let ids = world.agent_ids();
    let pool = world.pool(a.pool_size)?;
    let items = world
        .cohort(a.cohort_size)
        .into_iter()
        .enumerate()
        .map(|(i, costs)| CohortItem {
            item_id: format!("i{}", i + 1),
            batch_id: a.batch_size.map(|b| format!("b{}", i / b + 1)),
            costs,
        })
        .collect();
    let cohort = Cohort::new(ids.clone(), items)?;
    let caps = even_capacities(ids.clone(), a.cohort_size);

    fs::create_dir_all(&a.out).map_err(Error::Io)?;
    let mut pool_csv = Vec::new();
    write_vectors_csv(&mut pool_csv, &ids, pool.vectors(), g.direction)?;
    let mut cohort_csv = Vec::new();
    write_cohort_csv(&mut cohort_csv, &cohort, g.direction)?;
    let caps_csv = format!(
        "{}\n{}\n",
        ids.join(","),
        caps.capacities().iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    );
    write_output(&a.out, "pool.csv", &pool_csv, &mut manifest)?;
    write_output(&a.out, "cohort.csv", &cohort_csv, &mut manifest)?;
    write_output(&a.out, "capacities.csv", caps_csv.as_bytes(), &mut manifest)?;
    write_manifest(&a.out.join("manifest.json"), &manifest)?;
    println!("wrote {} pool vectors and {} cohort items to {}", pool.len(), cohort.len(), a.out.display());
    Ok(())
}
