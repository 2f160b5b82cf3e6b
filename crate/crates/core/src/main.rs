use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gflin::data::{load_dataset, make_split, synth_sbm_with, write_dataset, write_split, LabeledDataset, SbmParams};
use gflin::diagnostics::{limit_report, write_report_csv, write_report_json};
use gflin::experiment::{
    run_gd, run_gf, split_filter, summarize, sweep, time_fits, unix_timestamp, write_summary_csv, write_sweep_csv,
    write_timing_csv, LambdaChoice, Metrics, Mode, RunRecord, Solver, SweepPlan,
};
use gflin::graph::{read_edges, read_features, Graph};
use gflin::kernel::{default_lambda_grid, save_model};
use gflin::logreg::{gradient_stats, write_trace_csv, OptimizerConfig};
use gflin::{Error, ErrorKind, FilterConfig, NormKind, Result, DEFAULT_TAU, DEFAULT_TERMINAL_TIME};

#[derive(Parser)]
#[command(name = "gflin", version, about = "Closed-form training of linearized graph convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and report test accuracy.
    Train(TrainArgs),
    /// Accuracy table over filter kinds, depths, seeds and modes.
    Sweep(SweepArgs),
    /// Centered-norm curves, limit residuals and step-0 gradient statistics.
    Diagnose(DiagnoseArgs),
    /// Closed-form fit time against gradient-descent training time.
    Time(TimeArgs),
    /// Write a stochastic block model dataset.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Sgc,
    Ssgc,
    Dgc,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Gf,
    Gd,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gf => Mode::Gf,
            ModeArg::Gd => Mode::Gd,
        }
    }
}

fn parse_norm(s: &str) -> std::result::Result<NormKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "terminal-time")]
    terminal_time: Option<f64>,
    /// sym, row or rw
    #[arg(long, value_parser = parse_norm)]
    norm: Option<NormKind>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "split-seed", default_value_t = 0)]
    split_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.1,0.8")]
    ratios: Vec<f64>,
}

#[derive(Args)]
struct LambdaArgs {
    #[arg(long, conflicts_with = "lambda_grid")]
    lambda: Option<f64>,
    /// Comma-separated values; without a value, 1e-4..1e4 by decades.
    #[arg(long = "lambda-grid", value_delimiter = ',', num_args = 0..)]
    lambda_grid: Option<Vec<f64>>,
}

impl LambdaArgs {
    fn choice(&self) -> LambdaChoice {
        match (&self.lambda, &self.lambda_grid) {
            (Some(l), _) => LambdaChoice::Fixed(*l),
            (None, Some(g)) if !g.is_empty() => LambdaChoice::Grid(g.clone()),
            _ => LambdaChoice::Grid(default_lambda_grid()),
        }
    }
}

#[derive(Args)]
struct OptimizerArgs {
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long = "learning-rate", default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long = "weight-decay", default_value_t = 0.0)]
    weight_decay: f64,
}

impl OptimizerArgs {
    fn config(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    filter: Kind,
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    filter_args: FilterArgs,
    #[command(flatten)]
    lambda: LambdaArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_enum, default_value = "gf")]
    mode: ModeArg,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Initialization seed for gradient descent.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file (gf) or loss trace CSV (gd).
    #[arg(long)]
    out: PathBuf,
    /// Also write the run record here.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Also write the split here.
    #[arg(long = "split-out")]
    split_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "sgc")]
    filter: Vec<Kind>,
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[command(flatten)]
    filter_args: FilterArgs,
    #[command(flatten)]
    lambda: LambdaArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "gf")]
    mode: Vec<ModeArg>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Per-cell CSV; the per-(kind, K, mode) summary goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Enables step-0 gradient statistics and loss traces.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    filter: Kind,
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[command(flatten)]
    filter_args: FilterArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TimeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    filter: Kind,
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[command(flatten)]
    filter_args: FilterArgs,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "n-per-block")]
    n_per_block: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long = "p-in")]
    p_in: f64,
    #[arg(long = "p-out")]
    p_out: f64,
    #[arg(long = "feature-dim")]
    feature_dim: usize,
    #[arg(long = "mean-scale", default_value_t = 1.0)]
    mean_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes `<out>.edges`, `<out>.features` and `<out>.labels`.
    #[arg(long)]
    out: PathBuf,
}

fn filter_config(kind: Kind, k: usize, args: &FilterArgs, default_norm: NormKind) -> Result<FilterConfig> {
    let norm = args.norm.unwrap_or(default_norm);
    let config = match kind {
        Kind::Sgc => {
            if args.tau.is_some() || args.terminal_time.is_some() {
                return Err(Error::Config("--tau and --terminal-time do not apply to sgc".into()));
            }
            FilterConfig::sgc(k)
        }
        Kind::Ssgc => {
            if args.terminal_time.is_some() {
                return Err(Error::Config("--terminal-time applies only to dgc".into()));
            }
            FilterConfig::ssgc(k, args.tau.unwrap_or(DEFAULT_TAU))
        }
        Kind::Dgc => {
            if args.tau.is_some() {
                return Err(Error::Config("--tau applies only to ssgc".into()));
            }
            FilterConfig::dgc(k, args.terminal_time.unwrap_or(DEFAULT_TERMINAL_TIME))
        }
    }
    .with_norm(norm);
    config.validate()?;
    Ok(config)
}

/// Checks flag combinations for a list of kinds, rejecting hyperparameters
/// no listed kind uses.
fn filter_configs(kinds: &[Kind], args: &FilterArgs, default_norm: NormKind) -> Result<Vec<FilterConfig>> {
    if args.tau.is_some() && !kinds.contains(&Kind::Ssgc) {
        return Err(Error::Config("--tau given but no ssgc filter requested".into()));
    }
    if args.terminal_time.is_some() && !kinds.contains(&Kind::Dgc) {
        return Err(Error::Config("--terminal-time given but no dgc filter requested".into()));
    }
    kinds
        .iter()
        .map(|&kind| {
            let own = FilterArgs {
                tau: if kind == Kind::Ssgc { args.tau } else { None },
                terminal_time: if kind == Kind::Dgc { args.terminal_time } else { None },
                norm: args.norm,
            };
            filter_config(kind, 1, &own, default_norm)
        })
        .collect()
}

fn ratios(split: &SplitArgs) -> Result<[f64; 3]> {
    split
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config(format!("--ratios needs three values, got {}", split.ratios.len())))
}

fn load(data: &DataArgs) -> Result<LabeledDataset<f64>> {
    load_dataset(&data.edges, &data.features, &data.labels)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = filter_config(a.filter, a.k, &a.filter_args, NormKind::Symmetric)?;
    let dataset = load(&a.data)?;
    let split = make_split(dataset.num_nodes(), ratios(&a.split)?, a.split.split_seed)?;
    if let Some(p) = &a.split_out {
        write_split(p, &split)?;
    }
    let sf = split_filter(&dataset, &split, &config)?;
    let (solver, metrics): (Solver, Metrics) = match a.mode {
        ModeArg::Gf => {
            let out = run_gf(&dataset, &split, &sf, &a.lambda.choice())?;
            save_model(&a.out, &config, &out.model)?;
            (out.solver, out.metrics)
        }
        ModeArg::Gd => {
            if a.lambda.lambda.is_some() || a.lambda.lambda_grid.is_some() {
                return Err(Error::Config("--lambda and --lambda-grid apply only to --mode gf".into()));
            }
            let opt = a.optimizer.config(a.seed);
            let out = run_gd(&dataset, &split, &sf, &opt)?;
            write_trace_csv(&a.out, &out.model.training_trace)?;
            (Solver::GradientDescent(opt), out.metrics)
        }
    };
    let record = RunRecord {
        command: "train".into(),
        dataset: dataset.name.clone(),
        filter: config,
        solver,
        split_seed: a.split.split_seed,
        metrics,
        timestamp: unix_timestamp(),
    };
    if let Some(p) = &a.record {
        std::fs::write(p, serde_json::to_string_pretty(&record)? + "\n").map_err(|e| Error::io(p, e))?;
    }
    print_json(&record)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let kinds = filter_configs(&a.filter, &a.filter_args, NormKind::Symmetric)?;
    let modes: Vec<Mode> = a.mode.iter().map(|&m| m.into()).collect();
    let dataset = load(&a.data)?;
    let split = make_split(dataset.num_nodes(), ratios(&a.split)?, a.split.split_seed)?;
    let plan = SweepPlan {
        kinds,
        depths: a.k.clone(),
        seeds: a.seeds.clone(),
        modes,
        lambda: a.lambda.choice(),
        optimizer: a.optimizer.config(0),
    };
    let rows = sweep(&dataset, &split, &plan)?;
    write_sweep_csv(&a.out, &rows)?;
    let summary = summarize(&rows);
    write_summary_csv(&sibling(&a.out, "_summary.csv"), &summary)?;
    print_json(&summary)
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let mut k_values = a.k.clone();
    k_values.sort_unstable();
    k_values.dedup();
    let config = filter_config(a.filter, 1, &a.filter_args, NormKind::RandomWalk)?;
    let graph: Graph<f64> = Graph::new(&read_edges(&a.edges)?, read_features(&a.features)?)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let report = limit_report(&graph, &config, &k_values)?;
    write_report_json(&a.out.join("report.json"), &report)?;
    write_report_csv(&a.out.join("curve.csv"), &report)?;

    if let Some(labels) = &a.labels {
        let dataset = load_dataset(&a.edges, &a.features, labels)?;
        let split = make_split(dataset.num_nodes(), ratios(&a.split)?, a.split.split_seed)?;
        let opt = a.optimizer.config(a.seed);
        let mut csv = String::from("K,median_abs,p05,p95,max_abs\n");
        for &k in &k_values {
            let sf = split_filter(&dataset, &split, &config.with_depth(k))?;
            let out = run_gd(&dataset, &split, &sf, &opt)?;
            let s = gradient_stats(&out.model);
            csv.push_str(&format!("{k},{:e},{:e},{:e},{:e}\n", s.median_abs, s.p05, s.p95, s.max_abs));
            write_trace_csv(&a.out.join(format!("trace_k{k}.csv")), &out.model.training_trace)?;
        }
        let p = a.out.join("gradients.csv");
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    }
    print_json(&serde_json::json!({
        "vanishing": report.vanishing,
        "connected": report.graph_preconditions.connected,
        "bipartite": report.graph_preconditions.bipartite,
        "qualitative": report.qualitative,
    }))
}

fn cmd_time(a: &TimeArgs) -> Result<()> {
    let config = filter_config(a.filter, 1, &a.filter_args, NormKind::Symmetric)?;
    let dataset = load(&a.data)?;
    let split = make_split(dataset.num_nodes(), ratios(&a.split)?, a.split.split_seed)?;
    let rows = time_fits(&dataset, &split, &config, &a.k, a.lambda, &a.optimizer.config(0))?;
    write_timing_csv(&a.out, &rows)?;
    print_json(&rows)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let params = SbmParams {
        n_per_block: a.n_per_block,
        num_blocks: a.blocks,
        p_in: a.p_in,
        p_out: a.p_out,
        feature_dim: a.feature_dim,
        mean_scale: a.mean_scale,
        seed: a.seed,
    };
    let s = synth_sbm_with::<f64>(&params)?;
    let with_ext = |ext: &str| {
        let mut p = a.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    write_dataset(&s.dataset, &with_ext(".edges"), &with_ext(".features"), &with_ext(".labels"))?;
    print_json(&s.connectivity)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("GFLIN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("GFLIN_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Time(a) => cmd_time(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
