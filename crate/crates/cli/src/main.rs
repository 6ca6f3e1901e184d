use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use inferactive::dagdag::{Dag, ModelFamily};
use inferactive::datasets::load_csv;
use inferactive::pipeline::{
    parse_randomization, run_two_stage, LambdaChoice, Session, TwoStageConfig,
};
use inferactive::pivots::{InferOptions, InferenceRecord, Method, DEFAULT_CHAIN_STEPS};
use inferactive::simulate::{
    read_results, run_scenario, summarize, write_results, write_summary, Scenario, SummaryRow,
};
use inferactive::Error;

#[derive(Parser)]
#[command(
    name = "inferactive",
    version,
    about = "Selective inference for interactive data analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Step through an analysis one query at a time.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Screening, then the randomized LASSO with interactions, then inference.
    TwoStage(TwoStageArgs),
    /// Run a replication study from a scenario file.
    Simulate(SimulateArgs),
    /// Write estimates and intervals from a session or results file as CSV.
    Plotdata(PlotdataArgs),
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Start a session from a CSV file.
    Init(InitArgs),
    /// Run one selection query and record it.
    Query(QueryArgs),
    /// Inference for the current target.
    Infer(InferArgs),
    /// Print the session graph and any recorded inference.
    Show {
        #[arg(short, long)]
        session: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    GaussianMean,
    GaussianRegression,
    EmpiricalBootstrap,
}

impl From<Family> for ModelFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::GaussianMean => ModelFamily::GaussianMean,
            Family::GaussianRegression => ModelFamily::GaussianRegression,
            Family::EmpiricalBootstrap => ModelFamily::EmpiricalBootstrap,
        }
    }
}

#[derive(Args)]
struct InitArgs {
    /// CSV with a header row.
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long, value_enum, default_value = "gaussian-regression")]
    family: Family,
    /// Noise scale; estimated from the data when absent.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(short, long)]
    session: PathBuf,
    /// Replace an existing session file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(short, long)]
    session: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(subcommand)]
    query: Query,
}

#[derive(Subcommand)]
enum Query {
    /// Report the mean when √n·ȳ (+ ω) exceeds τ.
    Threshold {
        #[arg(long, allow_hyphen_values = true)]
        tau: f64,
        /// Randomization as family:scale, e.g. gaussian:1.0.
        #[arg(long)]
        rand: Option<String>,
    },
    /// Keep the columns whose standardized marginal statistic exceeds c.
    MarginalScreen {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        rand: Option<String>,
    },
    /// Randomized LASSO over the screened columns.
    Lasso {
        /// "theory" or a number.
        #[arg(long, default_value = "theory")]
        lam: LambdaChoice,
        /// Add pairwise interactions of the screened columns.
        #[arg(long)]
        interactions: bool,
        /// Scale of the Gaussian randomization.
        #[arg(long)]
        rand_scale: Option<f64>,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum InferMethod {
    Auto,
    Tg,
    PluginRandomized,
}

#[derive(Args)]
struct InferArgs {
    #[arg(short, long)]
    session: PathBuf,
    /// Target coordinates by index or label; all when absent.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    #[arg(long, value_enum, default_value = "auto")]
    method: InferMethod,
    /// Hypothesized target values, one per coordinate of the full target.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    null: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_CHAIN_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TwoStageArgs {
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2.5)]
    c: f64,
    /// Scale of the Gaussian screening randomization.
    #[arg(long, default_value_t = 1.0)]
    screen_rand: f64,
    #[arg(long, default_value = "theory")]
    lam: LambdaChoice,
    #[arg(long)]
    no_interactions: bool,
    #[arg(long)]
    lasso_rand: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    /// Where to write the session file.
    #[arg(short, long)]
    session: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: u64,
    /// Results CSV; the summary goes next to it as <stem>.summary.csv.
    #[arg(short, long)]
    out: PathBuf,
    /// Add a runtime_ms column (the output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PlotdataArgs {
    /// Session JSON or simulation results CSV.
    input: PathBuf,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("INFERACTIVE_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).with_context(|| {
            format!("INFERACTIVE_THREADS must be a positive integer, got '{v}'")
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::EmptySelection) => 2,
        Some(
            Error::Numerical { .. }
            | Error::NoConvergence { .. }
            | Error::BudgetExhausted { .. }
            | Error::LowEffectiveSampleSize { .. }
            | Error::NonMonotonePivot { .. }
            | Error::NonFinite(_)
            | Error::Degenerate(_)
            | Error::Tie { .. },
        ) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Session(SessionCommand::Init(a)) => init(a),
        Command::Session(SessionCommand::Query(a)) => query(a),
        Command::Session(SessionCommand::Infer(a)) => infer(a),
        Command::Session(SessionCommand::Show { session }) => {
            let s = load_session(&session)?;
            print!("{}", s.dag.render());
            if !s.dag.inference.is_empty() {
                println!();
                print_records(&s.dag.inference);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::TwoStage(a) => two_stage(a),
        Command::Simulate(a) => simulate(a),
        Command::Plotdata(a) => plotdata(a),
    }
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path
        .file_name()
        .context("output path has no file name")?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

fn load_session(path: &Path) -> anyhow::Result<Session> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading session {}", path.display()))?;
    let dag =
        Dag::from_json(&text).with_context(|| format!("session {} is corrupt", path.display()))?;
    Ok(Session::from_dag(dag)?)
}

fn save_session(path: &Path, s: &Session) -> anyhow::Result<()> {
    write_atomic(path, s.dag.to_json()?.as_bytes())
}

fn init(a: InitArgs) -> anyhow::Result<ExitCode> {
    if a.session.exists() && !a.force {
        bail!("{} exists; pass --force to replace it", a.session.display());
    }
    let ds =
        load_csv(&a.data, &a.response).with_context(|| format!("loading {}", a.data.display()))?;
    let s = Session::new(
        &ds,
        a.family.into(),
        a.sigma,
        Some(a.data.display().to_string()),
    )?;
    save_session(&a.session, &s)?;
    println!(
        "session {}: n = {}, p = {}, σ = {:.4}",
        a.session.display(),
        ds.n(),
        ds.p(),
        s.model().noise_scale
    );
    Ok(ExitCode::SUCCESS)
}

fn query(a: QueryArgs) -> anyhow::Result<ExitCode> {
    let mut s = load_session(&a.session)?;
    let rand = |r: &Option<String>| r.as_deref().map(parse_randomization).transpose();
    let selected: Vec<String> = match &a.query {
        Query::Threshold { tau, rand: r } => {
            if s.threshold(*tau, rand(r)?, a.seed)? {
                vec!["mean".into()]
            } else {
                Vec::new()
            }
        }
        Query::MarginalScreen { c, rand: r } => {
            s.screen(*c, rand(r)?, a.seed)?;
            s.target_labels()
        }
        Query::Lasso {
            lam,
            interactions,
            rand_scale,
        } => {
            s.lasso(*lam, *interactions, *rand_scale, a.seed)?;
            s.target_labels()
        }
    };
    save_session(&a.session, &s)?;
    if selected.is_empty() {
        eprintln!("{}", Error::EmptySelection);
        return Ok(ExitCode::from(2));
    }
    println!("selected ({}): {}", selected.len(), selected.join(" "));
    Ok(ExitCode::SUCCESS)
}

fn resolve_targets(requested: &[String], labels: &[String]) -> anyhow::Result<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..labels.len()).collect());
    }
    requested
        .iter()
        .map(|t| {
            labels
                .iter()
                .position(|l| l == t)
                .or_else(|| t.parse().ok().filter(|&k: &usize| k < labels.len()))
                .with_context(|| {
                    format!("unknown target '{t}'; the targets are {}", labels.join(" "))
                })
        })
        .collect()
}

fn infer(a: InferArgs) -> anyhow::Result<ExitCode> {
    let mut s = load_session(&a.session)?;
    let labels = s.target_labels();
    if labels.is_empty() {
        return Err(Error::EmptySelection.into());
    }
    let targets = resolve_targets(&a.targets, &labels)?;
    if !a.null.is_empty() {
        s.set_null(a.null.clone())?;
    }
    let opts = InferOptions {
        level: a.level,
        steps: a.steps,
        seed: a.seed,
        ..Default::default()
    };
    let records = s.infer_targets(&targets, &opts)?;
    let wanted = match a.method {
        InferMethod::Auto => None,
        InferMethod::Tg => Some(Method::Tg),
        InferMethod::PluginRandomized => Some(Method::PluginRandomized),
    };
    if let Some(m) = wanted {
        if let Some(r) = records.iter().find(|r| r.method != m) {
            bail!(
                "method {} does not apply to this session; its queries call for {}",
                m.name(),
                r.method.name()
            );
        }
    }
    save_session(&a.session, &s)?;
    print_records(&records);
    Ok(ExitCode::SUCCESS)
}

fn print_records(records: &[InferenceRecord]) {
    let width = records
        .iter()
        .map(|r| r.target.len())
        .max()
        .unwrap_or(0)
        .max(6);
    println!(
        "{:<width$}  {:>10}  {:>10}  {:>10}  {:>8}  {:>5}  method",
        "target", "estimate", "lower", "upper", "p-value", "level"
    );
    for r in records {
        println!(
            "{:<width$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8.4}  {:>5}  {}",
            r.target,
            r.estimate,
            r.lower,
            r.upper,
            r.pvalue,
            r.level,
            r.method.name()
        );
    }
}

fn two_stage(a: TwoStageArgs) -> anyhow::Result<ExitCode> {
    let ds =
        load_csv(&a.data, &a.response).with_context(|| format!("loading {}", a.data.display()))?;
    let cfg = TwoStageConfig {
        c: a.c,
        screen_randomization: a.screen_rand,
        lambda: a.lam,
        interactions: !a.no_interactions,
        lasso_randomization: a.lasso_rand,
        level: a.level,
        steps: a.steps,
    };
    let mut res = run_two_stage(&ds, &cfg, None, a.seed)?;
    res.session.dag.dataset = Some(ds.record(Some(a.data.display().to_string())));
    if let Some(path) = &a.session {
        save_session(path, &res.session)?;
    }
    let names = &ds.names;
    let screened: Vec<&str> = res.screened.iter().map(|&j| names[j].as_str()).collect();
    println!("screened ({}): {}", screened.len(), screened.join(" "));
    if res.screened.is_empty() {
        eprintln!("{}", Error::EmptySelection);
        return Ok(ExitCode::from(2));
    }
    let active: Vec<String> = res.active.iter().map(|f| f.label(names)).collect();
    println!("lasso ({}): {}", active.len(), active.join(" "));
    if res.active.is_empty() {
        eprintln!("{}", Error::EmptySelection);
        return Ok(ExitCode::from(2));
    }
    println!();
    print_records(&res.records);
    Ok(ExitCode::SUCCESS)
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(&a.scenario)
        .with_context(|| format!("reading {}", a.scenario.display()))?;
    let mut scenario =
        Scenario::from_json(&text).with_context(|| format!("scenario {}", a.scenario.display()))?;
    match &mut scenario {
        Scenario::Simple(s) => s.seed = a.seed,
        Scenario::TwoStage(s) => s.seed = a.seed,
    }
    let rows = run_scenario(&scenario)?;
    let summary = summarize(&rows);
    let mut buf = Vec::new();
    write_results(&rows, &mut buf, a.timing)?;
    write_atomic(&a.out, &buf)?;
    let mut buf = Vec::new();
    write_summary(&summary, &mut buf)?;
    write_atomic(&summary_path(&a.out), &buf)?;
    print_summary(&summary);
    Ok(ExitCode::SUCCESS)
}

fn print_summary(summary: &[SummaryRow]) {
    println!(
        "{:<18}  {:>6}  {:>8}  {:>8}  {:>10}",
        "method", "pivots", "KS", "coverage", "mean width"
    );
    for s in summary {
        let width = s.mean_width.map_or("-".to_string(), |w| format!("{w:.4}"));
        println!(
            "{:<18}  {:>6}  {:>8.4}  {:>8.4}  {:>10}",
            s.method, s.pivots, s.ks_uniform, s.coverage, width
        );
    }
}

struct PlotRow {
    name: String,
    estimate: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    pvalue: f64,
}

fn plotdata(a: PlotdataArgs) -> anyhow::Result<ExitCode> {
    let text =
        fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rows: Vec<PlotRow> = if text.trim_start().starts_with('{') {
        let s = load_session(&a.input)?;
        s.dag
            .inference
            .iter()
            .map(|r| PlotRow {
                name: r.target.clone(),
                estimate: r.estimate,
                lower: Some(r.lower),
                upper: Some(r.upper),
                pvalue: r.pvalue,
            })
            .collect()
    } else {
        read_results(text.as_bytes())?
            .into_iter()
            .map(|r| PlotRow {
                name: format!("{}/{}/{}", r.replication, r.method, r.target),
                estimate: r.estimate,
                lower: r.lower,
                upper: r.upper,
                pvalue: r.pvalue,
            })
            .collect()
    };
    if rows.is_empty() {
        bail!("no inference recorded in {}", a.input.display());
    }
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "estimate", "lower", "upper", "pvalue"])?;
    for r in &rows {
        w.write_record([
            r.name.clone(),
            r.estimate.to_string(),
            cell(r.lower),
            cell(r.upper),
            r.pvalue.to_string(),
        ])?;
    }
    let bytes = w.into_inner()?;
    match &a.out {
        Some(path) => write_atomic(path, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(ExitCode::SUCCESS)
}
