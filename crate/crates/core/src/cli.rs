//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code: 0 on success, 1 when a run completes
//! but too many replicates failed (or no tuning point worked), 2 for invalid
//! input.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::contrast::{pairs, StackedPairMatrix};
use crate::detection::{vote_set, DetectionResult, TauMode};
use crate::error::ClairError;
use crate::io;
use crate::metrics::median;
use crate::pipeline::{run_clair, ClairConfig, OmegaSpec};
use crate::prox::StepSize;
use crate::refinement::refine;
use crate::simulation::{
    gen_scenario, local_estimates, replicate_rng, run_batch, summarize, BatchSummary, Method, ReplicateReport,
    SimConfig,
};

/// Replicate success rate below which `simulate` exits with status 1.
pub const MIN_SUCCESS_RATE: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "clair", version, about = "Contamination-aware collaborative refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run Monte Carlo replicates of the multi-response regression benchmark.
    Simulate(SimulateArgs),
    /// Run the full pipeline on a directory of client weight files.
    Decompose(DecomposeArgs),
    /// Vote a collaborative set from a stacked orthogonal residual.
    Detect(DetectArgs),
    /// Refine client weights given a projector and a collaborative set.
    Refine(RefineArgs),
    /// Grid-search the penalty constants on pilot replicates.
    Tune(TuneArgs),
}

#[derive(Debug, Args)]
struct ClairArgs {
    /// JSON file with a full CLAIR configuration (as written by `tune`).
    /// Individual flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// c1 in lambda_L = c1 / sqrt(K).
    #[arg(long)]
    lambda_l_c1: Option<f64>,
    /// c2 in lambda_S = c2 / K^(3/2).
    #[arg(long)]
    lambda_s_c2: Option<f64>,
    /// `uniform` (1/K per pair) or a comma-separated list of G pair weights.
    #[arg(long, value_parser = parse_omega)]
    omega: Option<OmegaSpec>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `gap` for the largest-gap rule or `fixed:<value>`.
    #[arg(long, value_parser = parse_tau)]
    tau: Option<TauMode>,
    /// Fixed proximal step; defaults to 1 / (2 max omega).
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Shared row-space rank.
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 10)]
    q: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Client counts; a comma-separated list runs one batch per value.
    #[arg(long = "K", value_delimiter = ',', default_value = "10")]
    clients: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0.4)]
    contamination_frac: f64,
    /// Perturbation entries are Unif[-h, h] before the c / sqrt(q(p-r)) scaling.
    #[arg(long, default_value_t = 1.0)]
    perturbation_half_width: f64,
    /// Orthonormalize the rows of the shared factor A.
    #[arg(long)]
    orthonormal_a: bool,
    /// Base seed; falls back to CLAIR_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicates (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    clair: ClairArgs,
    #[arg(long, default_value = "clair-out")]
    out: PathBuf,
    /// Report formats to write.
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,
    /// Also write the inputs and in-process results of this replicate.
    #[arg(long)]
    dump: Option<usize>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// Directory holding client_0.mat, client_1.mat, ...
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    clair: ClairArgs,
    #[arg(long, default_value = "clair-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Stacked residual file (`orthogonal.stk` from `decompose`).
    #[arg(long)]
    orthogonal: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_parser = parse_tau, default_value = "gap")]
    tau: TauMode,
    #[arg(long, default_value = "clair-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RefineArgs {
    /// Directory holding client_0.mat, client_1.mat, ...
    #[arg(long)]
    input: PathBuf,
    /// p x p projector file (`projector.mat` from `decompose`).
    #[arg(long)]
    projector: PathBuf,
    /// Collaborative set as a comma-separated client list.
    #[arg(long, value_delimiter = ',', conflicts_with = "detection", required_unless_present = "detection")]
    set: Vec<usize>,
    /// Read the set from a detection JSON file instead.
    #[arg(long)]
    detection: Option<PathBuf>,
    #[arg(long, default_value = "clair-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    clair: ClairArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,1")]
    c1_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.3,1,3")]
    c2_grid: Vec<f64>,
    #[arg(long, default_value = "clair-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_omega(s: &str) -> Result<OmegaSpec, String> {
    if s == "uniform" {
        return Ok(OmegaSpec::Uniform);
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("invalid pair weight '{v}'")))
        .collect::<Result<Vec<_>, _>>()
        .map(OmegaSpec::List)
}

fn parse_tau(s: &str) -> Result<TauMode, String> {
    if s == "gap" {
        return Ok(TauMode::LargestGap);
    }
    match s.strip_prefix("fixed:") {
        Some(v) => v
            .parse::<f64>()
            .map(TauMode::Fixed)
            .map_err(|_| format!("invalid threshold '{v}'")),
        None => Err(format!("expected 'gap' or 'fixed:<value>', got '{s}'")),
    }
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn failed(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<ClairError> for CliError {
    fn from(e: ClairError) -> Self {
        let code = match e {
            ClairError::Numeric(_) | ClairError::Divergence(_) | ClairError::IllPosed(_) => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Refine(a) => cmd_refine(&a),
        Command::Tune(a) => cmd_tune(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

impl ClairArgs {
    fn resolve(&self) -> CliResult<ClairConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ClairError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
            }
            None => ClairConfig::default(),
        };
        if let Some(v) = self.lambda_l_c1 {
            cfg.lambda_l_c1 = v;
        }
        if let Some(v) = self.lambda_s_c2 {
            cfg.lambda_s_c2 = v;
        }
        if let Some(v) = &self.omega {
            cfg.omega = v.clone();
        }
        if let Some(v) = self.alpha {
            cfg.detection.alpha = v;
        }
        if let Some(v) = self.tau {
            cfg.detection.tau = v;
        }
        if let Some(v) = self.step {
            cfg.step = StepSize::Fixed(v);
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.rank {
            cfg.rank = v;
        }
        Ok(cfg)
    }
}

impl SimArgs {
    fn seed(&self) -> CliResult<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("CLAIR_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("CLAIR_SEED must be an unsigned integer, got '{v}'"))),
            Err(_) => Ok(0),
        }
    }

    fn configs(&self, rank: usize) -> CliResult<Vec<SimConfig>> {
        if self.clients.is_empty() {
            return Err(CliError::usage("--K needs at least one value"));
        }
        let seed = self.seed()?;
        self.clients
            .iter()
            .map(|&k| {
                let mut cfg = SimConfig::regime(self.p, self.q, self.n, k)
                    .with_replicates(self.reps)
                    .with_seed(seed);
                cfg.rank = rank;
                cfg.contamination_frac = self.contamination_frac;
                cfg.perturbation_half_width = self.perturbation_half_width;
                cfg.orthonormal_a = self.orthonormal_a;
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(CliError::usage("--jobs must be positive"));
            }
            builder = builder.num_threads(j);
        }
        builder
            .build()
            .map_err(|e| CliError::failed(format!("thread pool: {e}")))
    }
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| {
        ClairError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
        .into()
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn fmt_set(set: &BTreeSet<usize>) -> String {
    set.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ")
}

fn regime_label(cfg: &SimConfig) -> String {
    format!("p{}_q{}_n{}", cfg.p, cfg.q, cfg.n)
}

fn replicate_rows(cfg: &SimConfig, reports: &[ReplicateReport], out: &mut String) {
    let v = io::format_value;
    for r in reports {
        let regime = regime_label(cfg);
        match &r.outcome {
            Ok(o) => {
                let _ = writeln!(
                    out,
                    "{regime},{},{},{},ok,,{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.clients,
                    r.replicate,
                    r.base_seed,
                    v(o.contamination_level),
                    fmt_set(&o.benign_set),
                    fmt_set(&o.detected_set),
                    v(o.accuracy),
                    v(o.recall),
                    v(o.projector_error),
                    v(o.tau_used),
                    o.solver_iterations,
                    o.solver_converged,
                    o.empty_set_fallback,
                    v(o.errors.mean(Method::Local)),
                    v(o.errors.mean(Method::Clair)),
                    v(o.errors.mean(Method::FedAvg)),
                    v(o.errors.mean(Method::OracleFedAvg)),
                );
            }
            Err(msg) => {
                let msg = msg.replace(['"', '\n'], " ");
                let _ = writeln!(
                    out,
                    "{regime},{},{},{},failed,\"{msg}\",,,,,,,,,,,,,,",
                    r.clients, r.replicate, r.base_seed
                );
            }
        }
    }
}

const REPLICATE_HEADER: &str = "regime,K,replicate,base_seed,status,error,contamination_level,benign_set,\
detected_set,accuracy,recall,projector_error,tau,solver_iterations,solver_converged,empty_set_fallback,\
local_error,clair_error,fedavg_error,oracle_fedavg_error\n";

fn summary_rows(s: &BatchSummary, out: &mut String) {
    let regime = format!("p{}_q{}_n{}", s.p, s.q, s.n);
    let v = io::format_value;
    for m in &s.methods {
        for (scope, st) in [("all", &m.all_clients), ("benign", &m.benign_clients)] {
            for (stat, value) in [("mean", st.mean), ("median", st.median), ("sd", st.sd)] {
                let _ = writeln!(out, "{regime},{},{},{stat}_{scope},{}", s.clients, m.method, v(value));
            }
        }
    }
    for (name, st) in [
        ("accuracy", &s.accuracy),
        ("recall", &s.recall),
        ("projector_error", &s.projector_error),
    ] {
        for (stat, value) in [("mean", st.mean), ("median", st.median), ("sd", st.sd)] {
            let _ = writeln!(out, "{regime},{},detection,{name}_{stat},{}", s.clients, v(value));
        }
    }
    let _ = writeln!(out, "{regime},{},run,replicates,{}", s.clients, s.replicates);
    let _ = writeln!(out, "{regime},{},run,failures,{}", s.clients, s.failures);
}

fn print_summary(s: &BatchSummary) {
    println!(
        "(p,q)=({},{}) n={} K={:<3} Local {:.3}  CLAIR {:.3}  FedAvg(oracle) {:.3}  FedAvg {:.3}  \
accuracy {:.3}  recall {:.3}  median P-err {:.3}  failed {}/{}",
        s.p,
        s.q,
        s.n,
        s.clients,
        s.method(Method::Local).all_clients.mean,
        s.method(Method::Clair).all_clients.mean,
        s.method(Method::OracleFedAvg).all_clients.mean,
        s.method(Method::FedAvg).all_clients.mean,
        s.accuracy.mean,
        s.recall.mean,
        s.projector_error.median,
        s.failures,
        s.replicates,
    );
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    clair: &'a ClairConfig,
    batches: Vec<BatchReport<'a>>,
}

#[derive(Serialize)]
struct BatchReport<'a> {
    sim: &'a SimConfig,
    summary: &'a BatchSummary,
}

#[derive(Serialize)]
struct ScenarioManifest<'a> {
    sim: &'a SimConfig,
    clair: &'a ClairConfig,
    replicate: usize,
    benign_set: &'a BTreeSet<usize>,
    contamination_level: f64,
    detected_set: &'a BTreeSet<usize>,
}

fn dump_scenario(dir: &Path, cfg: &SimConfig, clair: &ClairConfig, replicate: usize) -> CliResult<()> {
    let mut rng = replicate_rng(cfg.base_seed, replicate as u64);
    let scenario = gen_scenario(cfg, &mut rng)?;
    let locals = local_estimates(&scenario)?;
    let out = run_clair(&locals, clair)?;
    io::write_client_dir(&dir.join("locals"), &locals)?;
    io::write_client_dir(&dir.join("truth"), &scenario.true_weights)?;
    io::write_client_dir(&dir.join("refined"), &out.estimates(&locals))?;
    io::write_matrix(&dir.join("projector.mat"), out.decomposition.projector.matrix())?;
    let manifest = ScenarioManifest {
        sim: cfg,
        clair,
        replicate,
        benign_set: &scenario.benign_set,
        contamination_level: scenario.contamination_level,
        detected_set: &out.detection.collaborative_set,
    };
    io::write_text(&dir.join("manifest.json"), &to_json(&manifest))?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let clair = a.clair.resolve()?;
    let configs = a.sim.configs(clair.rank)?;
    for cfg in &configs {
        clair.validate(cfg.clients)?;
    }
    if let Some(rep) = a.dump {
        if rep >= a.sim.reps {
            return Err(CliError::usage(format!("--dump {rep} is not below --reps {}", a.sim.reps)));
        }
    }
    let pool = a.sim.pool()?;
    ensure_dir(&a.out)?;

    let mut batches = Vec::new();
    for cfg in &configs {
        let reports = pool.install(|| run_batch(cfg, &clair));
        let summary = summarize(cfg, &reports);
        print_summary(&summary);
        batches.push((cfg, reports, summary));
    }

    if a.format.contains(&Format::Csv) {
        let mut reps = String::from(REPLICATE_HEADER);
        let mut long = String::from("regime,K,method,stat,value\n");
        let mut perr = String::from("regime,K,replicate,projector_error\n");
        let mut perr_median = String::from("regime,K,median_projector_error\n");
        for (cfg, reports, summary) in &batches {
            replicate_rows(cfg, reports, &mut reps);
            summary_rows(summary, &mut long);
            let mut errs = Vec::new();
            for r in reports {
                if let Some(o) = r.ok() {
                    errs.push(o.projector_error);
                    let _ = writeln!(
                        perr,
                        "{},{},{},{}",
                        regime_label(cfg),
                        cfg.clients,
                        r.replicate,
                        io::format_value(o.projector_error)
                    );
                }
            }
            let _ = writeln!(
                perr_median,
                "{},{},{}",
                regime_label(cfg),
                cfg.clients,
                io::format_value(median(&errs))
            );
        }
        io::write_text(&a.out.join("replicates.csv"), &reps)?;
        io::write_text(&a.out.join("summary.csv"), &long)?;
        io::write_text(&a.out.join("projector_errors.csv"), &perr)?;
        io::write_text(&a.out.join("projector_error_medians.csv"), &perr_median)?;
    }
    if a.format.contains(&Format::Json) {
        let report = SimulateReport {
            clair: &clair,
            batches: batches
                .iter()
                .map(|(cfg, _, summary)| BatchReport { sim: cfg, summary })
                .collect(),
        };
        io::write_text(&a.out.join("summary.json"), &to_json(&report))?;
    }
    if let Some(rep) = a.dump {
        for cfg in &configs {
            let dir = a
                .out
                .join("scenarios")
                .join(format!("K{}_rep{rep}", cfg.clients));
            dump_scenario(&dir, cfg, &clair, rep)?;
        }
    }

    let worst = batches
        .iter()
        .map(|(_, _, s)| s.success_rate())
        .fold(1.0, f64::min);
    if worst < MIN_SUCCESS_RATE {
        return Err(CliError::failed(format!(
            "only {:.0}% of replicates succeeded in the worst batch",
            worst * 100.0
        )));
    }
    Ok(())
}

fn block_norm_csv(detection: &DetectionResult) -> String {
    let clients = detection.vote_fractions.len();
    let mut out = String::from("g,j,k,norm,small\n");
    for pair in pairs(clients) {
        let norm = detection.block_norms[pair.g];
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            pair.g,
            pair.j,
            pair.k,
            io::format_value(norm),
            norm <= detection.tau_used
        );
    }
    out
}

#[derive(Serialize)]
struct TraceReport<'a> {
    iterations: usize,
    converged: bool,
    residual_norm: f64,
    projector_ambiguous: bool,
    objective: &'a [f64],
}

fn cmd_decompose(a: &DecomposeArgs) -> CliResult<()> {
    let clair = a.clair.resolve()?;
    let locals = io::read_client_dir(&a.input)?;
    let out = run_clair(&locals, &clair)?;
    ensure_dir(&a.out)?;
    let d = &out.decomposition;
    io::write_stacked(&a.out.join("contrast.stk"), &out.contrast)?;
    io::write_stacked(&a.out.join("low_rank.stk"), &d.low_rank)?;
    io::write_stacked(&a.out.join("sparse.stk"), &d.sparse)?;
    io::write_stacked(&a.out.join("orthogonal.stk"), &d.orthogonal)?;
    io::write_matrix(&a.out.join("projector.mat"), d.projector.matrix())?;
    io::write_text(&a.out.join("block_norms.csv"), &block_norm_csv(&out.detection))?;
    io::write_text(&a.out.join("detection.json"), &to_json(&out.detection))?;
    let trace = TraceReport {
        iterations: d.trace.iterations,
        converged: d.trace.converged,
        residual_norm: d.trace.residual_norm,
        projector_ambiguous: d.projector.ambiguous,
        objective: &d.trace.objective,
    };
    io::write_text(&a.out.join("trace.json"), &to_json(&trace))?;
    io::write_client_dir(&a.out.join("refined"), &out.estimates(&locals))?;
    if out.refinement.is_none() {
        eprintln!("warning: empty collaborative set; refined weights equal the inputs");
    }
    if d.projector.ambiguous {
        eprintln!("warning: rank-r singular subspace of the low-rank part is not unique");
    }
    println!(
        "K={} collaborative set {{{}}} tau {:.3} iterations {}{}",
        locals.len(),
        fmt_set(&out.detection.collaborative_set),
        out.detection.tau_used,
        d.trace.iterations,
        if d.trace.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn cmd_detect(a: &DetectArgs) -> CliResult<()> {
    let orthogonal: StackedPairMatrix = io::read_stacked(&a.orthogonal)?;
    let cfg = crate::detection::DetectionConfig {
        alpha: a.alpha,
        tau: a.tau,
        ..Default::default()
    };
    let det = vote_set(&orthogonal, &cfg)?;
    ensure_dir(&a.out)?;
    io::write_text(&a.out.join("detection.json"), &to_json(&det))?;
    io::write_text(&a.out.join("block_norms.csv"), &block_norm_csv(&det))?;
    println!(
        "collaborative set {{{}}} tau {:.3}",
        fmt_set(&det.collaborative_set),
        det.tau_used
    );
    Ok(())
}

fn cmd_refine(a: &RefineArgs) -> CliResult<()> {
    let locals = io::read_client_dir(&a.input)?;
    if locals.is_empty() {
        return Err(ClairError::InsufficientClients(0).into());
    }
    let p = io::read_matrix(&a.projector)?;
    let projector = crate::decomposition::RowProjector::from_projector_matrix(&p)?;
    let set: BTreeSet<usize> = match &a.detection {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ClairError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let det: DetectionResult = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            det.collaborative_set
        }
        None => a.set.iter().copied().collect(),
    };
    let refined = refine(&locals, &projector, &set)?;
    io::write_client_dir(&a.out.join("refined"), &refined.estimates())?;
    println!("refined {} of {} clients", refined.refined.len(), locals.len());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct TunePoint {
    lambda_l_c1: f64,
    lambda_s_c2: f64,
    accuracy: f64,
    recall: f64,
    clair_error: f64,
    local_error: f64,
    failures: usize,
}

/// Highest accuracy wins; ties go to the lower CLAIR error, then grid order.
fn select_point(points: &[TunePoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, pt) in points.iter().enumerate() {
        if !(pt.accuracy.is_finite() && pt.clair_error.is_finite()) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &points[b];
                let better = pt.accuracy > cur.accuracy
                    || (pt.accuracy == cur.accuracy && pt.clair_error < cur.clair_error);
                Some(if better { i } else { b })
            }
        };
    }
    best
}

fn cmd_tune(a: &TuneArgs) -> CliResult<()> {
    let base = a.clair.resolve()?;
    let configs = a.sim.configs(base.rank)?;
    if configs.len() != 1 {
        return Err(CliError::usage("tune takes a single --K value"));
    }
    let cfg = &configs[0];
    if a.c1_grid.is_empty() || a.c2_grid.is_empty() {
        return Err(CliError::usage("tuning grids must be non-empty"));
    }
    let pool = a.sim.pool()?;
    let mut points = Vec::new();
    for &c1 in &a.c1_grid {
        for &c2 in &a.c2_grid {
            let clair = ClairConfig {
                lambda_l_c1: c1,
                lambda_s_c2: c2,
                ..base.clone()
            };
            clair.validate(cfg.clients)?;
            let reports = pool.install(|| run_batch(cfg, &clair));
            let s = summarize(cfg, &reports);
            let pt = TunePoint {
                lambda_l_c1: c1,
                lambda_s_c2: c2,
                accuracy: s.accuracy.mean,
                recall: s.recall.mean,
                clair_error: s.method(Method::Clair).all_clients.mean,
                local_error: s.method(Method::Local).all_clients.mean,
                failures: s.failures,
            };
            println!(
                "c1 {c1:<8} c2 {c2:<8} accuracy {:.3}  recall {:.3}  CLAIR {:.3}  Local {:.3}",
                pt.accuracy, pt.recall, pt.clair_error, pt.local_error
            );
            points.push(pt);
        }
    }
    ensure_dir(&a.out)?;
    let mut csv = String::from("lambda_l_c1,lambda_s_c2,accuracy,recall,clair_error,local_error,failures\n");
    for pt in &points {
        let v = io::format_value;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            v(pt.lambda_l_c1),
            v(pt.lambda_s_c2),
            v(pt.accuracy),
            v(pt.recall),
            v(pt.clair_error),
            v(pt.local_error),
            pt.failures
        );
    }
    io::write_text(&a.out.join("tune.csv"), &csv)?;
    let Some(best) = select_point(&points) else {
        return Err(CliError::failed("every grid point failed"));
    };
    let chosen = ClairConfig {
        lambda_l_c1: points[best].lambda_l_c1,
        lambda_s_c2: points[best].lambda_s_c2,
        ..base
    };
    let path = a.out.join("clair_config.json");
    io::write_text(&path, &to_json(&chosen))?;
    println!(
        "selected c1 {} c2 {}; configuration written to {}",
        chosen.lambda_l_c1,
        chosen.lambda_s_c2,
        path.display()
    );
    Ok(())
}
