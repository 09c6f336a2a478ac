//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Diagnostics go to stderr; results go to `--out` files or stdout. Every
//! file written is accompanied by `<file>.manifest.json`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{
    lmmse_curve, monte_carlo_order, order_sweep, LmmseOptions, LmmseSolver, McConfig,
    SelectorSuite, SubsampleMode, SweepOptions,
};
use crate::numfmt::fmt_f64;
use crate::order_select::{
    cumulative_variance, select_order_proposed, select_order_variance, AlternatingOptions,
    MeanSource, SelectOptions, SelectionMethod, SplitPolicy, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::pdm::{fit_pdm, ClampMode};
use crate::shapes::{
    generalized_procrustes_with, landmark_table, load_shape_set, AlignMode, GpaOptions,
    InputFormat, ShapeSet, DEFAULT_GPA_MAX_ITER, DEFAULT_GPA_TOL,
};
use crate::simgen::{
    make_seed_pdm_procedural, sample_shapes, seed_pdm_from_data, CoefficientDist, SimConfig,
    SimulationTruth, Spectrum,
};

pub const THREADS_ENV: &str = "PDM_ORDER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pdm-order", version, about = "Point distribution models and model-order selection for 2D landmark shapes")]
pub struct Cli {
    /// Worker threads (defaults to PDM_ORDER_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generalized Procrustes alignment of a landmark file.
    Align(AlignArgs),
    /// Fit a PDM and write the model container.
    Fit(FitArgs),
    /// Select the model order.
    Select(SelectArgs),
    /// Generate synthetic shapes with a known order.
    Simulate(SimulateArgs),
    /// Monte Carlo order-recovery study on synthetic data.
    Montecarlo(MonteCarloArgs),
    /// Selected order versus number of training samples on ingested data.
    Sweep(SweepArgs),
    /// Leave-one-out missing-landmark error for every model order.
    Lmmse(LmmseArgs),
    /// Write the mean shape as landmark rows.
    MeanShape(MeanShapeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Csv,
    Dir,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Proposed,
    Variance,
}

impl From<MethodArg> for SelectionMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Proposed => SelectionMethod::ProposedAic,
            MethodArg::Variance => SelectionMethod::VarianceThreshold,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    FirstHalf,
    Shuffled,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MeanArg {
    X1,
    X2,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ClampArg {
    PerCoordinate,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BDistArg {
    Uniform,
    GaussianTruncated,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Treat the input as already aligned.
    #[arg(long)]
    pub no_align: bool,
    /// Rigid (rotation + translation) instead of similarity alignment.
    #[arg(long)]
    pub rigid: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AlignArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    #[arg(long)]
    pub rigid: bool,
    #[arg(long, default_value_t = DEFAULT_GPA_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_GPA_MAX_ITER)]
    pub max_iter: usize,
    /// Print the alignment report as key=value lines on stderr.
    #[arg(long)]
    pub report: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Keep only the leading modes.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "proposed")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.95)]
    pub fraction: f64,
    #[arg(long, value_enum, default_value = "first-half")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value = "x1")]
    pub mean: MeanArg,
    #[arg(long, value_enum, default_value = "per-coordinate")]
    pub clamp: ClampArg,
    #[arg(long)]
    pub warm_start: bool,
    /// Scores CSV: t, score, iterations, converged.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 40)]
    pub landmarks: usize,
    #[arg(long, default_value_t = 10)]
    pub order: usize,
    /// `geometric:<ratio>`, `geometric:<first>:<ratio>` or `list:<v1>,<v2>,...`.
    #[arg(long, default_value = "geometric:0.7")]
    pub spectrum: String,
    /// Seed of the procedural generating model.
    #[arg(long, default_value_t = 1)]
    pub model_seed: u64,
    /// Take the generating modes from an aligned landmark CSV instead.
    #[arg(long)]
    pub seed_model_from: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "uniform")]
    pub b_dist: BDistArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub beta_db: f64,
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub realign: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub out_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectorArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "proposed,variance")]
    pub methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 0.95)]
    pub fraction: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub beta_db: f64,
    /// Comma-separated sample counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub samples: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub selectors: SelectorArgs,
    /// Summary CSV; the histogram goes to `<out stem>.hist.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub samples: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the first M samples instead of random subsets.
    #[arg(long)]
    pub prefix: bool,
    #[command(flatten)]
    pub selectors: SelectorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LmmseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub pseudo_inverse: bool,
    #[command(flatten)]
    pub selectors: SelectorArgs,
    /// Curve CSV; selected orders go to `<out stem>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MeanShapeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Align(_) => "align",
            Command::Fit(_) => "fit",
            Command::Select(_) => "select",
            Command::Simulate(_) => "simulate",
            Command::Montecarlo(_) => "montecarlo",
            Command::Sweep(_) => "sweep",
            Command::Lmmse(_) => "lmmse",
            Command::MeanShape(_) => "mean-shape",
        }
    }

    fn rng_seed(&self) -> Option<u64> {
        match self {
            Command::Select(a) => Some(a.seed),
            Command::Simulate(a) => Some(a.seed),
            Command::Montecarlo(a) => Some(a.seed),
            Command::Sweep(a) => Some(a.seed),
            _ => None,
        }
    }
}

/// Provenance record written next to every output artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub rng_seed: Option<u64>,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// SHA-256 of the canonical JSON form of a command's configuration.
pub fn config_hash(command: &Command) -> String {
    let canonical = serde_json::to_string(command).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &Command, started_unix: u64) -> Self {
        RunManifest {
            command: command.name().to_string(),
            config_hash: config_hash(command),
            config: serde_json::to_value(command).expect("config serializes"),
            rng_seed: command.rng_seed(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            finished_unix: unix_now(),
        }
    }

    /// The configuration recorded in the manifest.
    pub fn command_config(&self) -> Result<Command> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::InvalidConfig(format!("manifest config: {e}")))
    }

    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }
}

/// Path next to `out` with its extension replaced by `suffix`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

struct Session<'a> {
    command: &'a Command,
    started: u64,
    stdout: &'a mut (dyn Write + Send),
    stderr: &'a mut (dyn Write + Send),
}

impl Session<'_> {
    fn note(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.stderr, "{}", msg.as_ref());
    }

    /// Writes `text` to `path` (plus manifest), or to stdout when `path` is `None`.
    fn emit(&mut self, path: Option<&Path>, text: &str) -> Result<()> {
        match path {
            Some(p) => write_artifact(p, text, self.command, self.started),
            None => self
                .stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e)),
        }
    }
}

fn write_artifact(path: &Path, text: &str, command: &Command, started: u64) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let manifest = RunManifest::new(command, started);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mpath = RunManifest::path_for(path);
    std::fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

fn input_format(f: FormatArg) -> InputFormat {
    match f {
        FormatArg::Csv => InputFormat::CsvRows,
        FormatArg::Dir => InputFormat::DirectoryOfFiles,
    }
}

fn load_input(args: &InputArgs, session: &mut Session<'_>) -> Result<ShapeSet> {
    let set = load_shape_set(&args.input, input_format(args.format))?;
    if args.no_align {
        return Ok(set.assume_aligned());
    }
    let opts = GpaOptions {
        mode: if args.rigid { AlignMode::Rigid } else { AlignMode::Similarity },
        ..GpaOptions::default()
    };
    let aligned = generalized_procrustes_with(&set, &opts)?;
    let report = aligned.alignment_report().expect("aligned set has a report");
    session.note(format!(
        "aligned {} shapes with generalized Procrustes ({} iterations, final change {})",
        set.len(),
        report.iterations,
        fmt_f64(report.final_change)
    ));
    Ok(aligned)
}

fn parse_spectrum(text: &str) -> Result<Spectrum> {
    let bad = || Error::InvalidConfig(format!("cannot parse spectrum {text:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if let Some(rest) = text.strip_prefix("geometric:") {
        let parts: Vec<&str> = rest.split(':').collect();
        return match parts.as_slice() {
            [ratio] => Ok(Spectrum::geometric(num(ratio)?)),
            [first, ratio] => Ok(Spectrum::Geometric {
                first: num(first)?,
                ratio: num(ratio)?,
            }),
            _ => Err(bad()),
        };
    }
    if let Some(rest) = text.strip_prefix("list:") {
        return Ok(Spectrum::FromList(rest.split(',').map(num).collect::<Result<_>>()?));
    }
    Err(bad())
}

fn seed_model(args: &ModelArgs) -> Result<crate::simgen::SeedPdm> {
    match &args.seed_model_from {
        Some(path) => {
            let set = load_shape_set(path, InputFormat::CsvRows)?;
            let aligned = generalized_procrustes_with(&set, &GpaOptions::default())?;
            seed_pdm_from_data(&aligned, args.order, &path.display().to_string())
        }
        None => make_seed_pdm_procedural(
            args.landmarks,
            args.order,
            &parse_spectrum(&args.spectrum)?,
            args.model_seed,
        ),
    }
}

fn coefficient_dist(b: BDistArg) -> CoefficientDist {
    match b {
        BDistArg::Uniform => CoefficientDist::UniformBox,
        BDistArg::GaussianTruncated => CoefficientDist::TruncatedGaussian,
    }
}

fn selector_suite(args: &SelectorArgs) -> SelectorSuite {
    SelectorSuite {
        methods: args.methods.iter().map(|&m| m.into()).collect(),
        variance_fraction: args.fraction,
        ..SelectorSuite::default()
    }
}

fn run_command(command: &Command, session: &mut Session<'_>) -> Result<()> {
    match command {
        Command::Align(a) => {
            let set = load_shape_set(&a.input, input_format(a.format))?;
            let opts = GpaOptions {
                tol: a.tol,
                max_iter: a.max_iter,
                mode: if a.rigid { AlignMode::Rigid } else { AlignMode::Similarity },
            };
            let aligned = generalized_procrustes_with(&set, &opts)?;
            if a.report {
                let report = aligned.alignment_report().expect("aligned");
                session.note(report.to_key_value().trim_end());
            }
            let mut buf = Vec::new();
            aligned.write_csv(&mut buf).map_err(|e| Error::io("<buffer>", e))?;
            session.emit(a.out.as_deref(), &String::from_utf8(buf).expect("ascii"))
        }
        Command::Fit(a) => {
            let set = load_input(&a.input, session)?;
            let model = fit_pdm(&set)?;
            let text = match a.order {
                Some(t) => model.truncate(t)?.to_text(),
                None => model.to_text(),
            };
            session.emit(a.out.as_deref(), &text)
        }
        Command::Select(a) => {
            let set = load_input(&a.input, session)?;
            let (t_star, csv) = match a.method {
                MethodArg::Variance => {
                    let model = fit_pdm(&set)?;
                    let t = select_order_variance(&model, a.fraction)?;
                    let mut csv = String::from("t,cumulative_fraction\n");
                    for (i, c) in cumulative_variance(&model)?.iter().enumerate() {
                        csv.push_str(&format!("{},{}\n", i + 1, fmt_f64(*c)));
                    }
                    (t, csv)
                }
                MethodArg::Proposed => {
                    let opts = SelectOptions {
                        t_max: a.t_max,
                        split: match a.split {
                            SplitArg::FirstHalf => SplitPolicy::FirstHalf,
                            SplitArg::Shuffled => SplitPolicy::Shuffled(a.seed),
                        },
                        mean_source: match a.mean {
                            MeanArg::X1 => MeanSource::FirstHalf,
                            MeanArg::X2 => MeanSource::SecondHalf,
                        },
                        fit: AlternatingOptions {
                            tol: a.tol,
                            max_iter: a.max_iter,
                            clamp: match a.clamp {
                                ClampArg::PerCoordinate => ClampMode::PerCoordinate,
                                ClampArg::Uniform => ClampMode::UniformScale,
                            },
                            ..AlternatingOptions::default()
                        },
                        warm_start: a.warm_start,
                        keep_fits: false,
                    };
                    let result = select_order_proposed(&set, &opts)?;
                    for (t, msg) in &result.failed_orders {
                        session.note(format!("order {t} excluded: {msg}"));
                    }
                    let under: Vec<usize> = result
                        .diagnostics
                        .iter()
                        .filter(|(_, d)| d.underdetermined)
                        .map(|(t, _)| *t)
                        .collect();
                    if !under.is_empty() {
                        session.note(format!(
                            "orders {}..={} have M2 <= t (underdetermined fits)",
                            under[0],
                            under[under.len() - 1]
                        ));
                    }
                    let mut csv = String::from("t,score,iterations,converged\n");
                    for (t, s) in &result.scores {
                        let d = &result.diagnostics[t];
                        csv.push_str(&format!("{},{},{},{}\n", t, fmt_f64(*s), d.iterations, d.converged));
                    }
                    (result.t_star, csv)
                }
            };
            if let Some(out) = &a.out {
                write_artifact(out, &csv, session.command, session.started)?;
            }
            let _ = writeln!(session.stdout, "t_star={t_star}");
            Ok(())
        }
        Command::Simulate(a) => {
            let seed = seed_model(&a.model)?;
            let mut cfg = SimConfig::new(a.samples, a.beta_db, a.seed);
            cfg.realign = a.realign;
            cfg.coefficients = coefficient_dist(a.model.b_dist);
            let set = sample_shapes(&seed, &cfg)?;
            let mut buf = Vec::new();
            set.write_csv(&mut buf).map_err(|e| Error::io("<buffer>", e))?;
            session.emit(a.out.as_deref(), &String::from_utf8(buf).expect("ascii"))?;
            if let Some(path) = &a.out_truth {
                let truth = SimulationTruth::new(&seed, &cfg);
                let json = serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n";
                write_artifact(path, &json, session.command, session.started)?;
            }
            Ok(())
        }
        Command::Montecarlo(a) => {
            let seed = seed_model(&a.model)?;
            let mut cfg = McConfig::new(seed, a.beta_db, a.samples.clone(), a.trials, a.seed);
            cfg.selectors = selector_suite(&a.selectors);
            cfg.coefficients = coefficient_dist(a.model.b_dist);
            let summary = monte_carlo_order(&cfg)?;
            for (m, k, msg) in &summary.failure_log {
                session.note(format!("trial {k} at M={m} failed: {msg}"));
            }
            session.emit(a.out.as_deref(), &summary.to_csv())?;
            if let Some(out) = &a.out {
                write_artifact(&sidecar(out, ".hist.csv"), &summary.histogram_csv(), session.command, session.started)?;
            }
            if summary.failures > 0 {
                session.note(format!("{} trials failed", summary.failures));
            }
            Ok(())
        }
        Command::Sweep(a) => {
            let set = load_input(&a.input, session)?;
            let opts = SweepOptions {
                selectors: selector_suite(&a.selectors),
                subsample: if a.prefix { SubsampleMode::Prefix } else { SubsampleMode::Random },
            };
            let summary = order_sweep(&set, &a.samples, a.trials, a.seed, &opts)?;
            for (m, k, msg) in &summary.failure_log {
                session.note(format!("trial {k} at M={m} failed: {msg}"));
            }
            session.emit(a.out.as_deref(), &summary.to_csv())?;
            if let Some(out) = &a.out {
                write_artifact(&sidecar(out, ".hist.csv"), &summary.histogram_csv(), session.command, session.started)?;
            }
            Ok(())
        }
        Command::Lmmse(a) => {
            let set = load_input(&a.input, session)?;
            let opts = LmmseOptions {
                solver: if a.pseudo_inverse { LmmseSolver::PseudoInverse } else { LmmseSolver::Ridge },
                selectors: Some(selector_suite(&a.selectors)),
            };
            let result = lmmse_curve(&set, &opts)?;
            session.emit(a.out.as_deref(), &result.to_csv())?;
            let json = serde_json::to_string_pretty(&result.selected_json()).expect("json") + "\n";
            match &a.out {
                Some(out) => write_artifact(&sidecar(out, ".json"), &json, session.command, session.started)?,
                None => session.note(json.trim_end()),
            }
            Ok(())
        }
        Command::MeanShape(a) => {
            let set = load_input(&a.input, session)?;
            session.emit(a.out.as_deref(), &landmark_table(&set.mean_shape()))
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 1,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn thread_count(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn dispatch_with(argv: &[String], stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            return 1;
        }
    };
    let mut session = Session {
        command: &cli.command,
        started: unix_now(),
        stdout,
        stderr,
    };
    let outcome = match threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run_command(&cli.command, &mut session)),
            Err(e) => Err(Error::InvalidConfig(format!("thread pool: {e}"))),
        },
        None => run_command(&cli.command, &mut session),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            session.note(format!("error: {e}"));
            exit_code(&e)
        }
    }
}

pub fn dispatch(argv: &[String]) -> i32 {
    dispatch_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
