//! Commands behind the `odedbn` binary: compile a model to DOT, run
//! inference from a run configuration, and run a benchmark case.
//!
//! A run configuration is a flat `key = value` file (`#` starts a comment):
//!
//! ```text
//! model = lorenz.model
//! evidence.X = lorenz_X.csv instantaneous
//! mode = adaptive            # or fixed
//! step = 0.01                # fixed mode; defaults to the natural step
//! report_interval = 0.05     # adaptive mode
//! tolerance = 0.1            # adaptive mode
//! particles = 20000
//! seed = 1
//! t_start = 0
//! t_end = 5
//! run_in_end = 0.35
//! output = out
//! reference = reference.csv  # optional, enables rmse/mae
//! target = X                 # state scored against the reference
//! workers = 4
//! ```
//!
//! Relative paths are resolved against the configuration file's directory.
//! Command-line flags override file values.
//!
//! `summaries.csv` has a `time` column followed by `<name>_mean,<name>_std`
//! for every state and then every parameter, in declaration order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::adaptive::{run_inference, InferenceOutcome};
use crate::compiler::{compile, export_dot};
use crate::engine::{summaries_csv, InferenceConfig, InferenceMode, ResamplingPolicy, StepSummary};
use crate::evidence::{load_csv, EvidenceMode, EvidenceSet, TIME_TOLERANCE};
use crate::model::{validate_model, ModelFile, OdeModel};
use crate::oracle::{compute_metrics, predicted_series, BenchmarkCase, ReferenceTrajectory, CASE_NAMES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFERENCE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("inference failed: {0}")]
    Inference(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Inference(_) => EXIT_INFERENCE,
        }
    }
}

fn input(e: impl ToString) -> CliError {
    CliError::Input(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| input(format!("creating {}: {e}", dir.display())))?;
        }
    }
    fs::write(path, contents).map_err(|e| input(format!("writing {}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "odedbn", version, about = "Particle-filter inference for ODE models compiled to dynamic Bayesian networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a model file, write <name>.dot and print node counts.
    Compile {
        model: PathBuf,
        /// Directory for the DOT file.
        #[arg(short, long, default_value = ".")]
        output: PathBuf,
    },
    /// Run inference from a key=value run configuration.
    Infer {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate data for a benchmark case and run inference on it.
    Benchmark {
        case: String,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Flags that override run-configuration keys.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub step: Option<String>,
    #[arg(long)]
    pub report_interval: Option<String>,
    #[arg(long)]
    pub tolerance: Option<String>,
    #[arg(long)]
    pub particles: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub t_start: Option<String>,
    #[arg(long)]
    pub t_end: Option<String>,
    #[arg(long)]
    pub run_in_end: Option<String>,
    #[arg(short, long)]
    pub output: Option<String>,
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    /// Any other key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        let named = [
            ("model", &self.model),
            ("mode", &self.mode),
            ("step", &self.step),
            ("report_interval", &self.report_interval),
            ("tolerance", &self.tolerance),
            ("particles", &self.particles),
            ("seed", &self.seed),
            ("t_start", &self.t_start),
            ("t_end", &self.t_end),
            ("run_in_end", &self.run_in_end),
            ("output", &self.output),
            ("reference", &self.reference),
            ("target", &self.target),
            ("workers", &self.workers),
        ];
        let mut out: Vec<(String, String)> = named
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| input(format!("--set expects KEY=VALUE, got `{s}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

const KEYS: [&str; 14] = [
    "model",
    "mode",
    "step",
    "report_interval",
    "tolerance",
    "particles",
    "seed",
    "t_start",
    "t_end",
    "run_in_end",
    "output",
    "reference",
    "target",
    "workers",
];

/// A parsed run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: PathBuf,
    /// Evidence files by target, overriding those named in the model file.
    pub evidence: BTreeMap<String, (PathBuf, Option<EvidenceMode>)>,
    /// `None` fields fall back to model-derived defaults.
    pub mode: Option<String>,
    pub step: Option<f64>,
    pub report_interval: Option<f64>,
    pub tolerance: Option<f64>,
    pub particles: usize,
    pub seed: u64,
    pub t_start: f64,
    pub t_end: Option<f64>,
    pub run_in_end: Option<f64>,
    pub output: PathBuf,
    pub reference: Option<PathBuf>,
    pub target: Option<String>,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Parses `key = value` text; `overrides` are applied after the file.
    /// Relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
        let mut raw: Vec<(String, String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| input(format!("line {}: expected `key = value`", i + 1)))?;
            raw.push((k.trim().to_string(), v.trim().to_string(), format!("line {}", i + 1)));
        }
        raw.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone(), format!("flag --{k}"))));

        let mut values: BTreeMap<String, (String, String)> = BTreeMap::new();
        let mut evidence = BTreeMap::new();
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        for (k, v, origin) in raw {
            if let Some(target) = k.strip_prefix("evidence.") {
                let mut words = v.split_whitespace();
                let path = words.next().ok_or_else(|| input(format!("{origin}: evidence needs a path")))?;
                let mode = words
                    .next()
                    .map(|m| m.parse::<EvidenceMode>().map_err(|e| input(format!("{origin}: {e}"))))
                    .transpose()?;
                evidence.insert(target.to_string(), (resolve(path), mode));
            } else if KEYS.contains(&k.as_str()) {
                values.insert(k, (v, origin));
            } else {
                return Err(input(format!("{origin}: unknown key `{k}`")));
            }
        }

        fn num<T: std::str::FromStr>(values: &BTreeMap<String, (String, String)>, key: &str) -> Result<Option<T>, CliError> {
            values
                .get(key)
                .map(|(v, origin)| {
                    v.parse::<T>()
                        .map_err(|_| input(format!("{origin}: `{key}` has invalid value `{v}`")))
                })
                .transpose()
        }
        let text_value = |key: &str| values.get(key).map(|(v, _)| v.clone());

        let model = text_value("model").ok_or_else(|| input("run configuration needs a `model` key"))?;
        Ok(RunConfig {
            model: resolve(&model),
            evidence,
            mode: text_value("mode"),
            step: num(&values, "step")?,
            report_interval: num(&values, "report_interval")?,
            tolerance: num(&values, "tolerance")?,
            particles: num(&values, "particles")?.unwrap_or(1000),
            seed: num(&values, "seed")?.unwrap_or(0),
            t_start: num(&values, "t_start")?.unwrap_or(0.0),
            t_end: num(&values, "t_end")?,
            run_in_end: num(&values, "run_in_end")?,
            output: text_value("output").map(|p| resolve(&p)).unwrap_or_else(|| base_dir.join("out")),
            reference: text_value("reference").map(|p| resolve(&p)),
            target: text_value("target"),
            workers: num(&values, "workers")?,
        })
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| input(format!("reading {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::parse(&text, &base, overrides)
    }

    /// The engine configuration, with defaults filled in from the model and
    /// its evidence.
    pub fn inference_config(&self, m: &OdeModel, evidence: &EvidenceSet) -> Result<InferenceConfig, CliError> {
        let t_end = match self.t_end {
            Some(t) => t,
            None => evidence
                .iter()
                .filter_map(|s| s.points().last().map(|p| p.0))
                .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
                .ok_or_else(|| input("no `t_end` given and no evidence to infer it from"))?,
        };
        let mode = match self.mode.as_deref().unwrap_or("fixed") {
            "fixed" => InferenceMode::Fixed {
                step: self.step.unwrap_or(m.natural_step),
            },
            "adaptive" => InferenceMode::Adaptive {
                report_interval: self
                    .report_interval
                    .ok_or_else(|| input("adaptive mode needs `report_interval`"))?,
                tolerance: self.tolerance.ok_or_else(|| input("adaptive mode needs `tolerance`"))?,
            },
            other => return Err(input(format!("unknown mode `{other}` (expected fixed or adaptive)"))),
        };
        let cfg = InferenceConfig {
            mode,
            n_particles: self.particles,
            t_start: self.t_start,
            t_end,
            seed: self.seed,
            run_in_end: self.run_in_end.unwrap_or(self.t_start),
            resampling: ResamplingPolicy::EveryStep,
            workers: self.workers,
        };
        cfg.validate().map_err(input)?;
        Ok(cfg)
    }
}

/// Reads a reference trajectory written by [`ReferenceTrajectory::to_csv`].
pub fn load_reference(path: &Path) -> Result<ReferenceTrajectory, CliError> {
    let err = |m: String| input(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let row: Vec<f64> = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(format!("row {}: not a number", i + 2)))?;
        if row.len() != names.len() + 1 {
            return Err(err(format!("row {}: expected {} columns", i + 2, names.len() + 1)));
        }
        times.push(row[0]);
        values.push(row[1..].to_vec());
    }
    Ok(ReferenceTrajectory { names, times, values })
}

#[derive(Debug, Serialize)]
struct MetricsJson<'a> {
    target: Option<&'a str>,
    rmse: Option<f64>,
    mae: Option<f64>,
    compared_points: Option<usize>,
    wall_time: f64,
    accepted: Option<usize>,
    rejected: Option<usize>,
    reported_rmse: Option<f64>,
    reported_mae: Option<f64>,
}

/// Per-state plotting table: mean, one-standard-deviation band, and the
/// evidence value where one exists.
pub fn plot_csv(m: &OdeModel, summaries: &[StepSummary], evidence: &EvidenceSet, state: &str) -> Option<String> {
    use std::fmt::Write as _;
    let k = m.state_index(state)?;
    let stream = evidence.get(state);
    let mut out = String::from("time,mean,lower,upper,evidence\n");
    for s in summaries {
        let (mean, std) = (s.state_mean[k], s.state_std[k]);
        let _ = write!(out, "{},{},{},{},", s.time, mean, mean - std, mean + std);
        if let Some(v) = stream.and_then(|st| {
            st.points()
                .iter()
                .find(|p| (p.0 - s.time).abs() <= TIME_TOLERANCE)
                .map(|p| p.1)
        }) {
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    Some(out)
}

/// What an inference run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct InferReport {
    pub rows: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
}

struct Outputs<'a> {
    dir: &'a Path,
    model: &'a OdeModel,
    evidence: &'a EvidenceSet,
}

impl Outputs<'_> {
    fn summaries(&self, summaries: &[StepSummary]) -> Result<(), CliError> {
        write_file(&self.dir.join("summaries.csv"), &summaries_csv(self.model, summaries))?;
        for s in &self.model.states {
            let plot = plot_csv(self.model, summaries, self.evidence, &s.name).expect("state exists");
            write_file(&self.dir.join(format!("plot_{}.csv", s.name)), &plot)?;
        }
        Ok(())
    }
}

fn run_and_write(
    m: &OdeModel,
    cfg: &InferenceConfig,
    evidence: &EvidenceSet,
    dir: &Path,
    scoring: Option<(&ReferenceTrajectory, &str)>,
    reported: Option<(f64, f64)>,
) -> Result<(InferenceOutcome, InferReport), CliError> {
    let out = Outputs {
        dir,
        model: m,
        evidence,
    };
    let started = Instant::now();
    let outcome = match run_inference(m, cfg, evidence) {
        Ok(o) => o,
        Err(failure) => {
            out.summaries(&failure.summaries)?;
            return Err(CliError::Inference(failure.error.to_string()));
        }
    };
    let wall_time = started.elapsed().as_secs_f64();
    out.summaries(&outcome.summaries)?;

    let metrics = match scoring {
        Some((reference, target)) => {
            let predicted = predicted_series(m, &outcome.summaries, target)
                .ok_or_else(|| input(format!("target `{target}` is not a state of the model")))?;
            Some(compute_metrics(&predicted, reference, target, cfg.run_in_end).map_err(input)?)
        }
        None => None,
    };
    let json = MetricsJson {
        target: scoring.map(|s| s.1),
        rmse: metrics.map(|x| x.rmse),
        mae: metrics.map(|x| x.mae),
        compared_points: metrics.map(|x| x.count),
        wall_time,
        accepted: outcome.accepted,
        rejected: outcome.rejected,
        reported_rmse: reported.map(|r| r.0),
        reported_mae: reported.map(|r| r.1),
    };
    let text = serde_json::to_string_pretty(&json).expect("metrics serialize");
    write_file(&dir.join("metrics.json"), &(text + "\n"))?;
    let report = InferReport {
        rows: outcome.summaries.len(),
        rmse: json.rmse,
        mae: json.mae,
    };
    Ok((outcome, report))
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let file = ModelFile::load(path).map_err(input)?;
    let diagnostics = validate_model(&file.model);
    if !diagnostics.is_empty() {
        let lines: Vec<String> = diagnostics.iter().map(|d| file.locate(d)).collect();
        return Err(input(lines.join("\n")));
    }
    Ok(file)
}

/// Compiles a model file, writes `<name>.dot` into `output_dir` and returns
/// the node and arc report.
pub fn cmd_compile(model_path: &Path, output_dir: &Path) -> Result<String, CliError> {
    let file = load_model(model_path)?;
    let graph = compile(&file.model).map_err(input)?;
    let dot_path = output_dir.join(format!("{}.dot", file.model.name));
    write_file(&dot_path, &export_dot(&graph))?;
    Ok(format!(
        "{}\n{}\nwrote {}\n",
        graph.node_report(),
        graph.arc_report(),
        dot_path.display()
    ))
}

/// Runs inference from a run configuration.
pub fn cmd_infer(cfg: &RunConfig) -> Result<InferReport, CliError> {
    let file = load_model(&cfg.model)?;
    let m = &file.model;
    let mut evidence = file.load_evidence().map_err(input)?;
    for (target, (path, mode)) in &cfg.evidence {
        let mode = mode.unwrap_or_else(|| {
            if m.input_index(target).is_some() {
                EvidenceMode::Continuous
            } else {
                EvidenceMode::Instantaneous
            }
        });
        let stream = load_csv(path, target.clone(), mode).map_err(|e| input(format!("{}: {e}", path.display())))?;
        evidence.insert(stream);
    }
    let icfg = cfg.inference_config(m, &evidence)?;
    let reference = cfg.reference.as_deref().map(load_reference).transpose()?;
    let target = match (&cfg.target, m.observations.as_slice()) {
        (Some(t), _) => Some(t.clone()),
        (None, [only]) => Some(only.state.clone()),
        (None, _) => None,
    };
    let scoring = match (&reference, &target) {
        (Some(r), Some(t)) => Some((r, t.as_str())),
        (Some(_), None) => return Err(input("a reference needs a `target` state when the model observes several")),
        _ => None,
    };
    run_and_write(m, &icfg, &evidence, &cfg.output, scoring, None).map(|(_, r)| r)
}

/// Options for [`cmd_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    /// Defaults to the case's published particle count.
    pub particles: Option<usize>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub output: PathBuf,
}

/// Generates reference data and evidence for a benchmark case, runs
/// inference with the case's configuration, and writes data, results and
/// metrics into `opts.output`.
pub fn cmd_benchmark(case_name: &str, opts: &BenchmarkOptions) -> Result<InferReport, CliError> {
    let case = BenchmarkCase::named(case_name).ok_or_else(|| {
        input(format!(
            "unknown benchmark case `{case_name}` (valid cases: {})",
            CASE_NAMES.join(", ")
        ))
    })?;
    let data = case.generate().map_err(input)?;
    let dir = &opts.output;
    write_file(&dir.join("reference.csv"), &data.reference.to_csv())?;
    write_file(
        &dir.join(format!("{}_{}.csv", case.name, case.target)),
        &data.observations.to_csv(),
    )?;
    let m = case.model();
    let mut cfg = case.config(opts.particles.unwrap_or(case.n_particles), opts.seed);
    cfg.workers = opts.workers;
    let evidence = case.evidence(&data);
    run_and_write(&m, &cfg, &evidence, dir, Some((&data.reference, case.target)), Some(case.reported))
        .map(|(_, r)| r)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Compile { model, output } => cmd_compile(&model, &output).map(|r| print!("{r}")),
        Command::Infer { config, overrides } => overrides
            .pairs()
            .and_then(|o| RunConfig::load(&config, &o))
            .and_then(|cfg| cmd_infer(&cfg).map(|r| print_report(&r, &cfg.output))),
        Command::Benchmark {
            case,
            particles,
            seed,
            workers,
            output,
        } => {
            let opts = BenchmarkOptions {
                particles,
                seed,
                workers,
                output: output.unwrap_or_else(|| PathBuf::from(format!("benchmark_{case}"))),
            };
            cmd_benchmark(&case, &opts).map(|r| print_report(&r, &opts.output))
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_report(r: &InferReport, dir: &Path) {
    println!("{} summary rows written to {}", r.rows, dir.display());
    if let (Some(rmse), Some(mae)) = (r.rmse, r.mae) {
        println!("rmse {rmse:.4}  mae {mae:.4}");
    }
}
