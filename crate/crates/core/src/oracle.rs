//! Deterministic reference integration, benchmark generation and error
//! metrics.
//!
//! The integrators here evaluate the model's expression trees directly
//! through [`eval_expr`], independently of the compiled form the particle
//! filter uses.

use std::fmt::Write as _;

use thiserror::Error;

use crate::adaptive::{run_inference, InferenceOutcome};
use crate::engine::{InferenceConfig, InferenceMode, RunFailure, StepSummary};
use crate::evidence::{parse_csv, EvidenceMode, EvidenceSet, EvidenceStream, TIME_TOLERANCE};
use crate::expr::{eval_expr, Bindings, EvalError};
use crate::model::{validate_model, Diagnostic, ModelFile, OdeModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("model is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Diagnostic>),
    #[error("expected {expected} {what}, got {found}")]
    Arity {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no values for input `{0}`")]
    MissingInput(String),
    #[error("trajectory became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("`{0}` is not a state of the model")]
    UnknownState(String),
    #[error("prediction and reference share no times after the run-in")]
    NoOverlap,
    #[error("requested times must be increasing")]
    UnorderedTimes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// One row per time, one column per state.
    pub values: Vec<Vec<f64>>,
}

impl ReferenceTrajectory {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// `(time, value)` pairs of one state.
    pub fn series(&self, name: &str) -> Option<Vec<(f64, f64)>> {
        let j = self.column(name)?;
        Some(self.times.iter().zip(&self.values).map(|(&t, row)| (t, row[j])).collect())
    }

    /// Row recorded at `t`, within the evidence time tolerance.
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        let i = self.times.partition_point(|&x| x < t - TIME_TOLERANCE);
        match self.times.get(i) {
            Some(&x) if (x - t).abs() <= TIME_TOLERANCE => Some(&self.values[i]),
            _ => None,
        }
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.values.last().map(Vec::as_slice)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for n in &self.names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.values) {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// The deterministic skeleton of a model: fixed parameters, and inputs
/// held at the most recent intended value.
struct Skeleton<'a> {
    model: &'a OdeModel,
    env: Bindings,
    inputs: Vec<&'a EvidenceStream>,
}

impl<'a> Skeleton<'a> {
    fn new(m: &'a OdeModel, params: &[f64], x0: &[f64], inputs: &'a EvidenceSet) -> Result<Self, OracleError> {
        let diagnostics = validate_model(m);
        if !diagnostics.is_empty() {
            return Err(OracleError::InvalidModel(diagnostics));
        }
        let check = |what, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(OracleError::Arity { what, expected, found })
            }
        };
        check("parameters", m.params.len(), params.len())?;
        check("initial states", m.states.len(), x0.len())?;
        let mut env = Bindings::new();
        for (p, &v) in m.params.iter().zip(params) {
            env.insert(p.name.clone(), v);
        }
        let inputs = m
            .inputs
            .iter()
            .map(|i| inputs.get(&i.name).ok_or_else(|| OracleError::MissingInput(i.name.clone())))
            .collect::<Result<_, _>>()?;
        Ok(Skeleton { model: m, env, inputs })
    }

    fn derivative(&mut self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), OracleError> {
        for (s, &v) in self.model.states.iter().zip(x) {
            self.env.insert(s.name.clone(), v);
        }
        for (spec, stream) in self.model.inputs.iter().zip(&self.inputs) {
            let points = stream.points();
            let i = points.partition_point(|&(pt, _)| pt <= t + TIME_TOLERANCE);
            let held = points[i.saturating_sub(1)].1;
            self.env.insert(spec.name.clone(), held);
        }
        for (o, s) in out.iter_mut().zip(&self.model.states) {
            *o = eval_expr(&s.rhs, &self.env)?;
        }
        Ok(())
    }

    fn euler_step(&mut self, t: f64, x: &mut [f64], h: f64, k: &mut [f64]) -> Result<(), OracleError> {
        self.derivative(t, x, k)?;
        for (xi, ki) in x.iter_mut().zip(k.iter()) {
            *xi += h * ki;
        }
        Ok(())
    }

    fn rk4_step(&mut self, t: f64, x: &mut [f64], h: f64) -> Result<(), OracleError> {
        let n = x.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.derivative(t, x, &mut k1)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.derivative(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.derivative(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        self.derivative(t + h, &tmp, &mut k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

fn state_names(m: &OdeModel) -> Vec<String> {
    m.states.iter().map(|s| s.name.clone()).collect()
}

/// Classical fourth-order Runge-Kutta, sampled at `times` (the first of
/// which is the initial time). Each interval between requested times is
/// split into equal sub-steps no longer than `h_ref`.
pub fn rk4_reference(
    m: &OdeModel,
    params: &[f64],
    x0: &[f64],
    times: &[f64],
    h_ref: f64,
    inputs: &EvidenceSet,
) -> Result<ReferenceTrajectory, OracleError> {
    let mut sk = Skeleton::new(m, params, x0, inputs)?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OracleError::UnorderedTimes);
    }
    let mut x = x0.to_vec();
    let mut values = Vec::with_capacity(times.len());
    if let Some(&t0) = times.first() {
        values.push(x.clone());
        let mut t = t0;
        for &target in &times[1..] {
            let span = target - t;
            let n = ((span / h_ref) - 1e-9).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for k in 0..n {
                sk.rk4_step(t + k as f64 * h, &mut x, h)?;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(OracleError::NonFinite(target));
            }
            t = target;
            values.push(x.clone());
        }
    }
    Ok(ReferenceTrajectory {
        names: state_names(m),
        times: times.to_vec(),
        values,
    })
}

/// Plain forward Euler with step `h` for `n_steps` steps from `t_start`,
/// recording every step. Times are `t_start + k*h`.
pub fn euler_reference(
    m: &OdeModel,
    params: &[f64],
    x0: &[f64],
    t_start: f64,
    h: f64,
    n_steps: usize,
    inputs: &EvidenceSet,
) -> Result<ReferenceTrajectory, OracleError> {
    let mut sk = Skeleton::new(m, params, x0, inputs)?;
    let mut x = x0.to_vec();
    let mut k = vec![0.0; x.len()];
    let mut times = vec![t_start];
    let mut values = vec![x.clone()];
    for step in 1..=n_steps {
        let t = t_start + (step - 1) as f64 * h;
        sk.euler_step(t, &mut x, h, &mut k)?;
        let t = t_start + step as f64 * h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite(t));
        }
        times.push(t);
        values.push(x.clone());
    }
    Ok(ReferenceTrajectory {
        names: state_names(m),
        times,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Number of time points compared.
    pub count: usize,
}

/// RMSE and MAE of `predicted` against the reference column `target`, over
/// the predicted times at or after `run_in_end` that the reference also
/// records.
pub fn compute_metrics(
    predicted: &[(f64, f64)],
    reference: &ReferenceTrajectory,
    target: &str,
    run_in_end: f64,
) -> Result<Metrics, OracleError> {
    let j = reference
        .column(target)
        .ok_or_else(|| OracleError::UnknownState(target.to_string()))?;
    let errors: Vec<f64> = predicted
        .iter()
        .filter(|(t, _)| *t >= run_in_end - TIME_TOLERANCE)
        .filter_map(|&(t, p)| reference.at(t).map(|row| p - row[j]))
        .collect();
    if errors.is_empty() {
        return Err(OracleError::NoOverlap);
    }
    let n = errors.len() as f64;
    Ok(Metrics {
        rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mae: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
        count: errors.len(),
    })
}

/// `(time, mean)` of one state from a run's summaries.
pub fn predicted_series(m: &OdeModel, summaries: &[StepSummary], target: &str) -> Option<Vec<(f64, f64)>> {
    let k = m.state_index(target)?;
    Some(summaries.iter().map(|s| (s.time, s.state_mean[k])).collect())
}

pub const LORENZ_MODEL: &str = include_str!("../models/lorenz.model");
pub const LOTKA_MODEL: &str = include_str!("../models/lotka.model");
pub const STC_MODEL: &str = include_str!("../models/stc.model");
pub const PIF45_MODEL: &str = include_str!("../models/pif45.model");
pub const TOC1_CSV: &str = include_str!("../models/toc1.csv");

/// One of the four benchmark set-ups.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCase {
    pub name: &'static str,
    /// Shipped model file contents.
    pub model_source: &'static str,
    /// Parameter values used to generate the benchmark data.
    pub benchmark_params: Vec<(&'static str, f64)>,
    /// Initial state used to generate the benchmark data.
    pub benchmark_initial: Vec<(&'static str, f64)>,
    pub target: &'static str,
    pub evidence_times: Vec<f64>,
    pub mode: InferenceMode,
    pub t_start: f64,
    pub t_end: f64,
    pub run_in_end: f64,
    pub n_particles: usize,
    /// Published `(rmse, mae)` for a single run at `n_particles`.
    pub reported: (f64, f64),
}

pub const CASE_NAMES: [&str; 4] = ["pif45", "lotka", "stc", "lorenz"];

/// The data a benchmark run is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkData {
    pub reference: ReferenceTrajectory,
    /// Noise-free samples of the target state at the evidence times.
    pub observations: EvidenceStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub outcome: InferenceOutcome,
    pub metrics: Metrics,
}

impl BenchmarkCase {
    pub fn all() -> Vec<BenchmarkCase> {
        CASE_NAMES.iter().map(|n| BenchmarkCase::named(n).expect("known case")).collect()
    }

    pub fn named(name: &str) -> Option<BenchmarkCase> {
        let case = match name {
            "pif45" => BenchmarkCase {
                name: "pif45",
                model_source: PIF45_MODEL,
                benchmark_params: vec![("s", 1.0), ("k_d", 0.46), ("d", 1.0)],
                benchmark_initial: vec![("PIF", 0.386)],
                target: "PIF",
                evidence_times: (1..=6).map(|k| 4.0 * k as f64).collect(),
                mode: InferenceMode::Fixed { step: 1.0 },
                t_start: 0.0,
                t_end: 24.0,
                run_in_end: 4.0,
                n_particles: 100_000,
                reported: (0.070, 0.0353),
            },
            "lotka" => BenchmarkCase {
                name: "lotka",
                model_source: LOTKA_MODEL,
                benchmark_params: vec![("alpha", 2.0), ("beta", 1.0), ("gamma", 4.0), ("delta", 1.0)],
                benchmark_initial: vec![("S", 5.0), ("W", 3.0)],
                target: "S",
                evidence_times: vec![0.5, 1.0, 1.5, 2.0],
                mode: InferenceMode::Fixed { step: 0.25 },
                t_start: 0.0,
                t_end: 2.0,
                run_in_end: 0.5,
                n_particles: 100_000,
                reported: (0.287, 0.137),
            },
            "stc" => BenchmarkCase {
                name: "stc",
                model_source: STC_MODEL,
                benchmark_params: vec![
                    ("k1", 0.07),
                    ("k2", 0.6),
                    ("k3", 0.05),
                    ("k4", 0.3),
                    ("k_m", 0.017),
                    ("V", 0.3),
                ],
                benchmark_initial: vec![("S", 1.0), ("Sd", 0.0), ("R", 1.0), ("RS", 0.0), ("Rpp", 0.0)],
                target: "Rpp",
                evidence_times: vec![
                    0.0, 1.0, 2.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0,
                ],
                mode: InferenceMode::Fixed { step: 1.0 },
                t_start: 0.0,
                t_end: 100.0,
                run_in_end: 0.0,
                n_particles: 100_000,
                reported: (0.0085, 0.0053),
            },
            "lorenz" => BenchmarkCase {
                name: "lorenz",
                model_source: LORENZ_MODEL,
                benchmark_params: vec![("a", -8.0 / 3.0), ("b", -10.0), ("c", 28.0)],
                benchmark_initial: vec![("X", 1.0), ("Y", 1.0), ("Z", 1.0)],
                target: "X",
                evidence_times: std::iter::once(0.35).chain((4..=50).map(|k| k as f64 / 10.0)).collect(),
                mode: InferenceMode::Adaptive {
                    report_interval: 0.05,
                    tolerance: 0.1,
                },
                t_start: 0.0,
                t_end: 5.0,
                run_in_end: 0.35,
                n_particles: 100_000,
                reported: (0.250, 0.176),
            },
            _ => return None,
        };
        Some(case)
    }

    pub fn model_file(&self) -> ModelFile {
        ModelFile::parse_with(self.model_source, &format!("{}.model", self.name), "models".into())
            .expect("shipped model files parse")
    }

    pub fn model(&self) -> OdeModel {
        self.model_file().model
    }

    /// Intended input series the model reads, keyed by input name.
    pub fn inputs(&self) -> EvidenceSet {
        let mut set = EvidenceSet::new();
        for input in &self.model().inputs {
            if input.name == "TOC1" {
                set.insert(parse_csv(TOC1_CSV, "TOC1", EvidenceMode::Continuous).expect("shipped TOC1 trace parses"));
            }
        }
        set
    }

    fn ordered(&self, m: &OdeModel) -> (Vec<f64>, Vec<f64>) {
        let lookup = |pairs: &[(&str, f64)], name: &str| {
            pairs
                .iter()
                .find(|(n, _)| *n == name)
                .map(|p| p.1)
                .expect("benchmark values cover every model item")
        };
        let params = m.params.iter().map(|p| lookup(&self.benchmark_params, &p.name)).collect();
        let x0 = m.states.iter().map(|s| lookup(&self.benchmark_initial, &s.name)).collect();
        (params, x0)
    }

    /// Times the reference trajectory is recorded at: the natural-step grid,
    /// the report grid in adaptive mode, and the evidence times.
    pub fn reference_times(&self) -> Vec<f64> {
        let grid = |h: f64| {
            let n = ((self.t_end - self.t_start) / h - 1e-9).floor() as usize;
            (0..=n).map(move |k| self.t_start + k as f64 * h)
        };
        let mut times: Vec<f64> = grid(self.model().natural_step).collect();
        if let InferenceMode::Adaptive { report_interval, .. } = self.mode {
            times.extend(grid(report_interval));
        }
        times.extend(self.evidence_times.iter().copied());
        times.push(self.t_end);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|later, earlier| (*later - *earlier).abs() <= TIME_TOLERANCE);
        times
    }

    /// Integrates the model with the benchmark values and samples the target
    /// at the evidence times. Fully deterministic.
    pub fn generate(&self) -> Result<BenchmarkData, OracleError> {
        let m = self.model();
        let (params, x0) = self.ordered(&m);
        let inputs = self.inputs();
        let reference = rk4_reference(&m, &params, &x0, &self.reference_times(), m.natural_step / 10.0, &inputs)?;
        let j = reference.column(self.target).ok_or_else(|| OracleError::UnknownState(self.target.into()))?;
        let points = self
            .evidence_times
            .iter()
            .map(|&t| (t, reference.at(t).expect("evidence times are reference times")[j]))
            .collect();
        let observations =
            EvidenceStream::new(self.target, EvidenceMode::Instantaneous, points).expect("reference is finite");
        Ok(BenchmarkData { reference, observations })
    }

    /// Observations plus inputs, ready for inference.
    pub fn evidence(&self, data: &BenchmarkData) -> EvidenceSet {
        self.inputs().with(data.observations.clone())
    }

    pub fn config(&self, n_particles: usize, seed: u64) -> InferenceConfig {
        InferenceConfig {
            mode: self.mode,
            run_in_end: self.run_in_end,
            ..InferenceConfig::fixed(1.0, n_particles, self.t_start, self.t_end, seed)
        }
    }

    /// Generates the data, runs inference and scores the target state.
    pub fn run(&self, cfg: &InferenceConfig) -> Result<BenchmarkRun, BenchmarkError> {
        let data = self.generate()?;
        let m = self.model();
        let outcome = run_inference(&m, cfg, &self.evidence(&data))?;
        let predicted = predicted_series(&m, &outcome.summaries, self.target).expect("target is a state");
        let metrics = compute_metrics(&predicted, &data.reference, self.target, cfg.run_in_end)?;
        Ok(BenchmarkRun { outcome, metrics })
    }
}

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Inference(#[from] RunFailure),
}

/// Published generating function of the shipped TOC1 trace: a smooth
/// 24-hour cycle, sampled hourly.
pub fn toc1_level(t: f64) -> f64 {
    0.75 + 0.45 * (2.0 * std::f64::consts::PI * t / 24.0).sin()
}
