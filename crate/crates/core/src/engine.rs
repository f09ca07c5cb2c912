//! Fixed-step particle filtering over the compiled network.
//!
//! One step of the filter, per particle:
//!
//! 1. every parameter takes a Gaussian random-walk step of its transition
//!    sigma around its previous value,
//! 2. every true input is drawn around the intended value in force at the
//!    slice start,
//! 3. each delta node evaluates its right-hand side on the slice values,
//! 4. each state advances by `h * delta` (forward Euler).
//!
//! Evidence then reweights the particles through the Gaussian observation
//! nodes, and the ensemble is resampled and summarized.
//!
//! Particles are stored as one flat `[states.., params.., inputs..]` row
//! each, which is also the slot layout the compiled right-hand sides read.
//! All randomness for particle `i` at step `k` comes from its own stream
//! keyed by `(seed, k, i)`, and every reduction runs sequentially, so
//! results do not depend on how many worker threads are used.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{Distribution, RngStream};
use crate::evidence::{event_times, EvidenceMode, EvidenceSet, EvidenceStream, TIME_TOLERANCE};
use crate::expr::{CompiledExpr, EvalError};
use crate::model::{validate_model, Diagnostic, OdeModel};

const INIT_KEY: u64 = u64::MAX;
const TRANSITION_KEY: u64 = 0;
const RESAMPLE_KEY: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("model is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Diagnostic>),
    #[error("invalid inference configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Expression(#[from] EvalError),
    #[error("no intended value for input `{name}` at t = {time}")]
    MissingInput { name: String, time: f64 },
    #[error("evidence targets `{0}`, which is neither an observed state nor an input")]
    UnknownEvidenceTarget(String),
    #[error("every particle became non-finite by t = {time}")]
    AllParticlesNonFinite { time: f64 },
    #[error("every particle weight is zero at t = {time}")]
    AllWeightsDegenerate { time: f64 },
    #[error("step size fell below the minimum {h_min} at t = {time}")]
    StepUnderflow { time: f64, h_min: f64 },
}

/// An inference failure together with every summary recorded before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct RunFailure {
    #[source]
    pub error: EngineError,
    pub summaries: Vec<StepSummary>,
}

impl From<EngineError> for RunFailure {
    fn from(error: EngineError) -> Self {
        RunFailure {
            error,
            summaries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InferenceMode {
    Fixed { step: f64 },
    Adaptive { report_interval: f64, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResamplingPolicy {
    /// Resample after every committed step.
    EveryStep,
    /// Resample only when the effective sample size drops below this
    /// fraction of the particle count.
    EssBelow(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
    pub n_particles: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Metrics are computed from this time on.
    pub run_in_end: f64,
    pub resampling: ResamplingPolicy,
    /// Worker threads; `None` uses the global pool. Results do not depend on
    /// this value.
    pub workers: Option<usize>,
}

impl InferenceConfig {
    pub fn fixed(step: f64, n_particles: usize, t_start: f64, t_end: f64, seed: u64) -> Self {
        InferenceConfig {
            mode: InferenceMode::Fixed { step },
            n_particles,
            t_start,
            t_end,
            seed,
            run_in_end: t_start,
            resampling: ResamplingPolicy::EveryStep,
            workers: None,
        }
    }

    pub fn adaptive(
        report_interval: f64,
        tolerance: f64,
        n_particles: usize,
        t_start: f64,
        t_end: f64,
        seed: u64,
    ) -> Self {
        InferenceConfig {
            mode: InferenceMode::Adaptive {
                report_interval,
                tolerance,
            },
            ..InferenceConfig::fixed(1.0, n_particles, t_start, t_end, seed)
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        if self.n_particles == 0 {
            return bad("at least one particle is required".into());
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_end < self.t_start {
            return bad(format!("time span [{}, {}] is invalid", self.t_start, self.t_end));
        }
        match self.mode {
            InferenceMode::Fixed { step } if !(step > 0.0 && step.is_finite()) => {
                bad(format!("step must be positive, got {step}"))
            }
            InferenceMode::Adaptive { report_interval, .. } if !(report_interval > 0.0) => {
                bad(format!("report interval must be positive, got {report_interval}"))
            }
            InferenceMode::Adaptive { tolerance, .. } if !(tolerance > 0.0) => {
                bad(format!("tolerance must be positive, got {tolerance}"))
            }
            _ => match self.resampling {
                ResamplingPolicy::EssBelow(f) if !(0.0..=1.0).contains(&f) => {
                    bad(format!("ESS threshold must lie in [0, 1], got {f}"))
                }
                _ => Ok(()),
            },
        }
    }

    pub(crate) fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match self.workers {
            Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            },
            None => f(),
        }
    }
}

/// One particle, detached from its ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: Vec<f64>,
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
    pub log_weight: f64,
}

/// `N` weighted joint samples of states, parameters and true inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub time: f64,
    n_states: usize,
    n_params: usize,
    n_inputs: usize,
    /// Row-major `[states.., params.., inputs..]` per particle.
    slots: Vec<f64>,
    /// Delta-node values from the most recent step, row-major per particle.
    deltas: Vec<f64>,
    log_weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn from_particles(time: f64, particles: &[Particle]) -> Self {
        let first = &particles[0];
        let (n_states, n_params, n_inputs) = (first.state.len(), first.params.len(), first.inputs.len());
        let mut slots = Vec::with_capacity(particles.len() * (n_states + n_params + n_inputs));
        for p in particles {
            assert_eq!(
                (p.state.len(), p.params.len(), p.inputs.len()),
                (n_states, n_params, n_inputs),
                "particles must share one layout"
            );
            slots.extend_from_slice(&p.state);
            slots.extend_from_slice(&p.params);
            slots.extend_from_slice(&p.inputs);
        }
        ParticleEnsemble {
            time,
            n_states,
            n_params,
            n_inputs,
            slots,
            deltas: vec![0.0; particles.len() * n_states],
            log_weights: particles.iter().map(|p| p.log_weight).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    fn width(&self) -> usize {
        self.n_states + self.n_params + self.n_inputs
    }

    pub fn particle(&self, i: usize) -> Particle {
        let row = &self.slots[i * self.width()..(i + 1) * self.width()];
        Particle {
            state: row[..self.n_states].to_vec(),
            params: row[self.n_states..self.n_states + self.n_params].to_vec(),
            inputs: row[self.n_states + self.n_params..].to_vec(),
            log_weight: self.log_weights[i],
        }
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn set_log_weights(&mut self, log_weights: &[f64]) {
        assert_eq!(log_weights.len(), self.len());
        self.log_weights.copy_from_slice(log_weights);
    }

    /// Delta values of particle `i` from the most recent step.
    pub fn deltas(&self, i: usize) -> &[f64] {
        &self.deltas[i * self.n_states..(i + 1) * self.n_states]
    }

    /// Column `j` of the slot layout for every particle.
    fn column(&self, j: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        self.slots.iter().skip(j).step_by(self.width()).copied()
    }

    /// Weights relative to the largest, so the best particle has weight 1.
    /// `None` when every particle has zero weight.
    pub fn relative_weights(&self) -> Option<Vec<f64>> {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return None;
        }
        Some(self.log_weights.iter().map(|&l| (l - max).exp()).collect())
    }

    pub fn ess(&self) -> f64 {
        match self.relative_weights() {
            Some(u) => {
                let s: f64 = u.iter().sum();
                let s2: f64 = u.iter().map(|w| w * w).sum();
                s * s / s2
            }
            None => 0.0,
        }
    }

    fn alive(&self) -> usize {
        self.log_weights.iter().filter(|l| **l > f64::NEG_INFINITY).count()
    }

    /// Hash of the full ensemble contents, for detecting changes.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.time.to_bits().hash(&mut h);
        for v in self.slots.iter().chain(&self.deltas).chain(&self.log_weights) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Weighted mean of `values` under relative weights `u`, computed around the
/// first positively weighted value so identical inputs give that value back
/// exactly.
fn weighted_mean_std(values: impl Iterator<Item = f64> + Clone, u: &[f64], total: f64) -> (f64, f64) {
    let pivot = values
        .clone()
        .zip(u)
        .find(|(_, w)| **w > 0.0)
        .map(|(v, _)| v)
        .unwrap_or(f64::NAN);
    let mut shift = 0.0;
    for (v, &w) in values.clone().zip(u) {
        if w > 0.0 {
            shift += w * (v - pivot);
        }
    }
    let mean = pivot + shift / total;
    let mut var = 0.0;
    for (v, &w) in values.zip(u) {
        if w > 0.0 {
            var += w * (v - mean) * (v - mean);
        }
    }
    (mean, (var / total).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub time: f64,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub param_mean: Vec<f64>,
    pub param_std: Vec<f64>,
    pub ess: f64,
}

/// Weighted mean and standard deviation of every state and parameter, plus
/// the effective sample size.
pub fn summarize(ens: &ParticleEnsemble) -> StepSummary {
    let nan = |n: usize| vec![f64::NAN; n];
    let Some(u) = ens.relative_weights() else {
        return StepSummary {
            time: ens.time,
            state_mean: nan(ens.n_states),
            state_std: nan(ens.n_states),
            param_mean: nan(ens.n_params),
            param_std: nan(ens.n_params),
            ess: 0.0,
        };
    };
    let total: f64 = u.iter().sum();
    let total_sq: f64 = u.iter().map(|w| w * w).sum();
    let stats = |j: usize| weighted_mean_std(ens.column(j), &u, total);
    let (state_mean, state_std): (Vec<f64>, Vec<f64>) = (0..ens.n_states).map(stats).unzip();
    let (param_mean, param_std): (Vec<f64>, Vec<f64>) =
        (ens.n_states..ens.n_states + ens.n_params).map(stats).unzip();
    StepSummary {
        time: ens.time,
        state_mean,
        state_std,
        param_mean,
        param_std,
        ess: total * total / total_sq,
    }
}

/// Weighted mean of the delta nodes over live particles.
pub fn mean_deltas(ens: &ParticleEnsemble) -> Vec<f64> {
    let Some(u) = ens.relative_weights() else {
        return vec![f64::NAN; ens.n_states];
    };
    let total: f64 = u.iter().sum();
    (0..ens.n_states)
        .map(|k| {
            let column = ens.deltas.iter().skip(k).step_by(ens.n_states).copied();
            weighted_mean_std(column, &u, total).0
        })
        .collect()
}

/// Systematic resampling: `N` evenly spaced positions with one uniform
/// offset. Returns the chosen source index for each new particle.
pub fn systematic_indices(relative_weights: &[f64], offset: f64) -> Vec<usize> {
    let n = relative_weights.len();
    let total: f64 = relative_weights.iter().sum();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in relative_weights {
        acc += w;
        cumulative.push(acc / total * n as f64);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = n as f64;
    }
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for m in 0..n {
        let position = offset + m as f64;
        while j + 1 < n && position >= cumulative[j] {
            j += 1;
        }
        out.push(j);
    }
    out
}

/// Resamples in place; afterwards all weights are equal.
pub fn resample_systematic(ens: &mut ParticleEnsemble, stream: &RngStream) -> Result<(), EngineError> {
    let u = ens
        .relative_weights()
        .ok_or(EngineError::AllWeightsDegenerate { time: ens.time })?;
    let offset: f64 = stream.generator().random();
    let indices = systematic_indices(&u, offset);
    let (w, ns) = (ens.width(), ens.n_states);
    let mut slots = Vec::with_capacity(ens.slots.len());
    let mut deltas = Vec::with_capacity(ens.deltas.len());
    for &i in &indices {
        slots.extend_from_slice(&ens.slots[i * w..(i + 1) * w]);
        deltas.extend_from_slice(&ens.deltas[i * ns..(i + 1) * ns]);
    }
    ens.slots = slots;
    ens.deltas = deltas;
    ens.log_weights.iter_mut().for_each(|l| *l = 0.0);
    Ok(())
}

struct PreparedObservation<'a> {
    state: usize,
    sigma: f64,
    stream: Option<&'a EvidenceStream>,
}

/// A validated model with compiled right-hand sides and its evidence bound
/// to observation and input slots.
pub struct Filter<'a> {
    model: &'a OdeModel,
    rhs: Vec<CompiledExpr>,
    observations: Vec<PreparedObservation<'a>>,
    inputs: Vec<&'a EvidenceStream>,
    evidence: &'a EvidenceSet,
}

impl<'a> Filter<'a> {
    pub fn new(model: &'a OdeModel, evidence: &'a EvidenceSet) -> Result<Self, EngineError> {
        let diagnostics = validate_model(model);
        if !diagnostics.is_empty() {
            return Err(EngineError::InvalidModel(diagnostics));
        }
        let rhs = model.compile_rhs()?;
        for stream in evidence.iter() {
            let known = model.observations.iter().any(|o| o.state == stream.target)
                || model.input_index(&stream.target).is_some();
            if !known {
                return Err(EngineError::UnknownEvidenceTarget(stream.target.clone()));
            }
        }
        let observations = model
            .observations
            .iter()
            .map(|o| PreparedObservation {
                state: model.state_index(&o.state).expect("validated"),
                sigma: o.sigma,
                stream: evidence.get(&o.state),
            })
            .collect();
        let inputs = model
            .inputs
            .iter()
            .map(|i| {
                evidence.get(&i.name).ok_or_else(|| EngineError::MissingInput {
                    name: i.name.clone(),
                    time: f64::NAN,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Filter {
            model,
            rhs,
            observations,
            inputs,
            evidence,
        })
    }

    pub fn model(&self) -> &OdeModel {
        self.model
    }

    /// Times at which some evidence stream reports a value.
    pub fn event_times(&self, start: f64, end: f64) -> Vec<f64> {
        event_times(self.evidence.iter(), start, end)
    }

    fn intended_inputs(&self, t: f64) -> Result<Vec<Option<f64>>, EngineError> {
        self.inputs
            .iter()
            .zip(&self.model.inputs)
            .map(|(stream, spec)| match stream.value_at(t) {
                Some(v) => Ok(Some(v)),
                None if stream.mode == EvidenceMode::Instantaneous && stream.first_time() < Some(t) => {
                    Ok(None)
                }
                None => Err(EngineError::MissingInput {
                    name: spec.name.clone(),
                    time: t,
                }),
            })
            .collect()
    }

    /// Draws `n` particles from the priors at `t_start`.
    pub fn init_ensemble(&self, n: usize, t_start: f64, stream: &RngStream) -> Result<ParticleEnsemble, EngineError> {
        let m = self.model;
        let intended = self.intended_inputs(t_start)?;
        let (ns, np, ni) = (m.states.len(), m.params.len(), m.inputs.len());
        let width = ns + np + ni;
        let mut slots = vec![0.0; n * width];
        let init = stream.derive(INIT_KEY);
        slots.par_chunks_mut(width).enumerate().for_each(|(i, row)| {
            let mut rng = init.lane(i as u64).generator();
            for (slot, p) in row[ns..ns + np].iter_mut().zip(&m.params) {
                *slot = p.prior.sample(&mut rng);
            }
            for (slot, s) in row[..ns].iter_mut().zip(&m.states) {
                *slot = Distribution::Gaussian {
                    mean: s.initial_mean,
                    sd: s.initial_sigma,
                }
                .sample(&mut rng);
            }
            for ((slot, spec), v) in row[ns + np..].iter_mut().zip(&m.inputs).zip(&intended) {
                let v = v.unwrap_or(0.0);
                *slot = Distribution::Gaussian { mean: v, sd: spec.sigma }.sample(&mut rng);
            }
        });
        Ok(ParticleEnsemble {
            time: t_start,
            n_states: ns,
            n_params: np,
            n_inputs: ni,
            slots,
            deltas: vec![0.0; n * ns],
            log_weights: vec![0.0; n],
        })
    }

    /// Advances every live particle by one Euler step of size `h`; weights
    /// are unchanged except that particles which leave the finite range (or
    /// hit a domain error) drop to zero weight.
    pub fn step(&self, ens: &mut ParticleEnsemble, h: f64, stream: &RngStream) -> Result<(), EngineError> {
        let m = self.model;
        let intended = self.intended_inputs(ens.time)?;
        let (ns, np) = (ens.n_states, ens.n_params);
        let width = ens.width();
        let transition = stream.derive(TRANSITION_KEY);
        let rhs = &self.rhs;
        ens.slots
            .par_chunks_mut(width)
            .zip(ens.deltas.par_chunks_mut(ns.max(1)))
            .zip(ens.log_weights.par_iter_mut())
            .enumerate()
            .for_each(|(i, ((row, deltas), log_weight))| {
                if *log_weight == f64::NEG_INFINITY {
                    return;
                }
                let mut rng = transition.lane(i as u64).generator();
                for (slot, p) in row[ns..ns + np].iter_mut().zip(&m.params) {
                    if p.transition_sigma > 0.0 {
                        *slot = random_walk(*slot, p.transition_sigma, p.prior.bounds()).sample(&mut rng);
                    }
                }
                for ((slot, spec), v) in row[ns + np..].iter_mut().zip(&m.inputs).zip(&intended) {
                    if let Some(v) = *v {
                        *slot = Distribution::Gaussian { mean: v, sd: spec.sigma }.sample(&mut rng);
                    }
                }
                for (d, f) in deltas.iter_mut().zip(rhs) {
                    *d = f.eval(row).unwrap_or(f64::NAN);
                }
                let mut finite = true;
                for (x, d) in row[..ns].iter_mut().zip(deltas.iter()) {
                    *x += h * d;
                    finite &= x.is_finite();
                }
                if !finite {
                    *log_weight = f64::NEG_INFINITY;
                }
            });
        ens.time += h;
        if ens.alive() == 0 {
            return Err(EngineError::AllParticlesNonFinite { time: ens.time });
        }
        Ok(())
    }

    /// Delta values evaluated at the ensemble's current slice, without
    /// stepping.
    pub fn current_deltas(&self, ens: &ParticleEnsemble) -> Vec<f64> {
        let Some(u) = ens.relative_weights() else {
            return vec![f64::NAN; ens.n_states];
        };
        let width = ens.width();
        let values: Vec<f64> = ens
            .slots
            .par_chunks(width)
            .flat_map_iter(|row| self.rhs.iter().map(move |f| f.eval(row).unwrap_or(f64::NAN)))
            .collect();
        let live: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let ok = values[i * ens.n_states..(i + 1) * ens.n_states].iter().all(|v| v.is_finite());
                if ok {
                    w
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = live.iter().sum();
        (0..ens.n_states)
            .map(|k| weighted_mean_std(values.iter().skip(k).step_by(ens.n_states).copied(), &live, total).0)
            .collect()
    }

    /// Observations with a value at `t`, as `(state index, sigma, value)`.
    pub fn observations_at(&self, t: f64) -> Vec<(usize, f64, f64)> {
        self.observations
            .iter()
            .filter_map(|o| Some((o.state, o.sigma, o.stream?.value_at(t)?)))
            .collect()
    }

    /// Adds the Gaussian log-likelihood of each observation to every
    /// particle's log-weight.
    pub fn weigh(&self, ens: &mut ParticleEnsemble, observations: &[(usize, f64, f64)]) {
        if observations.is_empty() {
            return;
        }
        let width = ens.width();
        ens.slots
            .par_chunks(width)
            .zip(ens.log_weights.par_iter_mut())
            .for_each(|(row, log_weight)| {
                if *log_weight == f64::NEG_INFINITY {
                    return;
                }
                for &(state, sigma, value) in observations {
                    let density = Distribution::Gaussian { mean: row[state], sd: sigma }
                        .log_pdf(value)
                        .unwrap_or(f64::NEG_INFINITY);
                    *log_weight += density;
                }
                if log_weight.is_nan() {
                    *log_weight = f64::NEG_INFINITY;
                }
            });
    }

    /// Weighs with the evidence at the ensemble's current time. Returns
    /// whether any evidence applied.
    pub fn weigh_at_current_time(&self, ens: &mut ParticleEnsemble) -> bool {
        let obs = self.observations_at(ens.time);
        self.weigh(ens, &obs);
        !obs.is_empty()
    }
}

/// Gaussian random-walk kernel around `value`, kept inside the prior's
/// support when that is bounded.
fn random_walk(value: f64, sd: f64, (lo, hi): (f64, f64)) -> Distribution {
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        Distribution::Gaussian { mean: value, sd }
    } else {
        Distribution::TruncatedGaussian { mean: value, sd, lo, hi }
    }
}

pub(crate) fn step_stream(seed: u64, step: u64) -> RngStream {
    RngStream::new(seed, 0).derive(step)
}

pub(crate) fn maybe_resample(
    ens: &mut ParticleEnsemble,
    policy: ResamplingPolicy,
    step: u64,
    seed: u64,
) -> Result<(), EngineError> {
    let resample = match policy {
        ResamplingPolicy::EveryStep => true,
        ResamplingPolicy::EssBelow(fraction) => ens.ess() < fraction * ens.len() as f64,
    };
    if resample {
        resample_systematic(ens, &step_stream(seed, step).derive(RESAMPLE_KEY))
    } else if ens.relative_weights().is_none() {
        Err(EngineError::AllWeightsDegenerate { time: ens.time })
    } else {
        Ok(())
    }
}

/// One planned step of a fixed-step run: its size and the time it lands on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedStep {
    pub h: f64,
    pub time: f64,
}

/// Steps of size `h` from `t_start` to `t_end`, shortened where needed to
/// land exactly on each event time and on `t_end`.
///
/// Grid points sit at `t_start + k*h`; a step between two grid points uses
/// `h` itself, so a run without events reproduces plain Euler integration
/// exactly.
pub fn fixed_schedule(t_start: f64, t_end: f64, h: f64, events: &[f64]) -> Vec<PlannedStep> {
    let mut plan = Vec::new();
    let mut t = t_start;
    let mut k: u64 = 0;
    let mut on_grid = true;
    let mut events = events.iter().copied().filter(|&e| e > t_start + TIME_TOLERANCE).peekable();
    while t < t_end - TIME_TOLERANCE {
        let mut next_grid = t_start + (k + 1) as f64 * h;
        let mut grid_step = h;
        if next_grid > t_end + TIME_TOLERANCE {
            next_grid = t_end;
            grid_step = t_end - t;
        } else if (next_grid - t_end).abs() <= TIME_TOLERANCE {
            next_grid = t_end;
        }
        while events.peek().is_some_and(|&e| e <= t + TIME_TOLERANCE) {
            events.next();
        }
        match events.peek() {
            Some(&e) if e < next_grid - TIME_TOLERANCE => {
                plan.push(PlannedStep { h: e - t, time: e });
                t = e;
                on_grid = false;
            }
            next => {
                let label = match next {
                    Some(&e) if (e - next_grid).abs() <= TIME_TOLERANCE => e,
                    _ => next_grid,
                };
                let step = if on_grid { grid_step } else { next_grid - t };
                plan.push(PlannedStep { h: step, time: label });
                t = label;
                k += 1;
                on_grid = true;
            }
        }
    }
    plan
}

/// Fixed-step particle filtering: step, weigh any evidence, resample and
/// summarize at every step.
pub fn run_fixed(m: &OdeModel, cfg: &InferenceConfig, evidence: &EvidenceSet) -> Result<Vec<StepSummary>, RunFailure> {
    cfg.validate()?;
    let InferenceMode::Fixed { step } = cfg.mode else {
        return Err(EngineError::InvalidConfig("run_fixed needs a fixed-step configuration".into()).into());
    };
    let filter = Filter::new(m, evidence)?;
    cfg.in_pool(|| {
        let mut summaries = Vec::new();
        let fail = |error: EngineError, summaries: Vec<StepSummary>| RunFailure { error, summaries };
        let master = RngStream::new(cfg.seed, 0);
        let mut ens = filter
            .init_ensemble(cfg.n_particles, cfg.t_start, &master)
            .map_err(|e| fail(e, Vec::new()))?;
        if filter.weigh_at_current_time(&mut ens) {
            if let Err(e) = maybe_resample(&mut ens, ResamplingPolicy::EveryStep, 0, cfg.seed) {
                return Err(fail(e, summaries));
            }
        }
        summaries.push(summarize(&ens));

        let events = filter.event_times(cfg.t_start, cfg.t_end);
        for (k, planned) in fixed_schedule(cfg.t_start, cfg.t_end, step, &events).into_iter().enumerate() {
            let k = k as u64 + 1;
            let result = filter.step(&mut ens, planned.h, &step_stream(cfg.seed, k)).and_then(|()| {
                ens.time = planned.time;
                filter.weigh_at_current_time(&mut ens);
                maybe_resample(&mut ens, cfg.resampling, k, cfg.seed)
            });
            if let Err(e) = result {
                return Err(fail(e, summaries));
            }
            summaries.push(summarize(&ens));
        }
        Ok(summaries)
    })
}

/// Summaries as CSV: `time`, then a `<name>_mean,<name>_std` pair for every
/// state followed by every parameter, in declaration order.
pub fn summaries_csv(m: &OdeModel, summaries: &[StepSummary]) -> String {
    let mut out = String::from("time");
    for name in m.states.iter().map(|s| &s.name).chain(m.params.iter().map(|p| &p.name)) {
        let _ = write!(out, ",{name}_mean,{name}_std");
    }
    out.push('\n');
    for s in summaries {
        let _ = write!(out, "{}", s.time);
        let pairs = s
            .state_mean
            .iter()
            .zip(&s.state_std)
            .chain(s.param_mean.iter().zip(&s.param_std));
        for (mean, std) in pairs {
            let _ = write!(out, ",{mean},{std}");
        }
        out.push('\n');
    }
    out
}
