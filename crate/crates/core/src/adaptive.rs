//! Adaptive step-size control for the particle filter.
//!
//! Each attempted step runs on a copy of the ensemble. The local error of a
//! step of size `h` is estimated by comparing the ensemble-mean deltas at
//! the start and the end of the step:
//!
//! ```text
//! err = h/2 * max_k |mean_delta_k(t + h) - mean_delta_k(t)|
//! ```
//!
//! which is the leading term of the difference between an Euler step and a
//! trapezoidal step. The copy is committed when `err <= tol` and discarded
//! otherwise. Step sizes are always shortened to land on evidence and
//! report times; evidence is only weighed, and the ensemble only resampled,
//! at evidence times.

use crate::engine::{
    maybe_resample, run_fixed, step_stream, summarize, EngineError, Filter, InferenceConfig, InferenceMode, RunFailure,
    StepSummary,
};
use crate::dist::RngStream;
use crate::evidence::{EvidenceSet, TIME_TOLERANCE};
use crate::model::OdeModel;

const ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepDecision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepController {
    pub tolerance: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub safety: f64,
    pub shrink_limit: f64,
    pub grow_limit: f64,
}

impl StepController {
    pub fn new(tolerance: f64, h_min: f64, h_max: f64) -> Self {
        StepController {
            tolerance,
            h_min,
            h_max,
            safety: 0.9,
            shrink_limit: 0.2,
            grow_limit: 5.0,
        }
    }

    /// Defaults for a run reporting every `report_interval`.
    pub fn for_report_interval(tolerance: f64, report_interval: f64) -> Self {
        StepController::new(tolerance, 1e-6 * report_interval, report_interval)
    }

    /// Decides on a step of size `h` with estimated error `err` and proposes
    /// the next step size.
    pub fn propose_step(&self, h: f64, err: f64, time: f64) -> Result<(StepDecision, f64), EngineError> {
        let err = if err.is_nan() { f64::INFINITY } else { err };
        let factor = (self.safety * (self.tolerance / err.max(ERROR_FLOOR)).sqrt())
            .clamp(self.shrink_limit, self.grow_limit);
        let proposed = h * factor;
        if err <= self.tolerance {
            Ok((StepDecision::Accept, proposed.clamp(self.h_min, self.h_max)))
        } else if proposed < self.h_min {
            Err(EngineError::StepUnderflow {
                time,
                h_min: self.h_min,
            })
        } else {
            Ok((StepDecision::Reject, proposed.min(self.h_max)))
        }
    }
}

/// `h/2` times the largest change in any mean delta across the step.
pub fn estimate_local_error(delta_start: &[f64], delta_end: &[f64], h: f64) -> f64 {
    let spread = delta_start
        .iter()
        .zip(delta_end)
        .map(|(a, b)| (b - a).abs())
        .fold(0.0, |acc: f64, d| if d.is_nan() { f64::NAN } else { acc.max(d) });
    0.5 * h * spread
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommittedStep {
    /// Time the step ends on.
    pub time: f64,
    pub h: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveReport {
    pub summaries: Vec<StepSummary>,
    pub accepted: usize,
    pub rejected: usize,
    pub steps: Vec<CommittedStep>,
}

/// Result of either inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutcome {
    pub summaries: Vec<StepSummary>,
    /// Step counts; `None` in fixed-step mode.
    pub accepted: Option<usize>,
    pub rejected: Option<usize>,
    pub steps: Vec<CommittedStep>,
}

/// Runs fixed-step or adaptive inference according to `cfg.mode`.
pub fn run_inference(m: &OdeModel, cfg: &InferenceConfig, evidence: &EvidenceSet) -> Result<InferenceOutcome, RunFailure> {
    match cfg.mode {
        InferenceMode::Fixed { .. } => Ok(InferenceOutcome {
            summaries: run_fixed(m, cfg, evidence)?,
            accepted: None,
            rejected: None,
            steps: Vec::new(),
        }),
        InferenceMode::Adaptive { .. } => {
            let r = run_adaptive(m, cfg, evidence)?;
            Ok(InferenceOutcome {
                summaries: r.summaries,
                accepted: Some(r.accepted),
                rejected: Some(r.rejected),
                steps: r.steps,
            })
        }
    }
}

/// Times to stop at: report times, evidence times and `t_end`, all strictly
/// after `t_start`, each flagged as a report time or not.
fn stops(t_start: f64, t_end: f64, report_interval: f64, events: &[f64]) -> Vec<(f64, bool)> {
    let mut out: Vec<(f64, bool)> = Vec::new();
    let mut k = 1u64;
    loop {
        let t = t_start + k as f64 * report_interval;
        if t > t_end - TIME_TOLERANCE {
            break;
        }
        out.push((t, true));
        k += 1;
    }
    if t_end > t_start + TIME_TOLERANCE {
        out.push((t_end, true));
    }
    out.extend(
        events
            .iter()
            .filter(|&&e| e > t_start + TIME_TOLERANCE && e <= t_end + TIME_TOLERANCE)
            .map(|&e| (e, false)),
    );
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, bool)> = Vec::with_capacity(out.len());
    for (t, report) in out {
        match merged.last_mut() {
            Some(last) if (t - last.0).abs() <= TIME_TOLERANCE => {
                // prefer the evidence time's exact value
                if !report {
                    last.0 = t;
                }
                last.1 |= report;
            }
            _ => merged.push((t, report)),
        }
    }
    merged
}

/// Particle filtering with adaptive step sizes.
pub fn run_adaptive(m: &OdeModel, cfg: &InferenceConfig, evidence: &EvidenceSet) -> Result<AdaptiveReport, RunFailure> {
    cfg.validate()?;
    let InferenceMode::Adaptive {
        report_interval,
        tolerance,
    } = cfg.mode
    else {
        return Err(EngineError::InvalidConfig("run_adaptive needs an adaptive configuration".into()).into());
    };
    let controller = StepController::for_report_interval(tolerance, report_interval);
    run_with_controller(m, cfg, evidence, report_interval, &controller)
}

/// [`run_adaptive`] with an explicit controller.
pub fn run_with_controller(
    m: &OdeModel,
    cfg: &InferenceConfig,
    evidence: &EvidenceSet,
    report_interval: f64,
    controller: &StepController,
) -> Result<AdaptiveReport, RunFailure> {
    let filter = Filter::new(m, evidence)?;
    cfg.in_pool(|| {
        let mut report = AdaptiveReport {
            summaries: Vec::new(),
            accepted: 0,
            rejected: 0,
            steps: Vec::new(),
        };
        let fail = |error: EngineError, report: AdaptiveReport| RunFailure {
            error,
            summaries: report.summaries,
        };
        let mut ens = match filter.init_ensemble(cfg.n_particles, cfg.t_start, &RngStream::new(cfg.seed, 0)) {
            Ok(e) => e,
            Err(e) => return Err(fail(e, report)),
        };
        if filter.weigh_at_current_time(&mut ens) {
            if let Err(e) = maybe_resample(&mut ens, cfg.resampling, 0, cfg.seed) {
                return Err(fail(e, report));
            }
        }
        report.summaries.push(summarize(&ens));

        let events = filter.event_times(cfg.t_start, cfg.t_end);
        let mut h = m.natural_step.clamp(controller.h_min, controller.h_max);
        let mut attempt: u64 = 0;
        for (stop, is_report) in stops(cfg.t_start, cfg.t_end, report_interval, &events) {
            while ens.time < stop - TIME_TOLERANCE {
                let remaining = stop - ens.time;
                let truncated = h >= remaining - TIME_TOLERANCE;
                let h_try = if truncated { remaining } else { h };
                attempt += 1;
                let mut trial = ens.clone();
                if let Err(e) = filter.step(&mut trial, h_try, &step_stream(cfg.seed, attempt)) {
                    return Err(fail(e, report));
                }
                let start = crate::engine::mean_deltas(&trial);
                let end = filter.current_deltas(&trial);
                let err = estimate_local_error(&start, &end, h_try);
                match controller.propose_step(h_try, err, ens.time) {
                    Ok((StepDecision::Accept, h_next)) => {
                        if truncated {
                            trial.time = stop;
                            h = h.max(h_next);
                        } else {
                            h = h_next;
                        }
                        ens = trial;
                        report.accepted += 1;
                        report.steps.push(CommittedStep {
                            time: ens.time,
                            h: h_try,
                            error: err,
                        });
                    }
                    Ok((StepDecision::Reject, h_next)) => {
                        report.rejected += 1;
                        h = h_next;
                    }
                    Err(e) => return Err(fail(e, report)),
                }
            }
            if filter.weigh_at_current_time(&mut ens) {
                if let Err(e) = maybe_resample(&mut ens, cfg.resampling, attempt, cfg.seed) {
                    return Err(fail(e, report));
                }
            }
            if is_report {
                report.summaries.push(summarize(&ens));
            }
        }
        Ok(report)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelFile;

    #[test]
    fn controller_examples() {
        let c = StepController::new(0.1, 1e-6, 1.0);
        let (d, h) = c.propose_step(0.1, 0.025, 0.0).unwrap();
        assert_eq!(d, StepDecision::Accept);
        assert!((h - 0.18).abs() < 1e-12);

        let (d, h) = c.propose_step(0.1, 0.4, 0.0).unwrap();
        assert_eq!(d, StepDecision::Reject);
        assert!((h - 0.045).abs() < 1e-12);

        let (d, h) = c.propose_step(0.1, 0.0, 0.0).unwrap();
        assert_eq!(d, StepDecision::Accept);
        assert!((h - 0.5).abs() < 1e-12);

        let (_, h) = c.propose_step(0.5, 0.0, 0.0).unwrap();
        assert_eq!(h, 1.0);

        let (d, h) = c.propose_step(0.1, 1e9, 0.0).unwrap();
        assert_eq!(d, StepDecision::Reject);
        assert!((h - 0.02).abs() < 1e-12);

        let tight = StepController::new(0.1, 0.05, 1.0);
        assert!(matches!(
            tight.propose_step(0.1, 1e9, 2.0),
            Err(EngineError::StepUnderflow { time, .. }) if time == 2.0
        ));
        assert_eq!(tight.propose_step(0.1, f64::NAN, 0.0).is_err(), true);
    }

    #[test]
    fn local_error_estimate() {
        assert!((estimate_local_error(&[1.0, 2.0], &[1.5, 1.0], 0.2) - 0.1).abs() < 1e-15);
        assert_eq!(estimate_local_error(&[3.0], &[3.0], 0.5), 0.0);
        assert!(estimate_local_error(&[0.0], &[f64::NAN], 0.5).is_nan());
    }

    #[test]
    fn stop_times() {
        let s = stops(0.0, 1.0, 0.25, &[0.1, 0.5]);
        let times: Vec<f64> = s.iter().map(|x| x.0).collect();
        assert_eq!(times, vec![0.1, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s[0].1, false);
        assert!(s[2].1);
    }

    fn constant_model() -> OdeModel {
        ModelFile::parse("model drift\nnatural_step 0.01\nstate X = 0\nparam k ~ gauss(1, 0.5) transition 0\ndX/dt = k\n")
            .unwrap()
            .model
    }

    #[test]
    fn constant_deltas_never_reject() {
        let m = constant_model();
        let cfg = InferenceConfig::adaptive(0.5, 1e-3, 200, 0.0, 3.0, 4);
        let r = run_adaptive(&m, &cfg, &EvidenceSet::new()).unwrap();
        assert_eq!(r.rejected, 0);
        assert!(r.steps.iter().all(|s| s.error == 0.0));
        // 0.01, 0.05, 0.25, then report-interval steps
        assert!(r.accepted <= 9, "{}", r.accepted);
        let times: Vec<f64> = r.summaries.iter().map(|s| s.time).collect();
        assert_eq!(times, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        let last = r.summaries.last().unwrap();
        assert!((last.state_mean[0] - 3.0 * last.param_mean[0]).abs() < 1e-9);
    }

    #[test]
    fn errors_within_tolerance_and_deterministic() {
        let m = ModelFile::parse(
            "model decay\nnatural_step 0.1\nstate X = 1\nparam k ~ gauss(2, 0.2) transition 0\ndX/dt = -k * X\n",
        )
        .unwrap()
        .model;
        let cfg = InferenceConfig::adaptive(0.5, 1e-3, 100, 0.0, 2.0, 9);
        let a = run_adaptive(&m, &cfg, &EvidenceSet::new()).unwrap();
        assert!(a.steps.iter().all(|s| s.error <= 1e-3));
        assert!(a.rejected > 0);
        let b = run_adaptive(&m, &cfg, &EvidenceSet::new()).unwrap();
        assert_eq!(a, b);
        let c = run_adaptive(&m, &InferenceConfig { workers: Some(3), ..cfg.clone() }, &EvidenceSet::new()).unwrap();
        assert_eq!(a, c);
    }
}
