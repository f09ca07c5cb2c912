//! ODE models: state equations, parameter priors and transition noise,
//! external inputs, and observation specifications.

mod file;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dist::{DistError, Distribution};
use crate::expr::{is_identifier, CompiledExpr, EvalError, ExprNode};

pub use file::{EvidenceSource, ModelFile, ModelFileError};

#[derive(Debug, Clone, PartialEq)]
pub struct StateVar {
    pub name: String,
    /// Right-hand side of `d<name>/dt`.
    pub rhs: ExprNode,
    pub initial_mean: f64,
    pub initial_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub prior: Distribution,
    /// Standard deviation of the per-step Gaussian random walk; zero freezes
    /// the parameter at its initial draw.
    pub transition_sigma: f64,
}

/// An external input. The intended (observed) series is the evidence
/// stream whose target is `name`; the true input is Gaussian around it.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub name: String,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSpec {
    pub state: String,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeModel {
    pub name: String,
    pub states: Vec<StateVar>,
    pub params: Vec<ParameterSpec>,
    pub inputs: Vec<InputSpec>,
    pub observations: Vec<ObservationSpec>,
    pub natural_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosticKind {
    EmptyModel,
    InvalidName,
    DuplicateName,
    UnboundSymbol(String),
    NegativeSigma,
    InvalidPrior(DistError),
    NonFinite,
    UnknownObservedState,
    DuplicateObservation,
    NonPositiveObservationSigma,
    NonPositiveStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// The model item at fault, e.g. `state X` or `param c`.
    pub location: String,
    pub kind: DiagnosticKind,
}

impl Diagnostic {
    fn new(location: impl Into<String>, kind: DiagnosticKind) -> Self {
        Diagnostic {
            location: location.into(),
            kind,
        }
    }

    /// The declared name embedded in `location`, if any.
    pub fn item_name(&self) -> Option<&str> {
        self.location.split_once(' ').map(|(_, name)| name)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.location)?;
        match &self.kind {
            DiagnosticKind::EmptyModel => f.write_str("model declares no states"),
            DiagnosticKind::InvalidName => f.write_str("not a valid identifier"),
            DiagnosticKind::DuplicateName => f.write_str("name is declared more than once"),
            DiagnosticKind::UnboundSymbol(s) => write!(f, "equation uses undeclared symbol `{s}`"),
            DiagnosticKind::NegativeSigma => f.write_str("standard deviation must be non-negative"),
            DiagnosticKind::InvalidPrior(e) => write!(f, "invalid prior: {e}"),
            DiagnosticKind::NonFinite => f.write_str("value must be finite"),
            DiagnosticKind::UnknownObservedState => f.write_str("observes a state that is not declared"),
            DiagnosticKind::DuplicateObservation => f.write_str("state is observed more than once"),
            DiagnosticKind::NonPositiveObservationSigma => {
                f.write_str("observation standard deviation must be positive")
            }
            DiagnosticKind::NonPositiveStep => f.write_str("natural time step must be positive"),
        }
    }
}

fn bad_sigma(sigma: f64) -> Option<DiagnosticKind> {
    if sigma.is_nan() || sigma < 0.0 {
        Some(DiagnosticKind::NegativeSigma)
    } else if !sigma.is_finite() {
        Some(DiagnosticKind::NonFinite)
    } else {
        None
    }
}

/// Checks every model invariant; an empty result means the model is valid.
pub fn validate_model(m: &OdeModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if m.states.is_empty() {
        out.push(Diagnostic::new("model", DiagnosticKind::EmptyModel));
    }
    if !(m.natural_step > 0.0 && m.natural_step.is_finite()) {
        out.push(Diagnostic::new("model", DiagnosticKind::NonPositiveStep));
    }

    let mut seen = BTreeSet::new();
    let declared = m
        .states
        .iter()
        .map(|s| ("state", &s.name))
        .chain(m.params.iter().map(|p| ("param", &p.name)))
        .chain(m.inputs.iter().map(|i| ("input", &i.name)));
    for (kind, name) in declared {
        let location = format!("{kind} {name}");
        if !is_identifier(name) {
            out.push(Diagnostic::new(location, DiagnosticKind::InvalidName));
        } else if !seen.insert(name.as_str()) {
            out.push(Diagnostic::new(location, DiagnosticKind::DuplicateName));
        }
    }

    for s in &m.states {
        let location = format!("state {}", s.name);
        for sym in s.rhs.free_symbols() {
            if !seen.contains(sym.as_str()) {
                out.push(Diagnostic::new(location.clone(), DiagnosticKind::UnboundSymbol(sym)));
            }
        }
        if !s.initial_mean.is_finite() {
            out.push(Diagnostic::new(location.clone(), DiagnosticKind::NonFinite));
        }
        if let Some(kind) = bad_sigma(s.initial_sigma) {
            out.push(Diagnostic::new(location, kind));
        }
    }

    for p in &m.params {
        let location = format!("param {}", p.name);
        match p.prior.validate() {
            Err(DistError::InvalidSigma(s)) if s < 0.0 => {
                out.push(Diagnostic::new(location.clone(), DiagnosticKind::NegativeSigma))
            }
            Err(e) => out.push(Diagnostic::new(location.clone(), DiagnosticKind::InvalidPrior(e))),
            Ok(()) => {}
        }
        if let Some(kind) = bad_sigma(p.transition_sigma) {
            out.push(Diagnostic::new(location, kind));
        }
    }

    for i in &m.inputs {
        if let Some(kind) = bad_sigma(i.sigma) {
            out.push(Diagnostic::new(format!("input {}", i.name), kind));
        }
    }

    let mut observed = BTreeSet::new();
    for o in &m.observations {
        let location = format!("observe {}", o.state);
        if !m.states.iter().any(|s| s.name == o.state) {
            out.push(Diagnostic::new(location.clone(), DiagnosticKind::UnknownObservedState));
        } else if !observed.insert(o.state.as_str()) {
            out.push(Diagnostic::new(location.clone(), DiagnosticKind::DuplicateObservation));
        }
        if !(o.sigma > 0.0 && o.sigma.is_finite()) {
            out.push(Diagnostic::new(location, DiagnosticKind::NonPositiveObservationSigma));
        }
    }
    out
}

impl OdeModel {
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|i| i.name == name)
    }

    /// Slot of `name` in the flat `[states.., params.., inputs..]` layout
    /// used by [`OdeModel::compile_rhs`].
    pub fn slot_of(&self, name: &str) -> Option<usize> {
        let (ns, np) = (self.states.len(), self.params.len());
        self.state_index(name)
            .or_else(|| self.param_index(name).map(|i| ns + i))
            .or_else(|| self.input_index(name).map(|i| ns + np + i))
    }

    pub fn slot_count(&self) -> usize {
        self.states.len() + self.params.len() + self.inputs.len()
    }

    /// Every right-hand side lowered against the flat slot layout.
    pub fn compile_rhs(&self) -> Result<Vec<CompiledExpr>, EvalError> {
        let resolve = |name: &str| self.slot_of(name);
        self.states
            .iter()
            .map(|s| CompiledExpr::compile(&s.rhs, &resolve))
            .collect()
    }

    pub fn initial_means(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.initial_mean).collect()
    }

    pub fn prior_centers(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.prior.center()).collect()
    }

    /// Named values in declaration order, for error messages and reports.
    pub fn named(&self, states: &[f64], params: &[f64]) -> BTreeMap<String, f64> {
        self.states
            .iter()
            .map(|s| &s.name)
            .zip(states)
            .chain(self.params.iter().map(|p| &p.name).zip(params))
            .map(|(n, v)| (n.clone(), *v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    pub(crate) fn lorenz() -> OdeModel {
        let state = |name: &str, rhs: &str| StateVar {
            name: name.into(),
            rhs: parse_expr(rhs).unwrap(),
            initial_mean: 1.0,
            initial_sigma: 0.0,
        };
        let param = |name: &str, mean: f64, sd: f64, t: f64| ParameterSpec {
            name: name.into(),
            prior: Distribution::Gaussian { mean, sd },
            transition_sigma: t,
        };
        OdeModel {
            name: "lorenz".into(),
            states: vec![
                state("X", "a*X + Y*Z"),
                state("Y", "b*(Y - Z)"),
                state("Z", "c*Y - Z - X*Y"),
            ],
            params: vec![
                param("a", -8.0 / 3.0, 0.0, 0.0),
                param("b", -10.0, 0.0, 0.0),
                param("c", 28.0, 1.12, 0.1),
            ],
            inputs: vec![],
            observations: vec![ObservationSpec {
                state: "X".into(),
                sigma: 0.01,
            }],
            natural_step: 0.01,
        }
    }

    #[test]
    fn lorenz_is_valid() {
        assert_eq!(validate_model(&lorenz()), vec![]);
    }

    #[test]
    fn undeclared_symbol() {
        let mut m = lorenz();
        m.states[0].rhs = parse_expr("a*X + q").unwrap();
        let d = validate_model(&m);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::UnboundSymbol("q".into()));
        assert_eq!(d[0].location, "state X");
    }

    #[test]
    fn negative_transition_sigma() {
        let mut m = lorenz();
        m.params[2].transition_sigma = -0.1;
        let d = validate_model(&m);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::NegativeSigma);
    }

    #[test]
    fn other_invariants() {
        let mut m = lorenz();
        m.params[1].name = "a".into();
        m.params[0].prior = Distribution::Uniform { lo: 1.0, hi: 0.0 };
        m.observations.push(ObservationSpec { state: "W".into(), sigma: 0.0 });
        m.natural_step = 0.0;
        m.states[1].initial_sigma = -1.0;
        let kinds: Vec<_> = validate_model(&m).into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::DuplicateName));
        assert!(kinds.contains(&DiagnosticKind::NonPositiveStep));
        assert!(kinds.contains(&DiagnosticKind::UnknownObservedState));
        assert!(kinds.contains(&DiagnosticKind::NonPositiveObservationSigma));
        assert!(kinds.contains(&DiagnosticKind::NegativeSigma));
        assert!(kinds.iter().any(|k| matches!(k, DiagnosticKind::InvalidPrior(_))));

        let empty = OdeModel { states: vec![], observations: vec![], ..lorenz() };
        assert!(validate_model(&empty).iter().any(|d| d.kind == DiagnosticKind::EmptyModel));
    }

    #[test]
    fn slot_layout() {
        let m = lorenz();
        assert_eq!(m.slot_of("X"), Some(0));
        assert_eq!(m.slot_of("c"), Some(5));
        assert_eq!(m.slot_of("q"), None);
        let rhs = m.compile_rhs().unwrap();
        let slots = [1.0, 1.0, 1.0, -8.0 / 3.0, -10.0, 28.0];
        let d: Vec<f64> = rhs.iter().map(|r| r.eval(&slots).unwrap()).collect();
        assert!((d[0] + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 26.0);
    }
}
