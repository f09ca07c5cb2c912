//! Line-oriented model files.
//!
//! ```text
//! # comment
//! model lorenz
//! natural_step 0.01
//! state X = 2 [~ sigma 0.5]
//! param c ~ gauss(28, 1.12) transition 0.1
//! param k ~ truncgauss(0.1, 0.1, 0, inf) transition 0.01
//! param u ~ uniform(0, 1) transition 0
//! input TOC1 from toc1.csv continuous sigma 0.01
//! dX/dt = a*X + Y*Z
//! observe X sigma 0.01 evidence lorenz_X.csv instantaneous
//! ```
//!
//! Numeric fields accept constant expressions such as `-8/3`. CSV paths are
//! resolved relative to the model file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Diagnostic, InputSpec, ObservationSpec, OdeModel, ParameterSpec, StateVar};
use crate::dist::Distribution;
use crate::evidence::{load_csv, EvidenceError, EvidenceMode, EvidenceSet};
use crate::expr::{eval_expr, is_identifier, parse_expr, Bindings, ExprNode};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}:{line}:{column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("evidence for `{target}` ({path}): {source}")]
    Evidence {
        target: String,
        path: String,
        #[source]
        source: EvidenceError,
    },
}

/// A CSV file referenced from a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSource {
    pub target: String,
    pub path: PathBuf,
    pub mode: EvidenceMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: OdeModel,
    pub sources: Vec<EvidenceSource>,
    /// Directory that relative source paths are resolved against.
    pub base_dir: PathBuf,
    /// Source line of each declared item, keyed by name.
    lines: BTreeMap<String, usize>,
    path_label: String,
}

struct LineCtx<'a> {
    path: &'a str,
    line: usize,
    text: &'a str,
}

impl LineCtx<'_> {
    fn err_at(&self, fragment: &str, message: impl Into<String>) -> ModelFileError {
        // column of `fragment` if it is a sub-slice of this line
        let column = {
            let base = self.text.as_ptr() as usize;
            let at = fragment.as_ptr() as usize;
            if at >= base && at <= base + self.text.len() {
                at - base + 1
            } else {
                1
            }
        };
        ModelFileError::Syntax {
            path: self.path.to_string(),
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn expr(&self, fragment: &str) -> Result<ExprNode, ModelFileError> {
        let lead = fragment.len() - fragment.trim_start().len();
        let trimmed = fragment.trim();
        parse_expr(trimmed).map_err(|e| {
            let column_base = &fragment[lead..];
            let mut err = self.err_at(column_base, e.to_string());
            if let ModelFileError::Syntax { column, .. } = &mut err {
                *column += e.position();
            }
            err
        })
    }

    fn number(&self, fragment: &str) -> Result<f64, ModelFileError> {
        match fragment.trim() {
            "inf" | "+inf" => return Ok(f64::INFINITY),
            "-inf" => return Ok(f64::NEG_INFINITY),
            _ => {}
        }
        let node = self.expr(fragment)?;
        eval_expr(&node, &Bindings::new())
            .map_err(|e| self.err_at(fragment.trim_start(), format!("expected a constant: {e}")))
    }

    fn ident<'t>(&self, token: Option<&'t str>, what: &str) -> Result<&'t str, ModelFileError> {
        match token {
            Some(t) if is_identifier(t) => Ok(t),
            Some(t) => Err(self.err_at(t, format!("`{t}` is not a valid {what} name"))),
            None => Err(self.err_at(self.text.trim_end(), format!("missing {what} name"))),
        }
    }
}

/// Splits `args` at top-level commas.
fn split_args(args: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in args.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&args[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&args[start..]);
    out
}

fn parse_prior(ctx: &LineCtx, text: &str) -> Result<Distribution, ModelFileError> {
    let text = text.trim();
    let open = text
        .find('(')
        .ok_or_else(|| ctx.err_at(text, "expected uniform(..), truncgauss(..) or gauss(..)"))?;
    if !text.ends_with(')') {
        return Err(ctx.err_at(text, "unterminated distribution arguments"));
    }
    let family = text[..open].trim();
    let args = split_args(&text[open + 1..text.len() - 1]);
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(ctx.err_at(text, format!("`{family}` takes {n} arguments, got {}", args.len())))
        }
    };
    let nums = |ctx: &LineCtx| args.iter().map(|a| ctx.number(a)).collect::<Result<Vec<_>, _>>();
    match family {
        "uniform" => {
            arity(2)?;
            let v = nums(ctx)?;
            Ok(Distribution::Uniform { lo: v[0], hi: v[1] })
        }
        "gauss" => {
            arity(2)?;
            let v = nums(ctx)?;
            Ok(Distribution::Gaussian { mean: v[0], sd: v[1] })
        }
        "truncgauss" => {
            arity(4)?;
            let v = nums(ctx)?;
            Ok(Distribution::TruncatedGaussian { mean: v[0], sd: v[1], lo: v[2], hi: v[3] })
        }
        other => Err(ctx.err_at(
            &text[..open],
            format!("unknown distribution `{other}` (expected uniform, truncgauss or gauss)"),
        )),
    }
}

fn parse_mode(ctx: &LineCtx, token: &str) -> Result<EvidenceMode, ModelFileError> {
    token.parse().map_err(|m: String| ctx.err_at(token, m))
}

impl ModelFile {
    pub fn load(path: impl AsRef<Path>) -> Result<ModelFile, ModelFileError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ModelFile::parse_with(&text, &path.display().to_string(), base)
    }

    /// Parses model text; relative CSV paths resolve against the current
    /// directory.
    pub fn parse(text: &str) -> Result<ModelFile, ModelFileError> {
        ModelFile::parse_with(text, "<model>", PathBuf::new())
    }

    pub fn parse_with(text: &str, path_label: &str, base_dir: PathBuf) -> Result<ModelFile, ModelFileError> {
        let mut name: Option<String> = None;
        let mut natural_step: Option<f64> = None;
        let mut states: Vec<(StateVar, usize)> = Vec::new();
        let mut equations: BTreeMap<String, (ExprNode, usize)> = BTreeMap::new();
        let mut params = Vec::new();
        let mut inputs = Vec::new();
        let mut observations = Vec::new();
        let mut sources = Vec::new();
        let mut lines = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let ctx = LineCtx {
                path: path_label,
                line: line_no,
                text: raw,
            };
            let body = content.trim_start();
            let (keyword, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));

            if let Some(state) = keyword.strip_prefix('d').and_then(|k| k.strip_suffix("/dt")) {
                let state = ctx.ident(Some(state), "state")?;
                let rhs = rest
                    .trim_start()
                    .strip_prefix('=')
                    .ok_or_else(|| ctx.err_at(rest.trim_start(), "expected `=` after the derivative"))?;
                let node = ctx.expr(rhs)?;
                if equations.insert(state.to_string(), (node, line_no)).is_some() {
                    return Err(ctx.err_at(keyword, format!("second equation for `{state}`")));
                }
                continue;
            }

            let mut tokens = rest.split_whitespace();
            match keyword {
                "model" => {
                    let n = ctx.ident(tokens.next(), "model")?;
                    name = Some(n.to_string());
                }
                "natural_step" => {
                    natural_step = Some(ctx.number(rest)?);
                }
                "state" => {
                    let id = ctx.ident(tokens.next(), "state")?;
                    let after_id = rest.trim_start()[id.len()..].trim_start();
                    let value = after_id
                        .strip_prefix('=')
                        .ok_or_else(|| ctx.err_at(after_id, "expected `= <initial value>`"))?;
                    let (mean_text, sigma_text) = match value.split_once('~') {
                        Some((m, s)) => {
                            let s = s.trim_start();
                            let s = s
                                .strip_prefix("sigma")
                                .ok_or_else(|| ctx.err_at(s, "expected `sigma <value>` after `~`"))?;
                            (m, Some(s))
                        }
                        None => (value, None),
                    };
                    let initial_mean = ctx.number(mean_text)?;
                    let initial_sigma = sigma_text.map(|s| ctx.number(s)).transpose()?.unwrap_or(0.0);
                    lines.insert(id.to_string(), line_no);
                    states.push((
                        StateVar {
                            name: id.to_string(),
                            rhs: ExprNode::Constant(0.0),
                            initial_mean,
                            initial_sigma,
                        },
                        line_no,
                    ));
                }
                "param" => {
                    let id = ctx.ident(tokens.next(), "parameter")?;
                    let after_id = rest.trim_start()[id.len()..].trim_start();
                    let spec = after_id
                        .strip_prefix('~')
                        .ok_or_else(|| ctx.err_at(after_id, "expected `~ <distribution>`"))?;
                    let (dist_text, transition) = spec
                        .rsplit_once("transition")
                        .ok_or_else(|| ctx.err_at(spec, "expected `transition <sigma>`"))?;
                    let prior = parse_prior(&ctx, dist_text)?;
                    let transition_sigma = ctx.number(transition)?;
                    lines.insert(id.to_string(), line_no);
                    params.push(ParameterSpec {
                        name: id.to_string(),
                        prior,
                        transition_sigma,
                    });
                }
                "input" => {
                    let id = ctx.ident(tokens.next(), "input")?;
                    match tokens.next() {
                        Some("from") => {}
                        Some(t) => return Err(ctx.err_at(t, "expected `from <csv path>`")),
                        None => return Err(ctx.err_at(id, "expected `from <csv path>`")),
                    }
                    let path = tokens
                        .next()
                        .ok_or_else(|| ctx.err_at(id, "missing csv path"))?;
                    let mut mode = EvidenceMode::Continuous;
                    let mut next = tokens.next();
                    if let Some(t) = next.filter(|t| *t != "sigma") {
                        mode = parse_mode(&ctx, t)?;
                        next = tokens.next();
                    }
                    if next != Some("sigma") {
                        return Err(ctx.err_at(raw.trim_end(), "expected `sigma <input sigma>`"));
                    }
                    let sigma_text = tokens.collect::<Vec<_>>().join(" ");
                    let sigma = ctx.number(&sigma_text)?;
                    lines.insert(id.to_string(), line_no);
                    inputs.push(InputSpec {
                        name: id.to_string(),
                        sigma,
                    });
                    sources.push(EvidenceSource {
                        target: id.to_string(),
                        path: PathBuf::from(path),
                        mode,
                    });
                }
                "observe" => {
                    let id = ctx.ident(tokens.next(), "state")?;
                    match tokens.next() {
                        Some("sigma") => {}
                        Some(t) => return Err(ctx.err_at(t, "expected `sigma <obs sigma>`")),
                        None => return Err(ctx.err_at(id, "expected `sigma <obs sigma>`")),
                    }
                    let sigma_tok = tokens
                        .next()
                        .ok_or_else(|| ctx.err_at(id, "missing observation sigma"))?;
                    let sigma = ctx.number(sigma_tok)?;
                    match tokens.next() {
                        None => {}
                        Some("evidence") => {
                            let path = tokens
                                .next()
                                .ok_or_else(|| ctx.err_at(sigma_tok, "missing evidence csv path"))?;
                            let mode = match tokens.next() {
                                Some(t) => parse_mode(&ctx, t)?,
                                None => EvidenceMode::Instantaneous,
                            };
                            sources.push(EvidenceSource {
                                target: id.to_string(),
                                path: PathBuf::from(path),
                                mode,
                            });
                        }
                        Some(t) => return Err(ctx.err_at(t, "expected `evidence <csv path>`")),
                    }
                    if let Some(extra) = tokens.next() {
                        return Err(ctx.err_at(extra, "unexpected trailing input"));
                    }
                    lines.entry(format!("observe {id}")).or_insert(line_no);
                    observations.push(ObservationSpec {
                        state: id.to_string(),
                        sigma,
                    });
                }
                other => {
                    return Err(ctx.err_at(
                        other,
                        format!("unknown directive `{other}` (expected model, natural_step, state, param, input, observe or d<state>/dt)"),
                    ))
                }
            }
        }

        let syntax = |line: usize, message: String| ModelFileError::Syntax {
            path: path_label.to_string(),
            line,
            column: 1,
            message,
        };
        let mut states_out = Vec::with_capacity(states.len());
        for (mut s, line) in states {
            let (rhs, _) = equations
                .remove(&s.name)
                .ok_or_else(|| syntax(line, format!("state `{}` has no `d{}/dt` equation", s.name, s.name)))?;
            s.rhs = rhs;
            states_out.push(s);
        }
        if let Some((state, (_, line))) = equations.into_iter().next() {
            return Err(syntax(line, format!("equation for undeclared state `{state}`")));
        }
        let name = name.ok_or_else(|| syntax(1, "missing `model <name>` line".into()))?;
        let natural_step = natural_step.ok_or_else(|| syntax(1, "missing `natural_step <h>` line".into()))?;

        Ok(ModelFile {
            model: OdeModel {
                name,
                states: states_out,
                params,
                inputs,
                observations,
                natural_step,
            },
            sources,
            base_dir,
            lines,
            path_label: path_label.to_string(),
        })
    }

    /// The source line that declared `name`, if any.
    pub fn line_of(&self, name: &str) -> Option<usize> {
        self.lines.get(name).copied()
    }

    /// `path:line: message` rendering of a validation diagnostic.
    pub fn locate(&self, d: &Diagnostic) -> String {
        let line = if d.location.starts_with("observe ") {
            self.line_of(&d.location)
        } else {
            d.item_name().and_then(|n| self.line_of(n))
        };
        match line {
            Some(l) => format!("{}:{}: {}", self.path_label, l, d),
            None => format!("{}: {}", self.path_label, d),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Loads every CSV the file references.
    pub fn load_evidence(&self) -> Result<EvidenceSet, ModelFileError> {
        let mut set = EvidenceSet::new();
        for src in &self.sources {
            let path = self.resolve(&src.path);
            let stream = load_csv(&path, src.target.clone(), src.mode).map_err(|source| {
                ModelFileError::Evidence {
                    target: src.target.clone(),
                    path: path.display().to_string(),
                    source,
                }
            })?;
            set.insert(stream);
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, DiagnosticKind};

    const LORENZ: &str = "\
# three-state system
model lorenz
natural_step 0.01
state X = 2
state Y = 2 ~ sigma 0.5
state Z = 2
param a ~ gauss(-8/3, 0) transition 0
param b ~ gauss(-10, 0) transition 0
param c ~ gauss(28, 1.12) transition 0.1
dX/dt = a*X + Y*Z
dY/dt = b*(Y - Z)
dZ/dt = c*Y - Z - X*Y   # trailing comment
observe X sigma 0.01 evidence lorenz_X.csv instantaneous
";

    #[test]
    fn parses_lorenz() {
        let f = ModelFile::parse(LORENZ).unwrap();
        let m = &f.model;
        assert_eq!(m.name, "lorenz");
        assert_eq!(m.natural_step, 0.01);
        assert_eq!(m.states.len(), 3);
        assert_eq!(m.states[1].initial_sigma, 0.5);
        assert_eq!(m.params[0].prior, Distribution::Gaussian { mean: -8.0 / 3.0, sd: 0.0 });
        assert_eq!(m.params[2].transition_sigma, 0.1);
        assert_eq!(m.states[2].rhs, parse_expr("c*Y - Z - X*Y").unwrap());
        assert_eq!(m.observations[0].sigma, 0.01);
        assert_eq!(f.sources[0].mode, EvidenceMode::Instantaneous);
        assert_eq!(f.line_of("c"), Some(9));
        assert!(validate_model(m).is_empty());
    }

    #[test]
    fn other_distributions_and_inputs() {
        let text = "model pif\nnatural_step 1\nstate P = 0.386\n\
            param k ~ truncgauss(0.1, 0.1, 0, inf) transition 0.01\n\
            param u ~ uniform(0, 2) transition 0\n\
            input T from toc1.csv sigma 0.01\n\
            input V from v.csv instantaneous sigma 1e-3\n\
            dP/dt = u*k/(k + T) - P + V\n";
        let f = ModelFile::parse(text).unwrap();
        assert_eq!(
            f.model.params[0].prior,
            Distribution::TruncatedGaussian { mean: 0.1, sd: 0.1, lo: 0.0, hi: f64::INFINITY }
        );
        assert_eq!(f.model.params[1].prior, Distribution::Uniform { lo: 0.0, hi: 2.0 });
        assert_eq!(f.sources[0].mode, EvidenceMode::Continuous);
        assert_eq!(f.sources[1].mode, EvidenceMode::Instantaneous);
        assert_eq!(f.model.inputs[1].sigma, 1e-3);
    }

    fn syntax_error(text: &str) -> (usize, usize, String) {
        match ModelFile::parse(text).unwrap_err() {
            ModelFileError::Syntax { line, column, message, .. } => (line, column, message),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_report_line_and_column() {
        let (line, column, _) = syntax_error("model m\nnatural_step 1\nstate X = 1\ndX/dt = a * * X\n");
        assert_eq!((line, column), (4, 13));

        let (line, column, msg) = syntax_error("model m\nnatural_step 1\nstate X = 1\nparam a ~ beta(1,2) transition 0\n");
        assert_eq!((line, column), (4, 11));
        assert!(msg.contains("beta"));

        let (line, _, msg) = syntax_error("model m\nnatural_step 1\nstate X = 1\n");
        assert_eq!(line, 3);
        assert!(msg.contains("no `dX/dt`"));

        let (line, _, _) = syntax_error("model m\nnatural_step 1\nstate X = 1\ndX/dt = 1\ndY/dt = 2\n");
        assert_eq!(line, 5);

        let (line, column, _) = syntax_error("model m\nfrobnicate\n");
        assert_eq!((line, column), (2, 1));

        let (line, _, _) = syntax_error("natural_step 1\nstate X = 1\ndX/dt = 1\n");
        assert_eq!(line, 1);
    }

    #[test]
    fn validation_diagnostics_map_to_lines() {
        let text = "model m\nnatural_step 1\nstate X = 1\nparam a ~ gauss(1, 1) transition -0.5\ndX/dt = a*X + q\n";
        let f = ModelFile::parse(text).unwrap();
        let diags = validate_model(&f.model);
        assert_eq!(diags.len(), 2);
        let rendered: Vec<String> = diags.iter().map(|d| f.locate(d)).collect();
        assert!(rendered.iter().any(|r| r.starts_with("<model>:3:") && r.contains("`q`")));
        assert!(rendered.iter().any(|r| r.starts_with("<model>:4:")));
        assert!(diags.iter().any(|d| d.kind == DiagnosticKind::NegativeSigma));
    }
}
