//! Compile an [`OdeModel`] into a two-slice dynamic Bayesian network.
//!
//! Each state equation becomes a sub-net of a deterministic delta node (the
//! Euler difference quotient, whose parents are the symbols on the
//! right-hand side) and a state node. Between slices a state depends on
//! itself and its delta, and every parameter depends on its own previous
//! value. Observed nodes hang off their true state, true inputs off their
//! intended inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dist::Distribution;
use crate::expr::ExprNode;
use crate::model::{validate_model, Diagnostic, OdeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    State,
    Delta,
    Parameter,
    TrueInput,
    IntendedInput,
    Observed,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::State,
        NodeKind::Delta,
        NodeKind::Parameter,
        NodeKind::TrueInput,
        NodeKind::IntendedInput,
        NodeKind::Observed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NodeKind::State => "state",
            NodeKind::Delta => "delta",
            NodeKind::Parameter => "parameter",
            NodeKind::TrueInput => "true input",
            NodeKind::IntendedInput => "intended input",
            NodeKind::Observed => "observed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodePayload {
    None,
    Expression(ExprNode),
    Prior {
        prior: Distribution,
        transition_sigma: f64,
    },
    Sigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct DbnNode {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub payload: NodePayload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnGraph {
    pub model_name: String,
    pub nodes: Vec<DbnNode>,
    /// `(parent, child)` within one slice.
    pub intra_arcs: Vec<(NodeId, NodeId)>,
    /// `(parent in slice t, child in slice t+1)`.
    pub inter_arcs: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("model is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("intra-slice dependencies form a cycle through `{0}`")]
    CyclicIntraSlice(String),
}

pub fn delta_name(state: &str) -> String {
    format!("delta_{state}")
}

pub fn observed_name(state: &str) -> String {
    format!("obs_{state}")
}

pub fn intended_name(input: &str) -> String {
    format!("intended_{input}")
}

fn sorted<'a, T>(items: &'a [T], name: impl Fn(&T) -> &str) -> Vec<&'a T> {
    let mut v: Vec<&T> = items.iter().collect();
    v.sort_by(|a, b| name(a).cmp(name(b)));
    v
}

/// Builds the network for a valid model.
pub fn compile(m: &OdeModel) -> Result<DbnGraph, CompileError> {
    let diagnostics = validate_model(m);
    if !diagnostics.is_empty() {
        return Err(CompileError::Invalid(diagnostics));
    }

    let mut nodes = Vec::new();
    let mut push = |name: String, kind: NodeKind, payload: NodePayload| {
        let id = NodeId(nodes.len());
        nodes.push(DbnNode { id, name, kind, payload });
        id
    };

    let states = sorted(&m.states, |s| &s.name);
    let params = sorted(&m.params, |p| &p.name);
    let inputs = sorted(&m.inputs, |i| &i.name);
    let observations = sorted(&m.observations, |o| &o.state);

    let mut symbol_node: BTreeMap<&str, NodeId> = BTreeMap::new();
    let mut state_ids = Vec::new();
    for s in &states {
        let id = push(s.name.clone(), NodeKind::State, NodePayload::None);
        symbol_node.insert(&s.name, id);
        state_ids.push(id);
    }
    let mut delta_ids = Vec::new();
    for s in &states {
        delta_ids.push(push(
            delta_name(&s.name),
            NodeKind::Delta,
            NodePayload::Expression(s.rhs.clone()),
        ));
    }
    let mut param_ids = Vec::new();
    for p in &params {
        let id = push(
            p.name.clone(),
            NodeKind::Parameter,
            NodePayload::Prior {
                prior: p.prior,
                transition_sigma: p.transition_sigma,
            },
        );
        symbol_node.insert(&p.name, id);
        param_ids.push(id);
    }
    let mut true_input_ids = Vec::new();
    for i in &inputs {
        let id = push(i.name.clone(), NodeKind::TrueInput, NodePayload::Sigma(i.sigma));
        symbol_node.insert(&i.name, id);
        true_input_ids.push(id);
    }
    let mut intended_ids = Vec::new();
    for i in &inputs {
        intended_ids.push(push(intended_name(&i.name), NodeKind::IntendedInput, NodePayload::None));
    }
    let mut observed_ids = Vec::new();
    for o in &observations {
        observed_ids.push(push(observed_name(&o.state), NodeKind::Observed, NodePayload::Sigma(o.sigma)));
    }

    let mut intra_arcs = Vec::new();
    for (s, &delta) in states.iter().zip(&delta_ids) {
        for sym in s.rhs.free_symbols() {
            intra_arcs.push((symbol_node[sym.as_str()], delta));
        }
    }
    for (&intended, &truth) in intended_ids.iter().zip(&true_input_ids) {
        intra_arcs.push((intended, truth));
    }
    for (o, &obs) in observations.iter().zip(&observed_ids) {
        intra_arcs.push((symbol_node[o.state.as_str()], obs));
    }

    let mut inter_arcs = Vec::new();
    for (&state, &delta) in state_ids.iter().zip(&delta_ids) {
        inter_arcs.push((state, state));
        inter_arcs.push((delta, state));
    }
    for &p in &param_ids {
        inter_arcs.push((p, p));
    }

    let graph = DbnGraph {
        model_name: m.name.clone(),
        nodes,
        intra_arcs,
        inter_arcs,
    };
    graph.check_acyclic()?;
    Ok(graph)
}

impl DbnGraph {
    pub fn node(&self, id: NodeId) -> &DbnNode {
        &self.nodes[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&DbnNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn intra_parents(&self, id: NodeId) -> Vec<NodeId> {
        self.intra_arcs.iter().filter(|(_, c)| *c == id).map(|(p, _)| *p).collect()
    }

    pub fn inter_parents(&self, id: NodeId) -> Vec<NodeId> {
        self.inter_arcs.iter().filter(|(_, c)| *c == id).map(|(p, _)| *p).collect()
    }

    fn check_acyclic(&self) -> Result<(), CompileError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for &(_, c) in &self.intra_arcs {
            indegree[c.0] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = ready.pop() {
            visited += 1;
            for &(p, c) in &self.intra_arcs {
                if p.0 == i {
                    indegree[c.0] -= 1;
                    if indegree[c.0] == 0 {
                        ready.push(c.0);
                    }
                }
            }
        }
        if visited == n {
            Ok(())
        } else {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            Err(CompileError::CyclicIntraSlice(self.nodes[stuck].name.clone()))
        }
    }

    /// One-line summary such as
    /// `10 nodes (3 state, 3 delta, 3 parameter, 1 observed)`.
    pub fn node_report(&self) -> String {
        let parts: Vec<String> = NodeKind::ALL
            .iter()
            .filter_map(|&k| {
                let c = self.count(k);
                (c > 0).then(|| format!("{c} {}", k.label()))
            })
            .collect();
        format!("{} nodes ({})", self.nodes.len(), parts.join(", "))
    }

    pub fn arc_report(&self) -> String {
        format!(
            "{} intra-slice arcs, {} inter-slice arcs",
            self.intra_arcs.len(),
            self.inter_arcs.len()
        )
    }
}

fn dot_style(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::State => "shape=ellipse",
        NodeKind::Delta => "shape=box",
        NodeKind::Parameter => "shape=ellipse, style=dashed",
        NodeKind::TrueInput => "shape=ellipse, style=filled, fillcolor=lightgrey",
        NodeKind::IntendedInput => "shape=ellipse, style=filled, fillcolor=grey40, fontcolor=white",
        NodeKind::Observed => "shape=ellipse, style=filled, fillcolor=black, fontcolor=white",
    }
}

/// Two-slice DOT rendering with a stable node order.
pub fn export_dot(g: &DbnGraph) -> String {
    let id = |node: &DbnNode, slice: usize| format!("\"{}_{}\"", node.name, slice);
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", g.model_name);
    out.push_str("  rankdir=LR;\n");
    for (slice, label) in [(0usize, "t"), (1, "t+1")] {
        let _ = writeln!(out, "  subgraph cluster_{slice} {{");
        let _ = writeln!(out, "    label=\"{label}\";");
        for node in &g.nodes {
            let _ = writeln!(
                out,
                "    {} [label=\"{}\", {}];",
                id(node, slice),
                node.name,
                dot_style(node.kind)
            );
        }
        for &(p, c) in &g.intra_arcs {
            let _ = writeln!(out, "    {} -> {};", id(g.node(p), slice), id(g.node(c), slice));
        }
        out.push_str("  }\n");
    }
    for &(p, c) in &g.inter_arcs {
        let style = if g.node(p).kind == NodeKind::Parameter {
            " [style=dashed]"
        } else {
            ""
        };
        let _ = writeln!(out, "  {} -> {}{};", id(g.node(p), 0), id(g.node(c), 1), style);
    }
    out.push_str("}\n");
    out
}
