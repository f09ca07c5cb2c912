//! Scalar arithmetic expressions used as ODE right-hand sides.
//!
//! Expressions are parsed from infix text ([`parse_expr`]), evaluated against
//! named [`Bindings`] ([`eval_expr`]), and can be lowered into a
//! [`CompiledExpr`] that reads symbol values out of a flat slot slice. Both
//! evaluation routes perform the same floating-point operations in the same
//! order, so they agree bit for bit.

mod compiled;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

pub use compiled::CompiledExpr;
pub use parser::{parse_expr, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 4,
        }
    }
}

/// The supported built-in functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Function {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Function {
    pub const ALL: [Function; 8] = [
        Function::Exp,
        Function::Ln,
        Function::Sin,
        Function::Cos,
        Function::Sqrt,
        Function::Abs,
        Function::Min,
        Function::Max,
    ];

    pub fn from_name(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Function::Exp => "exp",
            Function::Ln => "ln",
            Function::Sin => "sin",
            Function::Cos => "cos",
            Function::Sqrt => "sqrt",
            Function::Abs => "abs",
            Function::Min => "min",
            Function::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Function::Min | Function::Max => 2,
            _ => 1,
        }
    }

    pub(crate) fn apply(self, args: &[f64]) -> Result<f64, DomainError> {
        let x = args[0];
        let value = match self {
            Function::Exp => x.exp(),
            Function::Ln => {
                if x <= 0.0 {
                    return Err(DomainError::LogOfNonPositive);
                }
                x.ln()
            }
            Function::Sin => x.sin(),
            Function::Cos => x.cos(),
            Function::Sqrt => {
                if x < 0.0 {
                    return Err(DomainError::SqrtOfNegative);
                }
                x.sqrt()
            }
            Function::Abs => x.abs(),
            Function::Min => x.min(args[1]),
            Function::Max => x.max(args[1]),
        };
        Ok(value)
    }
}

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Constant(f64),
    Symbol(String),
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
    Call(Function, Vec<ExprNode>),
}

impl ExprNode {
    pub fn constant(value: f64) -> Self {
        ExprNode::Constant(value)
    }

    pub fn symbol(name: impl Into<String>) -> Self {
        ExprNode::Symbol(name.into())
    }

    pub fn neg(child: ExprNode) -> Self {
        ExprNode::Unary(UnaryOp::Neg, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: ExprNode, right: ExprNode) -> Self {
        ExprNode::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn call(function: Function, args: Vec<ExprNode>) -> Self {
        ExprNode::Call(function, args)
    }

    /// Names of every symbol that appears in the tree.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            ExprNode::Constant(_) => {}
            ExprNode::Symbol(name) => {
                out.insert(name.clone());
            }
            ExprNode::Unary(_, child) => child.collect_symbols(out),
            ExprNode::Binary(_, l, r) => {
                l.collect_symbols(out);
                r.collect_symbols(out);
            }
            ExprNode::Call(_, args) => args.iter().for_each(|a| a.collect_symbols(out)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            ExprNode::Binary(op, _, _) => op.precedence(),
            ExprNode::Unary(..) => 3,
            _ => 5,
        }
    }
}

/// Free symbols of `node`.
pub fn free_symbols(node: &ExprNode) -> BTreeSet<String> {
    node.free_symbols()
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &ExprNode, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

/// Infix rendering with the minimum parentheses needed for the text to
/// parse back into the same tree.
impl fmt::Display for ExprNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprNode::Constant(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            ExprNode::Symbol(name) => f.write_str(name),
            ExprNode::Unary(UnaryOp::Neg, child) => {
                f.write_str("-")?;
                write_child(f, child, child.precedence() < 3)
            }
            ExprNode::Binary(op, l, r) => {
                let p = op.precedence();
                let left_parens = match op {
                    BinaryOp::Pow => l.precedence() <= p,
                    _ => l.precedence() < p,
                };
                let right_parens = match op {
                    // The exponent is parsed as a unary expression.
                    BinaryOp::Pow => r.precedence() < 3,
                    _ => r.precedence() <= p,
                };
                write_child(f, l, left_parens)?;
                write!(f, "{}", op.symbol())?;
                write_child(f, r, right_parens)
            }
            ExprNode::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Symbol values for [`eval_expr`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings {
    values: BTreeMap<String, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<f64, EvalError> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::UnboundSymbol(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Bindings {
            values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of a non-positive number")]
    LogOfNonPositive,
    #[error("square root of a negative number")]
    SqrtOfNegative,
    #[error("power is undefined for these operands")]
    InvalidPower,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

pub(crate) fn apply_binary(op: BinaryOp, l: f64, r: f64) -> Result<f64, DomainError> {
    match op {
        BinaryOp::Add => Ok(l + r),
        BinaryOp::Sub => Ok(l - r),
        BinaryOp::Mul => Ok(l * r),
        BinaryOp::Div => {
            if r == 0.0 {
                Err(DomainError::DivisionByZero)
            } else {
                Ok(l / r)
            }
        }
        BinaryOp::Pow => {
            let v = l.powf(r);
            if v.is_nan() && !l.is_nan() && !r.is_nan() {
                Err(DomainError::InvalidPower)
            } else {
                Ok(v)
            }
        }
    }
}

/// Evaluates `node` in IEEE-754 double precision.
pub fn eval_expr(node: &ExprNode, env: &Bindings) -> Result<f64, EvalError> {
    match node {
        ExprNode::Constant(v) => Ok(*v),
        ExprNode::Symbol(name) => env.get(name),
        ExprNode::Unary(UnaryOp::Neg, child) => Ok(-eval_expr(child, env)?),
        ExprNode::Binary(op, l, r) => {
            let l = eval_expr(l, env)?;
            let r = eval_expr(r, env)?;
            Ok(apply_binary(*op, l, r)?)
        }
        ExprNode::Call(func, args) => {
            let mut values = [0.0; 2];
            for (slot, a) in values.iter_mut().zip(args) {
                *slot = eval_expr(a, env)?;
            }
            Ok(func.apply(&values[..args.len()])?)
        }
    }
}
