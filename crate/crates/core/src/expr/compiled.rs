use super::{apply_binary, BinaryOp, DomainError, EvalError, ExprNode, Function, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Load(usize),
    Neg,
    Binary(BinaryOp),
    Call(Function),
}

/// An expression lowered to postfix form with symbols resolved to slot
/// indices.
///
/// Evaluation performs exactly the operations of [`super::eval_expr`] in the
/// same order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    code: Vec<Instr>,
    max_stack: usize,
}

impl CompiledExpr {
    /// Lowers `node`, mapping each symbol through `resolve`.
    pub fn compile(
        node: &ExprNode,
        resolve: &impl Fn(&str) -> Option<usize>,
    ) -> Result<Self, EvalError> {
        let mut code = Vec::new();
        lower(node, resolve, &mut code)?;
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for instr in &code {
            match instr {
                Instr::Const(_) | Instr::Load(_) => depth += 1,
                Instr::Neg => {}
                Instr::Binary(_) => depth -= 1,
                Instr::Call(f) => depth = depth + 1 - f.arity(),
            }
            max_stack = max_stack.max(depth);
        }
        Ok(CompiledExpr { code, max_stack })
    }

    pub fn eval(&self, slots: &[f64]) -> Result<f64, DomainError> {
        let mut inline = [0.0f64; 16];
        let mut heap;
        let stack: &mut [f64] = if self.max_stack <= inline.len() {
            &mut inline
        } else {
            heap = vec![0.0; self.max_stack];
            &mut heap
        };
        let mut top = 0usize;
        for instr in &self.code {
            match *instr {
                Instr::Const(v) => {
                    stack[top] = v;
                    top += 1;
                }
                Instr::Load(i) => {
                    stack[top] = slots[i];
                    top += 1;
                }
                Instr::Neg => stack[top - 1] = -stack[top - 1],
                Instr::Binary(op) => {
                    top -= 1;
                    stack[top - 1] = apply_binary(op, stack[top - 1], stack[top])?;
                }
                Instr::Call(f) => {
                    let n = f.arity();
                    let base = top - n;
                    stack[base] = f.apply(&stack[base..top])?;
                    top = base + 1;
                }
            }
        }
        Ok(stack[0])
    }
}

fn lower(
    node: &ExprNode,
    resolve: &impl Fn(&str) -> Option<usize>,
    code: &mut Vec<Instr>,
) -> Result<(), EvalError> {
    match node {
        ExprNode::Constant(v) => code.push(Instr::Const(*v)),
        ExprNode::Symbol(name) => {
            let slot = resolve(name).ok_or_else(|| EvalError::UnboundSymbol(name.clone()))?;
            code.push(Instr::Load(slot));
        }
        ExprNode::Unary(UnaryOp::Neg, child) => {
            lower(child, resolve, code)?;
            code.push(Instr::Neg);
        }
        ExprNode::Binary(op, l, r) => {
            lower(l, resolve, code)?;
            lower(r, resolve, code)?;
            code.push(Instr::Binary(*op));
        }
        ExprNode::Call(f, args) => {
            for a in args {
                lower(a, resolve, code)?;
            }
            code.push(Instr::Call(*f));
        }
    }
    Ok(())
}
