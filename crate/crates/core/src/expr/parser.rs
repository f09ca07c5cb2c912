use std::fmt;

use thiserror::Error;

use super::{is_identifier, BinaryOp, ExprNode, Function};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    /// `position` is a byte offset into the input.
    #[error("syntax error at offset {position}: expected {}", expected.join(" or "))]
    Syntax {
        position: usize,
        expected: Vec<&'static str>,
    },
    #[error("unknown function `{name}` at offset {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("function `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        name: &'static str,
        expected: usize,
        found: usize,
        position: usize,
    },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { position, .. }
            | ParseError::UnknownFunction { position, .. }
            | ParseError::Arity { position, .. } => *position,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(v) => write!(f, "{v}"),
            Token::Ident(s) => f.write_str(s),
            Token::Op(c) => write!(f, "{c}"),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
            Token::Comma => f.write_str(","),
            Token::End => f.write_str("end of input"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let token = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                i += 1;
                Token::Op(c as char)
            }
            b'(' => {
                i += 1;
                Token::LParen
            }
            b')' => {
                i += 1;
                Token::RParen
            }
            b',' => {
                i += 1;
                Token::Comma
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let literal = &text[start..i];
                match literal.parse::<f64>() {
                    Ok(v) if v.is_finite() => Token::Number(v),
                    _ => {
                        return Err(ParseError::Syntax {
                            position: start,
                            expected: vec!["a finite number"],
                        })
                    }
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Token::Ident(text[start..i].to_string())
            }
            _ => {
                return Err(ParseError::Syntax {
                    position: start,
                    expected: vec!["number", "identifier", "operator", "parenthesis"],
                })
            }
        };
        tokens.push((token, start));
    }
    tokens.push((Token::End, text.len()));
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: Vec<&'static str>) -> ParseError {
        ParseError::Syntax {
            position: self.offset(),
            expected,
        }
    }

    fn expect(&mut self, token: Token, name: &'static str) -> Result<(), ParseError> {
        if *self.peek() == token {
            self.bump();
            Ok(())
        } else {
            Err(self.error(vec![name]))
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<ExprNode, ParseError> {
        let mut node = self.term()?;
        loop {
            let op = match self.peek() {
                Token::Op('+') => BinaryOp::Add,
                Token::Op('-') => BinaryOp::Sub,
                _ => return Ok(node),
            };
            self.bump();
            let rhs = self.term()?;
            node = ExprNode::binary(op, node, rhs);
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<ExprNode, ParseError> {
        let mut node = self.unary()?;
        loop {
            let op = match self.peek() {
                Token::Op('*') => BinaryOp::Mul,
                Token::Op('/') => BinaryOp::Div,
                _ => return Ok(node),
            };
            self.bump();
            let rhs = self.unary()?;
            node = ExprNode::binary(op, node, rhs);
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<ExprNode, ParseError> {
        if *self.peek() == Token::Op('-') {
            self.bump();
            return Ok(ExprNode::neg(self.unary()?));
        }
        self.power()
    }

    // power := atom ('^' unary)?
    fn power(&mut self) -> Result<ExprNode, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Token::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(ExprNode::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprNode, ParseError> {
        let offset = self.offset();
        match self.peek().clone() {
            Token::Number(v) => {
                self.bump();
                Ok(ExprNode::Constant(v))
            }
            Token::Ident(name) => {
                self.bump();
                if *self.peek() != Token::LParen {
                    debug_assert!(is_identifier(&name));
                    return Ok(ExprNode::Symbol(name));
                }
                let func = Function::from_name(&name).ok_or(ParseError::UnknownFunction {
                    name: name.clone(),
                    position: offset,
                })?;
                self.bump();
                let mut args = vec![self.expr()?];
                while *self.peek() == Token::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect(Token::RParen, "`)`")?;
                if args.len() != func.arity() {
                    return Err(ParseError::Arity {
                        name: func.name(),
                        expected: func.arity(),
                        found: args.len(),
                        position: offset,
                    });
                }
                Ok(ExprNode::Call(func, args))
            }
            Token::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(self.error(vec!["number", "identifier", "`(`", "`-`"])),
        }
    }
}

/// Parses infix arithmetic.
///
/// Precedence from tightest: `^` (right-associative), unary `-`, `*` `/`,
/// `+` `-` (left-associative). Calls are limited to [`Function::ALL`].
pub fn parse_expr(text: &str) -> Result<ExprNode, ParseError> {
    let mut parser = Parser {
        tokens: tokenize(text)?,
        pos: 0,
    };
    let node = parser.expr()?;
    if *parser.peek() != Token::End {
        return Err(parser.error(vec!["operator", "end of input"]));
    }
    Ok(node)
}
