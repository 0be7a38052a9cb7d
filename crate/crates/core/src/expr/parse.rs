//! Canonical prefix form, e.g. `add(1.5, mul(-0.25, lgo_thre(map_mmhg, 2.0, -0.4)))`.
//!
//! Gate parameters follow the Feat inputs as `(…, a_tilde, b_z)`; the `pow`
//! exponent is an integer literal. Constants print in shortest round-trip form.

use std::fmt::Write as _;

use super::{Expression, GateParams, Node, Prim};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownSymbol,
    Arity,
    TypeMismatch,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind:?} error at byte {position} near `{token}`: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub token: String,
    pub position: usize,
    pub message: String,
}

pub fn print_expr(expr: &Expression, names: &[String]) -> String {
    let mut out = String::new();
    write_node(&expr.root, names, &mut out);
    out
}

fn write_node(node: &Node, names: &[String], out: &mut String) {
    match node {
        Node::Var(i) => match names.get(*i) {
            Some(n) => out.push_str(n),
            None => {
                let _ = write!(out, "x{i}");
            }
        },
        Node::Const(c) => write_f64(*c, out),
        Node::Pow { base, exponent } => {
            out.push_str("pow(");
            write_node(base, names, out);
            let _ = write!(out, ", {exponent})");
        }
        Node::Op { prim, args } => {
            out.push_str(prim.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_node(a, names, out);
            }
            out.push(')');
        }
        Node::Gate {
            prim,
            inputs,
            params,
        } => {
            out.push_str(prim.name());
            out.push('(');
            for a in inputs {
                write_node(a, names, out);
                out.push_str(", ");
            }
            write_f64(params.a_tilde, out);
            out.push_str(", ");
            write_f64(params.b_z, out);
            out.push(')');
        }
    }
}

fn write_f64(v: f64, out: &mut String) {
    let _ = write!(out, "{v:?}");
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64, String),
    Open,
    Close,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some(t) = lx.next_token()? {
            out.push(t);
        }
        Ok(out)
    }

    fn next_token(&mut self) -> Result<Option<(Tok, usize)>, ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = bytes[self.pos];
        let tok = match c {
            b'(' => {
                self.pos += 1;
                Tok::Open
            }
            b')' => {
                self.pos += 1;
                Tok::Close
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'0'..=b'9' | b'-' | b'+' | b'.' => {
                self.pos += 1;
                while self.pos < bytes.len() {
                    let d = bytes[self.pos];
                    let exp_sign =
                        (d == b'-' || d == b'+') && matches!(bytes[self.pos - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = &self.src[start..self.pos];
                let v: f64 = text.parse().map_err(|_| ParseError {
                    kind: ParseErrorKind::Syntax,
                    token: text.to_string(),
                    position: start,
                    message: "malformed number".into(),
                })?;
                Tok::Num(v, text.to_string())
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < bytes.len()
                    && (bytes[self.pos].is_ascii_alphanumeric()
                        || bytes[self.pos] == b'_'
                        || bytes[self.pos] == b'.')
                {
                    self.pos += 1;
                }
                Tok::Ident(self.src[start..self.pos].to_string())
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    kind: ParseErrorKind::Syntax,
                    token: ch.to_string(),
                    position: start,
                    message: "unexpected character".into(),
                });
            }
        };
        Ok(Some((tok, start)))
    }
}

fn tok_text(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => s.clone(),
        Tok::Num(_, s) => s.clone(),
        Tok::Open => "(".into(),
        Tok::Close => ")".into(),
        Tok::Comma => ",".into(),
    }
}

/// A parsed argument before typing: either a Feat subtree or a bare number
/// that may fill a Pos/Thr/exponent slot.
enum Arg {
    Tree(Node, usize, String),
    Number(f64, usize, String),
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    names: &'a [String],
    src_len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.idx)
    }

    fn err(&self, kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
        let (token, position) = match self.peek() {
            Some((t, p)) => (tok_text(t), *p),
            None => ("<end>".to_string(), self.src_len),
        };
        ParseError {
            kind,
            token,
            position,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: &Tok) -> Result<(), ParseError> {
        match self.peek() {
            Some((t, _)) if t == want => {
                self.idx += 1;
                Ok(())
            }
            _ => Err(self.err(ParseErrorKind::Syntax, format!("expected `{}`", tok_text(want)))),
        }
    }

    fn parse_arg(&mut self) -> Result<Arg, ParseError> {
        let Some((tok, pos)) = self.peek().cloned() else {
            return Err(self.err(ParseErrorKind::Syntax, "unexpected end of input"));
        };
        match tok {
            Tok::Num(v, text) => {
                self.idx += 1;
                Ok(Arg::Number(v, pos, text))
            }
            Tok::Ident(name) => {
                self.idx += 1;
                if matches!(self.peek(), Some((Tok::Open, _))) {
                    let node = self.parse_call(&name, pos)?;
                    Ok(Arg::Tree(node, pos, name))
                } else if let Some(i) = self.names.iter().position(|n| *n == name) {
                    Ok(Arg::Tree(Node::Var(i), pos, name))
                } else {
                    Err(ParseError {
                        kind: ParseErrorKind::UnknownSymbol,
                        token: name,
                        position: pos,
                        message: "not a feature name".into(),
                    })
                }
            }
            _ => Err(self.err(ParseErrorKind::Syntax, "expected a term")),
        }
    }

    fn parse_call(&mut self, name: &str, pos: usize) -> Result<Node, ParseError> {
        let prim = Prim::from_name(name).ok_or_else(|| ParseError {
            kind: ParseErrorKind::UnknownSymbol,
            token: name.to_string(),
            position: pos,
            message: "unknown primitive".into(),
        })?;
        self.expect(&Tok::Open)?;
        let mut args = Vec::new();
        if !matches!(self.peek(), Some((Tok::Close, _))) {
            loop {
                args.push(self.parse_arg()?);
                match self.peek() {
                    Some((Tok::Comma, _)) => self.idx += 1,
                    Some((Tok::Close, _)) => break,
                    _ => return Err(self.err(ParseErrorKind::Syntax, "expected `,` or `)`")),
                }
            }
        }
        self.expect(&Tok::Close)?;
        build(prim, args, name, pos)
    }
}

fn feat(arg: Arg) -> Node {
    match arg {
        Arg::Tree(n, _, _) => n,
        Arg::Number(v, _, _) => Node::Const(v),
    }
}

fn number(arg: Arg, slot: &str) -> Result<f64, ParseError> {
    match arg {
        Arg::Number(v, _, _) => Ok(v),
        Arg::Tree(_, pos, text) => Err(ParseError {
            kind: ParseErrorKind::TypeMismatch,
            token: text,
            position: pos,
            message: format!("{slot} slot requires a numeric literal"),
        }),
    }
}

fn build(prim: Prim, args: Vec<Arg>, name: &str, pos: usize) -> Result<Node, ParseError> {
    let arity_err = |expected: String, found: usize| ParseError {
        kind: ParseErrorKind::Arity,
        token: name.to_string(),
        position: pos,
        message: format!("expected {expected} arguments, found {found}"),
    };
    let n = args.len();
    if prim == Prim::Pow {
        if n != 2 {
            return Err(arity_err("2".into(), n));
        }
        let mut it = args.into_iter();
        let base = feat(it.next().unwrap());
        let exp_arg = it.next().unwrap();
        let (exp_pos, exp_text) = match &exp_arg {
            Arg::Number(_, p, t) | Arg::Tree(_, p, t) => (*p, t.clone()),
        };
        let e = number(exp_arg, "exponent")?;
        if !(0.0..=3.0).contains(&e) || e.fract() != 0.0 {
            return Err(ParseError {
                kind: ParseErrorKind::TypeMismatch,
                token: exp_text,
                position: exp_pos,
                message: "pow exponent must be an integer in 0..=3".into(),
            });
        }
        return Ok(Node::pow(base, e as u8));
    }
    let feat_n = prim.feat_arity();
    if prim.is_gate() {
        if n != feat_n + 2 {
            return Err(arity_err(format!("{} (inputs + Pos + Thr)", feat_n + 2), n));
        }
        let mut it = args.into_iter();
        let inputs: Vec<Node> = it.by_ref().take(feat_n).map(feat).collect();
        let a_tilde = number(it.next().unwrap(), "Pos")?;
        let b_z = number(it.next().unwrap(), "Thr")?;
        return Ok(Node::Gate {
            prim,
            inputs,
            params: GateParams { a_tilde, b_z },
        });
    }
    let ok = if prim.is_variadic() {
        n >= feat_n
    } else {
        n == feat_n
    };
    if !ok {
        let expected = if prim.is_variadic() {
            format!("at least {feat_n}")
        } else {
            feat_n.to_string()
        };
        return Err(arity_err(expected, n));
    }
    Ok(Node::Op {
        prim,
        args: args.into_iter().map(feat).collect(),
    })
}

/// Parses the canonical prefix form against a list of feature names.
pub fn parse_expr(src: &str, names: &[String]) -> Result<Expression, ParseError> {
    let toks = Lexer::tokens(src)?;
    let mut p = Parser {
        toks,
        idx: 0,
        names,
        src_len: src.len(),
    };
    let root = feat(p.parse_arg()?);
    if p.idx != p.toks.len() {
        return Err(p.err(ParseErrorKind::Syntax, "trailing input"));
    }
    Ok(Expression::new(root))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ["x1", "x2", "lactate_mmol_l"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_simple_add() {
        let e = parse_expr("add(x1,0)", &names()).unwrap();
        assert_eq!(e.complexity(), 3);
        assert_eq!(print_expr(&e, &names()), "add(x1, 0.0)");
    }

    #[test]
    fn missing_gate_slots_is_arity_error() {
        let err = parse_expr("lgo_thre(x1)", &names()).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Arity);
        assert_eq!(err.token, "lgo_thre");
    }

    #[test]
    fn unknown_symbols_are_named() {
        let err = parse_expr("add(x1, bogus)", &names()).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownSymbol);
        assert_eq!(err.token, "bogus");
        let err = parse_expr("frob(x1)", &names()).unwrap_err();
        assert_eq!(err.token, "frob");
    }

    #[test]
    fn subtree_in_thr_slot_is_type_mismatch() {
        let err = parse_expr("lgo_thre(x1, 1.0, x2)", &names()).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::TypeMismatch);
        assert_eq!(err.token, "x2");
    }

    #[test]
    fn aliases_and_full_precision() {
        let src = "add(lgo_hard(x1, 0.1, -0.30000000000000004), lgo_soft(lactate_mmol_l, 1e-7, 2.5))";
        let e = parse_expr(src, &names()).unwrap();
        let printed = print_expr(&e, &names());
        assert_eq!(
            printed,
            "add(lgo_thre(x1, 0.1, -0.30000000000000004), lgo(lactate_mmol_l, 1e-7, 2.5))"
        );
        assert_eq!(parse_expr(&printed, &names()).unwrap(), e);
    }

    #[test]
    fn syntax_errors() {
        assert_eq!(
            parse_expr("add(x1, x2", &names()).unwrap_err().kind,
            ParseErrorKind::Syntax
        );
        assert_eq!(
            parse_expr("add(x1, x2) x1", &names()).unwrap_err().kind,
            ParseErrorKind::Syntax
        );
        assert_eq!(
            parse_expr("pow(x1, 2.5)", &names()).unwrap_err().kind,
            ParseErrorKind::TypeMismatch
        );
        assert_eq!(
            parse_expr("sub(x1)", &names()).unwrap_err().kind,
            ParseErrorKind::Arity
        );
    }
}
