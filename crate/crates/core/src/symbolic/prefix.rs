use std::fmt;
use std::str::FromStr;

use super::{BinaryOp, Expr, SymbolicError, UnaryOp};

/// Prefix-notation token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl FromStr for TokenSeq {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(TokenSeq(s.split_whitespace().map(str::to_owned).collect()))
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().map(Into::into).collect())
    }
}

pub(crate) fn format_constant(c: f64) -> String {
    // Display for f64 is the shortest string that round-trips exactly.
    format!("{c}")
}

pub fn to_prefix(expr: &Expr) -> TokenSeq {
    let mut out = Vec::with_capacity(expr.node_count());
    push_tokens(expr, &mut out);
    TokenSeq(out)
}

fn push_tokens(expr: &Expr, out: &mut Vec<String>) {
    match expr {
        Expr::Const(c) => out.push(format_constant(*c)),
        Expr::Var { name, .. } => out.push(name.clone()),
        Expr::Unary(op, c) => {
            out.push(op.token().to_owned());
            push_tokens(c, out);
        }
        Expr::Binary(op, l, r) => {
            out.push(op.token().to_owned());
            push_tokens(l, out);
            push_tokens(r, out);
        }
    }
}

enum Token {
    Leaf(Expr),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

fn classify(tok: &str, variables: &[String]) -> Result<Token, SymbolicError> {
    if let Some(index) = variables.iter().position(|v| v == tok) {
        return Ok(Token::Leaf(Expr::var(index, tok)));
    }
    if let Some(op) = UnaryOp::ALL.iter().find(|op| op.token() == tok) {
        return Ok(Token::Unary(*op));
    }
    if let Some(op) = BinaryOp::ALL.iter().find(|op| op.token() == tok) {
        return Ok(Token::Binary(*op));
    }
    match tok.parse::<f64>() {
        Ok(c) if c.is_finite() => Ok(Token::Leaf(Expr::constant(c))),
        _ => Err(SymbolicError::UnknownToken(tok.to_owned())),
    }
}

/// Parses a prefix token sequence. `variables[i]` names state coordinate `i`.
pub fn parse_prefix<S: AsRef<str>>(tokens: &[S], variables: &[String]) -> Result<Expr, SymbolicError> {
    let mut pos = 0;
    let expr = parse_at(tokens, variables, &mut pos)?;
    if pos < tokens.len() {
        return Err(SymbolicError::TrailingTokens(tokens.len() - pos));
    }
    Ok(expr)
}

/// Parses the space-separated interchange form.
pub fn parse_str(text: &str, variables: &[String]) -> Result<Expr, SymbolicError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    parse_prefix(&tokens, variables)
}

fn parse_at<S: AsRef<str>>(tokens: &[S], variables: &[String], pos: &mut usize) -> Result<Expr, SymbolicError> {
    let tok = tokens.get(*pos).ok_or(SymbolicError::IncompleteExpression)?;
    *pos += 1;
    match classify(tok.as_ref(), variables)? {
        Token::Leaf(e) => Ok(e),
        Token::Unary(op) => Ok(Expr::unary(op, parse_at(tokens, variables, pos)?)),
        Token::Binary(op) => {
            let l = parse_at(tokens, variables, pos)?;
            let r = parse_at(tokens, variables, pos)?;
            Ok(Expr::binary(op, l, r))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_ho_energy_shape() {
        let v = vars(&["x", "v"]);
        let e = parse_prefix(&["add", "mul", "x", "x", "mul", "v", "v"], &v).unwrap();
        let x = Expr::var(0, "x");
        let vv = Expr::var(1, "v");
        let want = Expr::binary(
            BinaryOp::Add,
            Expr::binary(BinaryOp::Mul, x.clone(), x),
            Expr::binary(BinaryOp::Mul, vv.clone(), vv),
        );
        assert_eq!(e, want);
        assert_eq!(to_prefix(&e).to_string(), "add mul x x mul v v");
    }

    #[test]
    fn single_variable() {
        let e = parse_prefix(&["x"], &vars(&["x", "v"])).unwrap();
        assert_eq!(e, Expr::var(0, "x"));
        assert_eq!(to_prefix(&e).0, vec!["x"]);
    }

    #[test]
    fn sin_of_q() {
        let e = parse_str("sin q", &vars(&["q", "p"])).unwrap();
        assert_eq!(to_prefix(&e).0, vec!["sin", "q"]);
    }

    #[test]
    fn errors() {
        let v = vars(&["x", "v"]);
        assert_eq!(parse_prefix(&["add", "x"], &v), Err(SymbolicError::IncompleteExpression));
        assert_eq!(parse_prefix::<&str>(&[], &v), Err(SymbolicError::IncompleteExpression));
        assert_eq!(parse_prefix(&["x", "v"], &v), Err(SymbolicError::TrailingTokens(1)));
        assert_eq!(parse_prefix(&["add", "x", "y"], &v), Err(SymbolicError::UnknownToken("y".into())));
        assert_eq!(parse_prefix(&["inf"], &v), Err(SymbolicError::UnknownToken("inf".into())));
        assert_eq!(parse_prefix(&["NaN"], &v), Err(SymbolicError::UnknownToken("NaN".into())));
    }

    #[test]
    fn constants_round_trip_exactly() {
        let v = vars(&["x"]);
        for c in [0.5, -3.0, 2.0, 0.1 + 0.2, 1e-7, 6.02e23, -1.0 / 3.0] {
            let e = Expr::constant(c);
            let back = parse_prefix(&to_prefix(&e).0, &v).unwrap();
            assert_eq!(back.as_const().unwrap().to_bits(), c.to_bits());
        }
    }

    #[test]
    fn token_seq_text_form() {
        let t: TokenSeq = "add  mul x x\tmul v v".parse().unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.to_string(), "add mul x x mul v v");
    }
}
