use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    /// Natural log. Never sampled; appears only in derivatives of `pow` with a
    /// non-constant exponent.
    Ln,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 4] = [UnaryOp::Neg, UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Ln];

    pub fn token(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Ln => "ln",
        }
    }

    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Ln => a.ln(),
        }
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 5] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow];

    pub fn token(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => a.powf(b),
        }
    }
}

/// A symbolic expression over state variables `z_0 .. z_{d-1}`.
///
/// Constants are always finite; [`Expr::constant`] enforces this and every
/// constructor in this crate goes through it.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var { index: usize, name: String },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        assert!(value.is_finite(), "constant must be finite, got {value}");
        // -0.0 and 0.0 print differently; keep one canonical zero.
        Expr::Const(if value == 0.0 { 0.0 } else { value })
    }

    pub fn var(index: usize, name: impl Into<String>) -> Expr {
        Expr::Var { index, name: name.into() }
    }

    pub fn unary(op: UnaryOp, child: Expr) -> Expr {
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_const(&self, value: f64) -> bool {
        self.as_const() == Some(value)
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var { .. } => 1,
            Expr::Unary(_, c) => 1 + c.node_count(),
            Expr::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var { .. } => 1,
            Expr::Unary(_, c) => 1 + c.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Distinct variable indices appearing in the tree.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var { index, .. } => {
                out.insert(*index);
            }
            Expr::Unary(_, c) => c.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    /// Minimum point dimension needed to evaluate this expression.
    pub fn required_dim(&self) -> usize {
        self.variables().iter().next_back().map_or(0, |i| i + 1)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::to_prefix(self).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_vars() {
        let x = Expr::var(0, "x");
        let v = Expr::var(1, "v");
        let e = Expr::binary(
            BinaryOp::Add,
            Expr::binary(BinaryOp::Mul, x.clone(), x),
            Expr::binary(BinaryOp::Mul, v.clone(), v),
        );
        assert_eq!(e.node_count(), 7);
        assert_eq!(e.depth(), 3);
        assert_eq!(e.variables().into_iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(e.required_dim(), 2);
        assert_eq!(Expr::constant(3.0).required_dim(), 0);
    }

    #[test]
    fn negative_zero_is_canonical() {
        assert_eq!(Expr::constant(-0.0).to_string(), "0");
    }

    #[test]
    #[should_panic]
    fn rejects_nan_constant() {
        let _ = Expr::constant(f64::NAN);
    }
}
