use rand::Rng;

use super::prefix::format_constant;
use super::{BinaryOp, Expr, SymbolicError, UnaryOp};
use crate::seeds;

/// Probability of each node kind at a non-leaf-forced choice point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindWeights {
    pub variable: f64,
    pub constant: f64,
    pub unary: f64,
    pub binary: f64,
}

/// Weighted expression grammar over a fixed set of state variables.
///
/// Depth counts nodes on the root-to-leaf path, so `max_depth = 1` admits only
/// leaves. `pow` always takes an integer exponent drawn from `exponents`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub variables: Vec<String>,
    pub kinds: KindWeights,
    pub unary_ops: Vec<(UnaryOp, f64)>,
    pub binary_ops: Vec<(BinaryOp, f64)>,
    pub constants: Vec<(f64, f64)>,
    pub exponents: Vec<(i32, f64)>,
    pub max_depth: usize,
    pub max_len: usize,
}

const SUM_TOL: f64 = 1e-9;
pub(crate) const MAX_ATTEMPTS: usize = 100;

impl Grammar {
    pub fn new(variables: Vec<String>) -> Grammar {
        Grammar {
            variables,
            kinds: KindWeights { variable: 0.4, constant: 0.1, unary: 0.08, binary: 0.42 },
            unary_ops: vec![(UnaryOp::Neg, 0.2), (UnaryOp::Sin, 0.4), (UnaryOp::Cos, 0.4)],
            binary_ops: vec![
                (BinaryOp::Add, 0.35),
                (BinaryOp::Sub, 0.2),
                (BinaryOp::Mul, 0.25),
                (BinaryOp::Div, 0.05),
                (BinaryOp::Pow, 0.15),
            ],
            constants: vec![(0.5, 0.2), (1.0, 0.3), (2.0, 0.4), (3.0, 0.1)],
            exponents: vec![(2, 0.6), (3, 0.1), (-1, 0.15), (-2, 0.1), (-3, 0.05)],
            max_depth: 8,
            max_len: 40,
        }
    }

    pub fn with_caps(mut self, max_depth: usize, max_len: usize) -> Grammar {
        self.max_depth = max_depth;
        self.max_len = max_len;
        self
    }

    pub fn validate(&self) -> Result<(), SymbolicError> {
        let bad = |msg: String| Err(SymbolicError::InvalidGrammar(msg));
        if self.variables.is_empty() {
            return bad("no variables".into());
        }
        if self.max_depth < 1 || self.max_len < 1 {
            return bad("depth and length caps must be at least 1".into());
        }
        let k = self.kinds;
        let groups: [(&str, Vec<f64>); 5] = [
            ("kinds", vec![k.variable, k.constant, k.unary, k.binary]),
            ("unary", self.unary_ops.iter().map(|p| p.1).collect()),
            ("binary", self.binary_ops.iter().map(|p| p.1).collect()),
            ("constants", self.constants.iter().map(|p| p.1).collect()),
            ("exponents", self.exponents.iter().map(|p| p.1).collect()),
        ];
        for (name, ws) in groups {
            if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return bad(format!("{name} weights must be nonnegative"));
            }
            let needed = match name {
                "unary" => k.unary > 0.0,
                "binary" => k.binary > 0.0,
                "constants" => k.constant > 0.0,
                "exponents" => self.binary_ops.iter().any(|(op, w)| *op == BinaryOp::Pow && *w > 0.0),
                _ => true,
            };
            let sum: f64 = ws.iter().sum();
            if needed && (sum - 1.0).abs() > SUM_TOL {
                return bad(format!("{name} weights sum to {sum}, not 1"));
            }
        }
        if k.variable + k.constant <= 0.0 {
            return bad("leaf weights are all zero".into());
        }
        if self.exponents.iter().any(|(e, _)| !(-3..=3).contains(e)) {
            return bad("pow exponents must lie in [-3, 3]".into());
        }
        if self.constants.iter().any(|(c, _)| !c.is_finite()) {
            return bad("constants must be finite".into());
        }
        Ok(())
    }

    /// All tokens the grammar can emit, in a fixed order: variables, constant
    /// literals, unary operators, binary operators.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut out: Vec<String> = self.variables.clone();
        let literals = self.constants.iter().map(|(c, _)| *c).chain(self.exponents.iter().map(|(e, _)| f64::from(*e)));
        for c in literals {
            let tok = format_constant(c);
            if !out.contains(&tok) {
                out.push(tok);
            }
        }
        for (op, w) in &self.unary_ops {
            if *w > 0.0 {
                out.push(op.token().to_owned());
            }
        }
        for (op, w) in &self.binary_ops {
            if *w > 0.0 {
                out.push(op.token().to_owned());
            }
        }
        out
    }

    fn sample_node<R: Rng>(&self, rng: &mut R, depth: usize) -> Expr {
        let k = self.kinds;
        let leaf_only = depth >= self.max_depth;
        let weights =
            if leaf_only { [k.variable, k.constant, 0.0, 0.0] } else { [k.variable, k.constant, k.unary, k.binary] };
        match pick(rng, &weights) {
            0 => {
                let i = rng.random_range(0..self.variables.len());
                Expr::var(i, self.variables[i].clone())
            }
            1 => Expr::constant(self.constants[pick_pairs(rng, &self.constants)].0),
            2 => {
                let op = self.unary_ops[pick_pairs(rng, &self.unary_ops)].0;
                Expr::unary(op, self.sample_node(rng, depth + 1))
            }
            _ => {
                let op = self.binary_ops[pick_pairs(rng, &self.binary_ops)].0;
                let left = self.sample_node(rng, depth + 1);
                let right = if op == BinaryOp::Pow {
                    Expr::constant(f64::from(self.exponents[pick_pairs(rng, &self.exponents)].0))
                } else {
                    self.sample_node(rng, depth + 1)
                };
                Expr::binary(op, left, right)
            }
        }
    }
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        last = i;
        if u < *w {
            return i;
        }
        u -= w;
    }
    last
}

fn pick_pairs<T, R: Rng>(rng: &mut R, pairs: &[(T, f64)]) -> usize {
    let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    pick(rng, &w)
}

/// Draws one expression within the grammar's depth and length caps.
pub fn sample_expr(grammar: &Grammar, seed: u64) -> Result<Expr, SymbolicError> {
    grammar.validate()?;
    sample_expr_with(grammar, &mut seeds::rng(seed))
}

/// As [`sample_expr`], drawing from a caller-owned generator. Does not
/// re-validate the grammar.
pub fn sample_expr_with<R: Rng>(grammar: &Grammar, rng: &mut R) -> Result<Expr, SymbolicError> {
    for _ in 0..MAX_ATTEMPTS {
        let e = grammar.sample_node(rng, 1);
        if e.node_count() <= grammar.max_len {
            return Ok(e);
        }
    }
    Err(SymbolicError::ResampleExhausted(MAX_ATTEMPTS))
}
