//! A fixed set of rewrites, each of which removes nodes: constant folding,
//! additive and multiplicative identities, `e - e`, `e / e`, double negation,
//! and trivial powers. This is not a canonical form; two equal functions can
//! simplify to different trees.

use super::{BinaryOp, Expr, UnaryOp};

pub fn simplify(expr: &Expr) -> Expr {
    match expr {
        Expr::Const(_) | Expr::Var { .. } => expr.clone(),
        Expr::Unary(op, c) => unary(*op, simplify(c)),
        Expr::Binary(op, l, r) => binary(*op, simplify(l), simplify(r)),
    }
}

/// Node count of the simplified expression.
pub fn complexity(expr: &Expr) -> usize {
    simplify(expr).node_count()
}

fn fold(value: f64) -> Option<Expr> {
    value.is_finite().then(|| Expr::constant(value))
}

/// Builds `op(child)` applying the rewrite rules at the root only.
pub(crate) fn unary(op: UnaryOp, child: Expr) -> Expr {
    if let Some(c) = child.as_const() {
        if let Some(e) = fold(op.apply(c)) {
            return e;
        }
    }
    if op == UnaryOp::Neg {
        if let Expr::Unary(UnaryOp::Neg, inner) = child {
            return *inner;
        }
    }
    Expr::unary(op, child)
}

/// Builds `op(left, right)` applying the rewrite rules at the root only.
pub(crate) fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
    if let (Some(a), Some(b)) = (left.as_const(), right.as_const()) {
        if let Some(e) = fold(op.apply(a, b)) {
            return e;
        }
    }
    match op {
        BinaryOp::Add => {
            if left.is_const(0.0) {
                return right;
            }
            if right.is_const(0.0) {
                return left;
            }
            if let Expr::Unary(UnaryOp::Neg, inner) = right {
                return binary(BinaryOp::Sub, left, *inner);
            }
        }
        BinaryOp::Sub => {
            if right.is_const(0.0) {
                return left;
            }
            if left.is_const(0.0) {
                return unary(UnaryOp::Neg, right);
            }
            if left == right {
                return Expr::constant(0.0);
            }
        }
        BinaryOp::Mul => {
            if left.is_const(0.0) || right.is_const(0.0) {
                return Expr::constant(0.0);
            }
            if left.is_const(1.0) {
                return right;
            }
            if right.is_const(1.0) {
                return left;
            }
            // c1 * (c2 * e) -> (c1 c2) * e
            if let (Some(a), Expr::Binary(BinaryOp::Mul, inner_l, inner_r)) = (left.as_const(), &right) {
                if let Some(b) = inner_l.as_const() {
                    if let Some(Expr::Const(ab)) = fold(a * b) {
                        return binary(BinaryOp::Mul, Expr::Const(ab), (**inner_r).clone());
                    }
                }
            }
        }
        BinaryOp::Div => {
            if right.is_const(1.0) {
                return left;
            }
            if left.is_const(0.0) {
                return Expr::constant(0.0);
            }
            if left == right {
                return Expr::constant(1.0);
            }
        }
        BinaryOp::Pow => {
            if right.is_const(1.0) {
                return left;
            }
            if right.is_const(0.0) || left.is_const(1.0) {
                return Expr::constant(1.0);
            }
        }
    }
    Expr::binary(op, left, right)
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate, parse_str, to_prefix};
    use super::*;

    fn vars() -> Vec<String> {
        vec!["x".into(), "v".into()]
    }

    fn s(text: &str) -> String {
        to_prefix(&simplify(&parse_str(text, &vars()).unwrap())).to_string()
    }

    #[test]
    fn listed_rewrites() {
        assert_eq!(s("add x 0"), "x");
        assert_eq!(s("mul mul 2 3 v"), "mul 6 v");
        assert_eq!(s("sub x x"), "0");
        assert_eq!(s("mul x 1"), "x");
        assert_eq!(s("mul 0 sin x"), "0");
        assert_eq!(s("neg neg v"), "v");
        assert_eq!(s("pow x 1"), "x");
        assert_eq!(s("pow x 0"), "1");
        assert_eq!(s("sub 0 x"), "neg x");
        assert_eq!(s("add x neg v"), "sub x v");
        assert_eq!(s("mul 2 mul 3 x"), "mul 6 x");
        assert_eq!(s("div sin x sin x"), "1");
        assert_eq!(s("neg 2"), "-2");
    }

    #[test]
    fn non_finite_folds_are_kept() {
        assert_eq!(s("div 1 0"), "div 1 0");
        assert_eq!(s("pow -1 0.5"), "pow -1 0.5");
        assert_eq!(s("ln 0"), "ln 0");
    }

    #[test]
    fn complexity_counts_simplified_nodes() {
        let c = |t: &str| complexity(&parse_str(t, &vars()).unwrap());
        assert_eq!(c("x"), 1);
        assert_eq!(c("add mul x x mul v v"), 7);
        assert_eq!(c("3"), 1);
        assert_eq!(c("add x 0"), 1);
    }

    #[test]
    fn value_preserved_on_sample() {
        let e = parse_str("add mul 1 sub x 0 mul pow v 1 add 2 3", &vars()).unwrap();
        let z = [0.3, -1.7];
        let a = evaluate(&e, &z).unwrap();
        let b = evaluate(&simplify(&e), &z).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}
