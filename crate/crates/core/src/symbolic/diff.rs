use super::simplify::{binary, unary};
use super::{simplify, BinaryOp, Expr, UnaryOp};

use BinaryOp::{Add, Div, Mul, Pow, Sub};

/// Partial derivative of `expr` with respect to variable `index`, built with
/// the simplifying constructors so intermediate zeros and ones collapse.
pub fn derivative(expr: &Expr, index: usize) -> Expr {
    match expr {
        Expr::Const(_) => Expr::constant(0.0),
        Expr::Var { index: i, .. } => Expr::constant(if *i == index { 1.0 } else { 0.0 }),
        Expr::Unary(op, u) => {
            let du = derivative(u, index);
            if du.is_const(0.0) {
                return du;
            }
            let u = (**u).clone();
            match op {
                UnaryOp::Neg => unary(UnaryOp::Neg, du),
                UnaryOp::Sin => binary(Mul, unary(UnaryOp::Cos, u), du),
                UnaryOp::Cos => unary(UnaryOp::Neg, binary(Mul, unary(UnaryOp::Sin, u), du)),
                UnaryOp::Ln => binary(Div, du, u),
            }
        }
        Expr::Binary(op, u, w) => {
            let du = derivative(u, index);
            let dw = derivative(w, index);
            let (u, w) = ((**u).clone(), (**w).clone());
            match op {
                Add => binary(Add, du, dw),
                Sub => binary(Sub, du, dw),
                Mul => binary(Add, binary(Mul, du, w.clone()), binary(Mul, u, dw)),
                Div => {
                    // (u' w - u w') / w^2
                    let num = binary(Sub, binary(Mul, du, w.clone()), binary(Mul, u, dw));
                    binary(Div, num, binary(Mul, w.clone(), w))
                }
                Pow => match w.as_const() {
                    Some(c) => {
                        // c u^(c-1) u'
                        let reduced = binary(Pow, u, Expr::constant(c - 1.0));
                        binary(Mul, binary(Mul, Expr::constant(c), reduced), du)
                    }
                    None => {
                        // u^w (w' ln u + w u' / u)
                        let log_term = binary(Mul, dw, unary(UnaryOp::Ln, u.clone()));
                        let ratio_term = binary(Mul, w.clone(), binary(Div, du, u.clone()));
                        binary(Mul, binary(Pow, u, w), binary(Add, log_term, ratio_term))
                    }
                },
            }
        }
    }
}

/// Symbolic gradient `(d expr / d z_0, ..., d expr / d z_{dim-1})`, each
/// component simplified.
pub fn grad_symbolic(expr: &Expr, dim: usize) -> Vec<Expr> {
    (0..dim).map(|i| simplify(&derivative(expr, i))).collect()
}
