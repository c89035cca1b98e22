use super::{Expr, SymbolicError};

/// Evaluates `expr` at `point`. Any non-finite intermediate (a pole, `ln` of a
/// negative, a fractional power of a negative base) is an error.
pub fn evaluate(expr: &Expr, point: &[f64]) -> Result<f64, SymbolicError> {
    match eval_inner(expr, point) {
        Err(SymbolicError::DimensionMismatch { got, .. }) => {
            Err(SymbolicError::DimensionMismatch { needed: expr.required_dim(), got })
        }
        other => other,
    }
}

fn eval_inner(expr: &Expr, point: &[f64]) -> Result<f64, SymbolicError> {
    let value = match expr {
        Expr::Const(c) => return Ok(*c),
        Expr::Var { index, .. } => {
            return point
                .get(*index)
                .copied()
                .ok_or(SymbolicError::DimensionMismatch { needed: index + 1, got: point.len() })
        }
        Expr::Unary(op, c) => op.apply(eval_inner(c, point)?),
        Expr::Binary(op, l, r) => op.apply(eval_inner(l, point)?, eval_inner(r, point)?),
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SymbolicError::NonFinite)
    }
}

/// Evaluates each component of a symbolic gradient into `out`.
pub fn evaluate_gradient(grad: &[Expr], point: &[f64], out: &mut [f64]) -> Result<(), SymbolicError> {
    debug_assert_eq!(grad.len(), out.len());
    for (g, o) in grad.iter().zip(out.iter_mut()) {
        *o = evaluate(g, point)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::parse_str;
    use super::*;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn basic_values() {
        let v = vars(&["x", "v"]);
        let e = parse_str("add mul x x mul v v", &v).unwrap();
        assert_eq!(evaluate(&e, &[1.0, 2.0]), Ok(5.0));
        let s = parse_str("sin q", &vars(&["q"])).unwrap();
        assert_eq!(evaluate(&s, &[0.0]), Ok(0.0));
    }

    #[test]
    fn poles_and_domains() {
        let v = vars(&["x"]);
        let inv = parse_str("div 1 x", &v).unwrap();
        assert_eq!(evaluate(&inv, &[0.0]), Err(SymbolicError::NonFinite));
        let root = parse_str("pow x 0.5", &v).unwrap();
        assert_eq!(evaluate(&root, &[-1.0]), Err(SymbolicError::NonFinite));
        let ln = parse_str("ln x", &v).unwrap();
        assert_eq!(evaluate(&ln, &[-1.0]), Err(SymbolicError::NonFinite));
        let neg_pow = parse_str("pow x -2", &v).unwrap();
        assert_eq!(evaluate(&neg_pow, &[0.0]), Err(SymbolicError::NonFinite));
        assert_eq!(evaluate(&neg_pow, &[-2.0]), Ok(0.25));
    }

    #[test]
    fn dimension_mismatch() {
        let v = vars(&["x", "y", "vx", "vy"]);
        let e = parse_str("add x vy", &v).unwrap();
        assert_eq!(evaluate(&e, &[1.0, 2.0]), Err(SymbolicError::DimensionMismatch { needed: 4, got: 2 }));
    }
}
