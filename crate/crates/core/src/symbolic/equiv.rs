use super::{evaluate, Expr, SymbolicError};

/// Maximum affine-fit residual, as a fraction of the reference expression's
/// range over the probe.
pub const AFFINE_TOLERANCE: f64 = 1e-3;
pub const MIN_PROBE_POINTS: usize = 50;
const DEGENERATE_RANGE: f64 = 1e-9;

/// Tests whether `b ~ alpha * a + beta` with `alpha != 0` on the probe.
///
/// `alpha` and `beta` are the least-squares fit; the relation holds when the
/// worst residual is within [`AFFINE_TOLERANCE`] of `b`'s range and the
/// reverse fit passes too, so the test is symmetric. A probe point
/// at which either expression fails to evaluate makes the relation false.
pub fn equivalent_affine(a: &Expr, b: &Expr, probe: &[Vec<f64>]) -> Result<bool, SymbolicError> {
    if probe.len() < MIN_PROBE_POINTS {
        return Err(SymbolicError::ProbeTooSmall { needed: MIN_PROBE_POINTS, got: probe.len() });
    }
    let mut av = Vec::with_capacity(probe.len());
    let mut bv = Vec::with_capacity(probe.len());
    let mut any_invalid = false;
    for z in probe {
        match (evaluate(a, z), evaluate(b, z)) {
            (Ok(x), Ok(y)) => {
                av.push(x);
                bv.push(y);
            }
            (_, Err(e @ SymbolicError::DimensionMismatch { .. }))
            | (Err(e @ SymbolicError::DimensionMismatch { .. }), _) => return Err(e),
            _ => any_invalid = true,
        }
    }
    // Degeneracy is judged on the reference alone, before validity of `a`.
    let b_all: Vec<f64> = probe.iter().filter_map(|z| evaluate(b, z).ok()).collect();
    let b_range = range(&b_all);
    if b_all.is_empty() || b_range < DEGENERATE_RANGE {
        return Err(SymbolicError::DegenerateProbe);
    }
    if any_invalid {
        return Ok(false);
    }

    Ok(affine_fit_holds(&av, &bv) && affine_fit_holds(&bv, &av))
}

/// Least-squares `y ~ alpha * x + beta` with `alpha != 0` and worst residual
/// within tolerance of `y`'s range.
fn affine_fit_holds(x: &[f64], y: &[f64]) -> bool {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mean_x) * (a - mean_x);
        sxy += (a - mean_x) * (b - mean_y);
    }
    if sxx <= 0.0 || range(x) < DEGENERATE_RANGE * (1.0 + mean_x.abs()) {
        return false;
    }
    let alpha = sxy / sxx;
    let beta = mean_y - alpha * mean_x;
    if alpha == 0.0 {
        return false;
    }
    let worst = x.iter().zip(y).map(|(a, b)| (alpha * a + beta - b).abs()).fold(0.0, f64::max);
    worst <= AFFINE_TOLERANCE * range(y)
}

fn range(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    hi - lo
}
