use serde::{Deserialize, Serialize};

use super::GeneratorError;
use crate::symbolic::{evaluate_gradient, grad_symbolic, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrMode {
    /// `mean (grad C . f)^2`
    Raw,
    /// `mean (grad C . f)^2 / (|grad C|^2 |f|^2 + 1e-12)`
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub g_max: f64,
    pub err_mode: ErrMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { lambda1: 10.0, lambda2: 0.1, g_max: 1.0, err_mode: ErrMode::Normalized }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.lambda1 > 0.0 && self.lambda2 >= 0.0 && self.g_max > 0.0 {
            Ok(())
        } else {
            Err(GeneratorError::InvalidConfig("need lambda1 > 0, lambda2 >= 0, g_max > 0".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reward: f64,
    pub err: f64,
    /// Mean gradient norm over the evaluated points, before the cap.
    pub mean_grad_norm: f64,
    pub skipped: usize,
    /// Evaluated points where `|grad C| < 1e-9`.
    pub degenerate: usize,
}

impl RewardBreakdown {
    /// True when the gradient vanishes on more than half of the evaluated batch.
    pub fn is_degenerate(&self, n_points: usize) -> bool {
        2 * self.degenerate > n_points - self.skipped
    }
}

/// `exp(-lambda1 * err) + lambda2 * min(mean |grad C|, g_max)` over a batch of
/// `(z, f(z))` pairs. Points where the gradient is not finite are skipped; more
/// than 10% skipped is an error.
pub fn reward(
    expr: &Expr,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, GeneratorError> {
    let d = pairs.first().ok_or(GeneratorError::EmptyBatch)?.0.len();
    reward_with_gradient(&grad_symbolic(expr, d), pairs, cfg)
}

/// As [`reward`], with the symbolic gradient already computed.
pub fn reward_with_gradient(
    grad: &[Expr],
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, GeneratorError> {
    if pairs.is_empty() {
        return Err(GeneratorError::EmptyBatch);
    }
    let d = grad.len();
    let mut g = vec![0.0; d];
    let (mut err_sum, mut norm_sum, mut used, mut degenerate) = (0.0, 0.0, 0usize, 0usize);
    for (z, f) in pairs {
        if evaluate_gradient(grad, z, &mut g).is_err() {
            continue;
        }
        let dot: f64 = g.iter().zip(f).map(|(a, b)| a * b).sum();
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let term = match cfg.err_mode {
            ErrMode::Raw => dot * dot,
            ErrMode::Normalized => {
                let f2: f64 = f.iter().map(|v| v * v).sum();
                dot * dot / (g2 * f2 + 1e-12)
            }
        };
        if !term.is_finite() {
            continue;
        }
        err_sum += term;
        norm_sum += g2.sqrt();
        used += 1;
        if g2.sqrt() < 1e-9 {
            degenerate += 1;
        }
    }
    let skipped = pairs.len() - used;
    if skipped * 10 > pairs.len() {
        return Err(GeneratorError::TooManyInvalidPoints { invalid: skipped, total: pairs.len() });
    }
    let err = err_sum / used as f64;
    let mean_grad_norm = norm_sum / used as f64;
    let reward = (-cfg.lambda1 * err).exp() + cfg.lambda2 * mean_grad_norm.min(cfg.g_max);
    Ok(RewardBreakdown { reward, err, mean_grad_norm, skipped, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::parse_str;

    fn vars() -> Vec<String> {
        vec!["x".into(), "v".into()]
    }

    fn ho_pairs(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..n)
            .map(|k| {
                let t = 0.37 * k as f64;
                let r = 0.5 + (k % 7) as f64 * 0.2;
                let z = vec![r * t.cos(), r * t.sin()];
                let f = vec![z[1], -z[0]];
                (z, f)
            })
            .collect()
    }

    #[test]
    fn exact_invariant_has_unit_exp_term() {
        let e = parse_str("mul 0.5 add mul x x mul v v", &vars()).unwrap();
        let pairs = ho_pairs(100);
        let cfg = RewardConfig::default();
        let r = reward(&e, &pairs, &cfg).unwrap();
        let mean_norm: f64 = pairs.iter().map(|(z, _)| (z[0] * z[0] + z[1] * z[1]).sqrt()).sum::<f64>() / 100.0;
        assert_eq!(r.err, 0.0);
        assert!((r.reward - (1.0 + 0.1 * mean_norm.min(cfg.g_max))).abs() < 1e-9);
    }

    #[test]
    fn constant_scores_one() {
        let e = parse_str("5", &vars()).unwrap();
        let r = reward(&e, &ho_pairs(50), &RewardConfig::default()).unwrap();
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn coordinate_matches_direct_sum() {
        let x = parse_str("x", &vars()).unwrap();
        let pairs: Vec<_> = (0..64)
            .map(|k| {
                let t = 0.1 * k as f64;
                (vec![t.cos(), t.sin()], vec![t.sin(), -t.cos()])
            })
            .collect();
        let r = reward(&x, &pairs, &RewardConfig::default()).unwrap();
        let oracle: f64 =
            pairs.iter().map(|(z, _)| z[1] * z[1] / ((z[0] * z[0] + z[1] * z[1]) + 1e-12)).sum::<f64>() / 64.0;
        assert!((r.err - oracle).abs() < 1e-12);
        assert!(r.reward < 1.1);
    }

    #[test]
    fn too_many_invalid_points() {
        // gradient of 1/x is -1/x^2, undefined at x = 0
        let e = parse_str("div 1 x", &vars()).unwrap();
        let mut pairs = ho_pairs(10);
        for p in pairs.iter_mut().take(2) {
            p.0[0] = 0.0;
        }
        assert!(matches!(
            reward(&e, &pairs, &RewardConfig::default()),
            Err(GeneratorError::TooManyInvalidPoints { invalid: 2, total: 10 })
        ));
        pairs[1].0[0] = 1.0;
        assert_eq!(reward(&e, &pairs, &RewardConfig::default()).unwrap().skipped, 1);
    }
}
