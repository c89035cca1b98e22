use crate::catalog::Dataset;
use crate::integrators::VectorField;

/// Derivative at `x` of the quadratic through three points.
fn lagrange_slope(t: [f64; 3], y: [f64; 3], x: f64) -> f64 {
    let mut out = 0.0;
    for j in 0..3 {
        let mut denom = 1.0;
        for l in 0..3 {
            if l != j {
                denom *= t[j] - t[l];
            }
        }
        let mut num = 0.0;
        for m in 0..3 {
            if m == j {
                continue;
            }
            let mut prod = 1.0;
            for l in 0..3 {
                if l != j && l != m {
                    prod *= x - t[l];
                }
            }
            num += prod;
        }
        out += y[j] * num / denom;
    }
    out
}

/// Finite-difference state derivatives from raw observations: three-point
/// Lagrange slopes on the irregular time grid, one-sided at the ends.
/// Trajectories with fewer than three observations are skipped.
pub fn direct_mode_pairs(ds: &Dataset) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    for traj in &ds.trajectories {
        let n = traj.times.len();
        if n < 3 {
            continue;
        }
        let d = traj.dim();
        for i in 0..n {
            let c = i.clamp(1, n - 2);
            let t = [traj.times[c - 1], traj.times[c], traj.times[c + 1]];
            let deriv: Vec<f64> = (0..d)
                .map(|j| {
                    let y = [traj.states[c - 1][j], traj.states[c][j], traj.states[c + 1][j]];
                    lagrange_slope(t, y, traj.times[i])
                })
                .collect();
            out.push((traj.states[i].clone(), deriv));
        }
    }
    out
}

/// Inverse-distance-weighted average of the `k` nearest finite-difference
/// derivatives: the raw-data stand-in for a learned field.
#[derive(Debug, Clone)]
pub struct FdInterpolant {
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    k: usize,
    dim: usize,
}

impl FdInterpolant {
    pub fn new(pairs: Vec<(Vec<f64>, Vec<f64>)>, k: usize) -> Self {
        let dim = pairs.first().map_or(0, |p| p.0.len());
        FdInterpolant { pairs, k: k.max(1), dim }
    }
}

impl VectorField for FdInterpolant {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        for (i, (p, _)) in self.pairs.iter().enumerate() {
            let d2: f64 = p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
            if best.len() < self.k || d2 < best[best.len() - 1].0 {
                let at = best.partition_point(|(d, _)| *d <= d2);
                best.insert(at, (d2, i));
                best.truncate(self.k);
            }
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        if let Some(&(d0, i0)) = best.first() {
            if d0 == 0.0 {
                out.copy_from_slice(&self.pairs[i0].1);
                return;
            }
        }
        let mut wsum = 0.0;
        for &(d2, i) in &best {
            let w = 1.0 / d2;
            wsum += w;
            for (o, v) in out.iter_mut().zip(&self.pairs[i].1) {
                *o += w * v;
            }
        }
        if wsum > 0.0 {
            out.iter_mut().for_each(|o| *o /= wsum);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Split, Trajectory};

    fn uniform_ho(n: usize, dt: f64) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|k| 0.3 + dt * k as f64).collect();
        let states = times.iter().map(|t| vec![t.cos(), -t.sin()]).collect();
        Trajectory { system: "ho".into(), sigma_rel: 0.0, times, states, clean_states: None }
    }

    fn dataset(trajectories: Vec<Trajectory>) -> Dataset {
        Dataset {
            system: "ho".into(),
            sigma_rel: 0.0,
            seed: 0,
            trajectories,
            split: Split { train: vec![0], val: vec![] },
        }
    }

    #[test]
    fn slopes_are_exact_on_quadratics() {
        let q = |t: f64| 2.0 * t * t - t + 3.0;
        let t = [0.1, 0.35, 0.9];
        for x in t {
            let s = lagrange_slope(t, [q(t[0]), q(t[1]), q(t[2])], x);
            assert!((s - (4.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_noiseless_ho_matches_field() {
        let ds = dataset(vec![uniform_ho(200, 0.05)]);
        let pairs = direct_mode_pairs(&ds);
        assert_eq!(pairs.len(), 200);
        for (z, f) in &pairs {
            assert!((f[0] - z[1]).abs() <= 1e-3 && (f[1] + z[0]).abs() <= 1e-3);
        }
    }

    #[test]
    fn short_trajectories_are_skipped() {
        let ds = dataset(vec![uniform_ho(2, 0.1), uniform_ho(5, 0.1)]);
        assert_eq!(direct_mode_pairs(&ds).len(), 5);
    }

    #[test]
    fn interpolant_reproduces_nodes() {
        let pairs = vec![(vec![0.0, 0.0], vec![1.0, 2.0]), (vec![1.0, 0.0], vec![3.0, 4.0])];
        let f = FdInterpolant::new(pairs, 2);
        assert_eq!(f.eval_vec(&[1.0, 0.0]), vec![3.0, 4.0]);
        let mid = f.eval_vec(&[0.5, 0.0]);
        assert!((mid[0] - 2.0).abs() < 1e-12);
    }
}
