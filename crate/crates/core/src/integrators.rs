//! Fixed-step RK4 and adaptive Dormand-Prince 5(4) integration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Right-hand side `z -> dz/dt` of an autonomous ODE.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64], out: &mut [f64]);

    fn eval_vec(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(z, &mut out);
        out
    }
}

/// Adapts a closure into a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, z: &[f64], out: &mut [f64]) {
        (self.f)(z, out)
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, z: &[f64], out: &mut [f64]) {
        (**self).eval(z, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Dopri5Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: Method,
    /// RK4 step; each output interval is split into equal substeps no longer than this.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Dopri5Adaptive,
            step: 0.01,
            rtol: 1e-7,
            atol: 1e-9,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 5.0,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(step: f64) -> Self {
        IntegratorConfig { method: Method::Rk4Fixed, step, ..Default::default() }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        IntegratorConfig { method: Method::Dopri5Adaptive, rtol, atol, ..Default::default() }
    }

    fn validate(&self) -> Result<(), IntegrateError> {
        let ok = match self.method {
            Method::Rk4Fixed => self.step > 0.0 && self.step.is_finite(),
            Method::Dopri5Adaptive => {
                self.rtol > 0.0
                    && self.atol > 0.0
                    && self.safety > 0.0
                    && self.min_factor > 0.0
                    && self.max_factor >= 1.0
            }
        };
        if ok && self.max_steps > 0 {
            Ok(())
        } else {
            Err(IntegrateError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("exceeded {0} integration steps")]
    MaxStepsExceeded(usize),
    #[error("output times must be strictly increasing")]
    BadTimes,
    #[error("initial state has dimension {got}, field expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid integrator configuration")]
    InvalidConfig,
}

/// One classical RK4 step.
pub fn step_rk4<F: VectorField + ?Sized>(f: &F, z: &[f64], h: f64) -> Result<Vec<f64>, IntegrateError> {
    let d = z.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    f.eval(z, &mut k1);
    for i in 0..d {
        tmp[i] = z[i] + 0.5 * h * k1[i];
    }
    f.eval(&tmp, &mut k2);
    for i in 0..d {
        tmp[i] = z[i] + 0.5 * h * k2[i];
    }
    f.eval(&tmp, &mut k3);
    for i in 0..d {
        tmp[i] = z[i] + h * k3[i];
    }
    f.eval(&tmp, &mut k4);
    let out: Vec<f64> = (0..d).map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(IntegrateError::NonFiniteState(f64::NAN))
    }
}

/// Integrates from `z0` at `times[0]` and returns the state at every entry of
/// `times` (the first being `z0` itself).
pub fn integrate<F: VectorField + ?Sized>(
    f: &F,
    z0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>, IntegrateError> {
    cfg.validate()?;
    if z0.len() != f.dim() {
        return Err(IntegrateError::DimensionMismatch { expected: f.dim(), got: z0.len() });
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(IntegrateError::BadTimes);
    }
    match cfg.method {
        Method::Rk4Fixed => integrate_rk4(f, z0, times, cfg),
        Method::Dopri5Adaptive => Dopri5::new(f, cfg, times[times.len() - 1] - times[0]).run(z0, times),
    }
}

fn integrate_rk4<F: VectorField + ?Sized>(
    f: &F,
    z0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>, IntegrateError> {
    let mut out = Vec::with_capacity(times.len());
    let mut z = z0.to_vec();
    out.push(z.clone());
    let mut steps = 0usize;
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let n = (span / cfg.step).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for k in 0..n {
            steps += 1;
            if steps > cfg.max_steps {
                return Err(IntegrateError::MaxStepsExceeded(cfg.max_steps));
            }
            z = step_rk4(f, &z, h).map_err(|_| IntegrateError::NonFiniteState(w[0] + (k + 1) as f64 * h))?;
        }
        out.push(z.clone());
    }
    Ok(out)
}

// Dormand-Prince 5(4) tableau. The field is autonomous, so the c_i nodes are unused.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI controller exponents.
const ALPHA: f64 = 0.7 / 5.0;
const BETA: f64 = 0.4 / 5.0;

struct Dopri5<'a, F: ?Sized> {
    f: &'a F,
    cfg: &'a IntegratorConfig,
    span: f64,
    steps: usize,
}

impl<'a, F: VectorField + ?Sized> Dopri5<'a, F> {
    fn new(f: &'a F, cfg: &'a IntegratorConfig, span: f64) -> Self {
        Dopri5 { f, cfg, span, steps: 0 }
    }

    fn error_norm(&self, y: &[f64], y_new: &[f64], err: &[f64]) -> f64 {
        let d = y.len() as f64;
        let s: f64 = err
            .iter()
            .zip(y.iter().zip(y_new))
            .map(|(e, (a, b))| {
                let sc = self.cfg.atol + self.cfg.rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (s / d).sqrt()
    }

    /// Hairer's starting-step heuristic.
    fn initial_step(&self, y: &[f64], f0: &[f64]) -> f64 {
        let d = y.len();
        let sc: Vec<f64> = y.iter().map(|v| self.cfg.atol + self.cfg.rtol * v.abs()).collect();
        let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / d as f64).sqrt();
        let d0 = rms(y);
        let d1 = rms(f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
        let f1 = self.f.eval_vec(&y1);
        let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
        let d2 = rms(&df);
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(1.0 / 5.0) };
        (100.0 * h0).min(h1).min(self.span)
    }

    fn run(mut self, z0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, IntegrateError> {
        let d = z0.len();
        let mut out = Vec::with_capacity(times.len());
        out.push(z0.to_vec());
        if times.len() == 1 {
            return Ok(out);
        }
        let mut t = times[0];
        let mut y = z0.to_vec();
        let mut k1 = self.f.eval_vec(&y);
        let mut h = self.initial_step(&y, &k1);
        let mut err_prev: f64 = 1e-4;
        let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
            (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut tmp = vec![0.0; d];
        let mut y_new = vec![0.0; d];
        let mut err = vec![0.0; d];

        for &t_out in &times[1..] {
            while t < t_out {
                let remaining = t_out - t;
                // Land exactly on the output time; a tiny leftover is folded in.
                let (h_try, hits) = if h * 1.01 >= remaining { (remaining, true) } else { (h, false) };
                if h_try < 1e-12 * self.span {
                    return Err(IntegrateError::StepUnderflow { t, h: h_try });
                }
                self.steps += 1;
                if self.steps > self.cfg.max_steps {
                    return Err(IntegrateError::MaxStepsExceeded(self.cfg.max_steps));
                }
                let f = self.f;
                for i in 0..d {
                    tmp[i] = y[i] + h_try * A21 * k1[i];
                }
                f.eval(&tmp, &mut k2);
                for i in 0..d {
                    tmp[i] = y[i] + h_try * (A31 * k1[i] + A32 * k2[i]);
                }
                f.eval(&tmp, &mut k3);
                for i in 0..d {
                    tmp[i] = y[i] + h_try * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
                }
                f.eval(&tmp, &mut k4);
                for i in 0..d {
                    tmp[i] = y[i] + h_try * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
                }
                f.eval(&tmp, &mut k5);
                for i in 0..d {
                    tmp[i] = y[i] + h_try * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
                }
                f.eval(&tmp, &mut k6);
                for i in 0..d {
                    y_new[i] = y[i] + h_try * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
                }
                f.eval(&y_new, &mut k7);
                for i in 0..d {
                    err[i] = h_try * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                }
                let en = self.error_norm(&y, &y_new, &err);
                if !en.is_finite() {
                    // Treat blow-up inside the step as a rejection with maximal shrink.
                    h = h_try * self.cfg.min_factor;
                    continue;
                }
                if en <= 1.0 {
                    let en_safe = en.max(1e-10);
                    let factor = (self.cfg.safety * en_safe.powf(-ALPHA) * err_prev.powf(BETA))
                        .clamp(self.cfg.min_factor, self.cfg.max_factor);
                    err_prev = en_safe;
                    t = if hits { t_out } else { t + h_try };
                    std::mem::swap(&mut y, &mut y_new);
                    std::mem::swap(&mut k1, &mut k7);
                    if y.iter().any(|v| !v.is_finite()) {
                        return Err(IntegrateError::NonFiniteState(t));
                    }
                    // A clamped step must not shrink the natural step size.
                    h = if hits { h.max(h_try * factor) } else { h_try * factor };
                } else {
                    let factor = (self.cfg.safety * en.powf(-1.0 / 5.0)).clamp(self.cfg.min_factor, 1.0);
                    h = h_try * factor;
                }
            }
            out.push(y.clone());
        }
        Ok(out)
    }
}
