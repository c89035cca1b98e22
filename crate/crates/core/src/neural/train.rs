use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, MlpField};
use super::NeuralError;
use crate::catalog::{coordinate_std, Dataset};
use crate::optim::Adam;
use crate::seeds;

/// A window of consecutive observations rolled out from its first state.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Nominal RK4 step; each observation interval is split into
    /// `ceil(dt / step)` equal substeps.
    pub step: f64,
}

impl Segment {
    /// Builds a segment whose step is a quarter of the median spacing.
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self, NeuralError> {
        if times.len() < 2 || times.len() != states.len() {
            return Err(NeuralError::InvalidConfig("segment needs two or more observations".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NeuralError::InvalidConfig("segment times must increase".into()));
        }
        let step = median_spacing(&times) / 4.0;
        Ok(Segment { times, states, step })
    }

    fn substeps(&self, k: usize) -> (usize, f64) {
        let dt = self.times[k + 1] - self.times[k];
        let n = ((dt / self.step).ceil() as usize).max(1);
        (n, dt / n as f64)
    }
}

fn median_spacing(times: &[f64]) -> f64 {
    let mut dt: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    dt.sort_by(f64::total_cmp);
    let m = dt.len();
    if m % 2 == 1 {
        dt[m / 2]
    } else {
        0.5 * (dt[m / 2 - 1] + dt[m / 2])
    }
}

/// Cuts a trajectory into windows of `len` observations that share their
/// endpoints; a shorter tail window is kept when it has two or more points.
pub fn segments_of(times: &[f64], states: &[Vec<f64>], len: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < times.len() {
        let end = (start + len).min(times.len());
        if let Ok(s) = Segment::new(times[start..end].to_vec(), states[start..end].to_vec()) {
            out.push(s);
        }
        start = end - 1;
    }
    out
}

struct Stage {
    caches: [ForwardCache; 4],
}

fn rk4_step_taped(field: &MlpField, z: &[f64], h: f64, tape: &mut Vec<Stage>) -> Vec<f64> {
    let d = z.len();
    let mut st = Stage { caches: Default::default() };
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut x = z.to_vec();
    let coef = [0.5 * h, 0.5 * h, h];
    for s in 0..4 {
        field.forward_cached(&x, &mut st.caches[s], &mut k[s]);
        if s < 3 {
            for i in 0..d {
                x[i] = z[i] + coef[s] * k[s][i];
            }
        }
    }
    tape.push(st);
    (0..d).map(|i| z[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i])).collect()
}

/// Pulls the state adjoint back through one taped RK4 step.
fn rk4_step_backward(field: &MlpField, st: &Stage, h: f64, a: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let d = a.len();
    let mut az = a.to_vec();
    let mut ak: [Vec<f64>; 4] = [
        a.iter().map(|v| h / 6.0 * v).collect(),
        a.iter().map(|v| h / 3.0 * v).collect(),
        a.iter().map(|v| h / 3.0 * v).collect(),
        a.iter().map(|v| h / 6.0 * v).collect(),
    ];
    let coef = [0.5 * h, 0.5 * h, h];
    let mut gx = vec![0.0; d];
    for s in (0..4).rev() {
        field.backward(&st.caches[s], &ak[s], grad, &mut gx);
        for i in 0..d {
            az[i] += gx[i];
        }
        if s > 0 {
            for i in 0..d {
                ak[s - 1][i] += coef[s - 1] * gx[i];
            }
        }
    }
    az
}

/// Weighted squared error summed over a segment's predicted observations, and
/// its parameter gradient scaled by `scale`.
fn segment_loss_grad(
    field: &MlpField,
    seg: &Segment,
    weights: &[f64],
    scale: f64,
) -> Result<(f64, Vec<f64>), NeuralError> {
    let d = field.dims()[0];
    let mut tape = Vec::new();
    let mut marks = Vec::with_capacity(seg.times.len());
    let mut preds = Vec::with_capacity(seg.times.len() - 1);
    let mut z = seg.states[0].clone();
    for k in 0..seg.times.len() - 1 {
        let (n, h) = seg.substeps(k);
        for _ in 0..n {
            z = rk4_step_taped(field, &z, h, &mut tape);
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(NeuralError::NonFinite);
        }
        marks.push(tape.len());
        preds.push(z.clone());
    }
    let mut loss = 0.0;
    let mut obs_grads = Vec::with_capacity(preds.len());
    for (k, p) in preds.iter().enumerate() {
        let y = &seg.states[k + 1];
        let mut g = vec![0.0; d];
        for j in 0..d {
            let r = p[j] - y[j];
            loss += weights[j] * r * r;
            g[j] = 2.0 * weights[j] * r * scale;
        }
        obs_grads.push(g);
    }
    let mut grad = vec![0.0; field.n_params()];
    let mut a = vec![0.0; d];
    let mut cursor = tape.len();
    for k in (0..preds.len()).rev() {
        for j in 0..d {
            a[j] += obs_grads[k][j];
        }
        let start = if k == 0 { 0 } else { marks[k - 1] };
        let (_, h) = seg.substeps(k);
        while cursor > start {
            cursor -= 1;
            a = rk4_step_backward(field, &tape[cursor], h, &a, &mut grad);
        }
    }
    Ok((loss, grad))
}

/// Mean squared error between each segment's observations and its RK4 rollout
/// from the first observation, with its exact gradient in the parameters.
/// `weights` scales each coordinate's squared error (all ones when `None`).
pub fn grad_params(
    field: &MlpField,
    batch: &[Segment],
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>), NeuralError> {
    let d = field.dims()[0];
    let ones = vec![1.0; d];
    let w = weights.unwrap_or(&ones);
    if w.len() != d {
        return Err(NeuralError::DimensionMismatch { expected: d, got: w.len() });
    }
    if batch.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    for s in batch {
        if s.states.iter().any(|z| z.len() != d) {
            return Err(NeuralError::DimensionMismatch { expected: d, got: s.states[0].len() });
        }
    }
    let count: usize = batch.iter().map(|s| (s.times.len() - 1) * d).sum();
    let scale = 1.0 / count as f64;
    let parts: Vec<_> = batch.par_iter().map(|s| segment_loss_grad(field, s, w, scale)).collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; field.n_params()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    loss *= scale;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NeuralError::NonFinite);
    }
    Ok((loss, grad))
}

/// Rolls a field through the observation times of a trajectory with RK4,
/// starting from the first observed state.
pub fn rollout(field: &MlpField, times: &[f64], z0: &[f64]) -> Result<Vec<Vec<f64>>, NeuralError> {
    let mut out = vec![z0.to_vec()];
    if times.len() < 2 {
        return Ok(out);
    }
    let seg = Segment { times: times.to_vec(), states: Vec::new(), step: median_spacing(times) / 4.0 };
    let mut z = z0.to_vec();
    let mut tape = Vec::new();
    for k in 0..times.len() - 1 {
        let (n, h) = seg.substeps(k);
        for _ in 0..n {
            z = rk4_step_taped(field, &z, h, &mut tape);
            tape.clear();
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(NeuralError::NonFinite);
        }
        out.push(z.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub segment_len: usize,
    pub hidden: Vec<usize>,
    pub target_val_mse: f64,
    pub patience: usize,
    /// Learning rate at the last epoch as a fraction of `learning_rate`,
    /// reached by cosine decay; 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            segment_len: 8,
            hidden: vec![64, 64, 64],
            target_val_mse: 1e-5,
            patience: 30,
            final_lr_fraction: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let ok = self.epochs > 0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.segment_len >= 2
            && !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0)
            && self.target_val_mse >= 0.0
            && self.patience > 0
            && self.final_lr_fraction > 0.0
            && self.final_lr_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(NeuralError::InvalidConfig("training configuration out of range".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    TargetReached,
    Patience,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Normalized training loss per epoch (mean over the epoch's batches).
    pub train_mse: Vec<f64>,
    /// Normalized validation rollout MSE per epoch.
    pub val_mse: Vec<f64>,
    /// The same in raw state units.
    pub val_mse_raw: Vec<f64>,
    pub final_val_mse: f64,
    pub stop_reason: StopReason,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.val_mse.len()
    }

    pub fn best_val_mse(&self) -> f64 {
        self.val_mse.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-coordinate weights `1 / s_j^2` from training-state standard deviations.
pub fn normalization_weights(ds: &Dataset) -> Vec<f64> {
    coordinate_std(&ds.train_states()).into_iter().map(|s| if s > 1e-12 { 1.0 / (s * s) } else { 1.0 }).collect()
}

/// Full-trajectory rollout error on the validation split: (normalized, raw).
pub fn validation_mse(field: &MlpField, ds: &Dataset, weights: &[f64]) -> Result<(f64, f64), NeuralError> {
    let (mut norm, mut raw, mut count) = (0.0, 0.0, 0usize);
    for traj in ds.val() {
        let pred = rollout(field, &traj.times, &traj.states[0])?;
        for (p, y) in pred.iter().zip(&traj.states).skip(1) {
            for j in 0..p.len() {
                let r2 = (p[j] - y[j]).powi(2);
                norm += weights[j] * r2;
                raw += r2;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(NeuralError::EmptyDataset);
    }
    Ok((norm / count as f64, raw / count as f64))
}

/// Fits an MLP field to the training split by Adam on shuffled segment batches.
/// Stops after `epochs`, when validation MSE reaches the target, or after
/// `patience` epochs without a new best. Returns the field at the last epoch.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(MlpField, TrainReport), NeuralError> {
    cfg.validate()?;
    if ds.trajectories.is_empty() || ds.split.train.is_empty() || ds.split.val.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let started = Instant::now();
    let d = ds.dim();
    let mut dims = vec![d];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(d);
    let mut field = MlpField::random(dims, seeds::derive(cfg.seed, "train-init"))?;
    let weights = normalization_weights(ds);
    let segments: Vec<Segment> = ds.train().flat_map(|t| segments_of(&t.times, &t.states, cfg.segment_len)).collect();
    if segments.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let mut adam = Adam::new(field.n_params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut shuffle_rng = seeds::stream(cfg.seed, "train-shuffle");
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut report = TrainReport {
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        val_mse_raw: Vec::new(),
        final_val_mse: f64::NAN,
        stop_reason: StopReason::MaxEpochs,
        wall_time_s: 0.0,
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / (cfg.epochs - 1).max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.set_lr(cfg.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cosine));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Segment> = chunk.iter().map(|&i| segments[i].clone()).collect();
            let (loss, grad) = grad_params(&field, &batch, Some(&weights))?;
            adam.step(field.params_mut(), &grad);
            epoch_loss += loss;
            n_batches += 1;
        }
        if field.params().iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::NonFinite);
        }
        let (vn, vr) = validation_mse(&field, ds, &weights)?;
        report.train_mse.push(epoch_loss / n_batches as f64);
        report.val_mse.push(vn);
        report.val_mse_raw.push(vr);
        if vn < best {
            best = vn;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if vn <= cfg.target_val_mse {
            report.stop_reason = StopReason::TargetReached;
            break;
        }
        if since_best >= cfg.patience {
            report.stop_reason = StopReason::Patience;
            break;
        }
    }
    report.final_val_mse = *report.val_mse.last().expect("at least one epoch");
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((field, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_segments(d: usize, n: usize, seed: u64) -> Vec<Segment> {
        use rand::Rng;
        let mut rng = seeds::rng(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(2..6);
                let mut t = 0.0;
                let times: Vec<f64> = (0..len)
                    .map(|_| {
                        t += 0.05 + 0.2 * rng.random::<f64>();
                        t
                    })
                    .collect();
                let states = (0..len).map(|_| (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()).collect();
                Segment::new(times, states).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_field_on_constant_data_is_exact() {
        let mut f = MlpField::random(vec![2, 8, 2], 1).unwrap();
        let n = f.n_params();
        // zero the output layer
        for p in &mut f.params_mut()[n - (8 * 2 + 2)..] {
            *p = 0.0;
        }
        let seg = Segment::new(vec![0.0, 0.3, 0.7], vec![vec![0.4, -0.2]; 3]).unwrap();
        let (loss, grad) = grad_params(&f, &[seg], None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn duplicated_batch_is_unchanged() {
        let f = MlpField::random(vec![2, 6, 6, 2], 4).unwrap();
        let segs = random_segments(2, 3, 9);
        let mut twice = segs.clone();
        twice.extend(segs.iter().cloned());
        let (l1, g1) = grad_params(&f, &segs, None).unwrap();
        let (l2, g2) = grad_params(&f, &twice, None).unwrap();
        assert!((l1 - l2).abs() <= 1e-15 * l1.abs());
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut pick = seeds::rng(77);
        let weights = [1.3, 0.6, 2.0];
        let mut f = MlpField::random(vec![3, 7, 5, 3], 12).unwrap();
        for p in f.params_mut() {
            *p *= 3.0;
        }
        let segs = random_segments(3, 4, 13);
        let (_, g) = grad_params(&f, &segs, Some(&weights)).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let i = pick.random_range(0..f.n_params());
            let mut fp = f.clone();
            let mut fm = f.clone();
            fp.params_mut()[i] += h;
            fm.params_mut()[i] -= h;
            let lp = grad_params(&fp, &segs, Some(&weights)).unwrap().0;
            let lm = grad_params(&fm, &segs, Some(&weights)).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel <= 1e-4, "coord {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn segments_share_endpoints() {
        let t: Vec<f64> = (1..=20).map(f64::from).collect();
        let z: Vec<Vec<f64>> = t.iter().map(|v| vec![*v]).collect();
        let segs = segments_of(&t, &z, 8);
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].times.len(), 8);
        assert_eq!(segs[1].times[0], 8.0);
        assert_eq!(segs[2].times, vec![15.0, 16.0, 17.0, 18.0, 19.0, 20.0]);
        assert_eq!(segs[0].step, 0.25);
    }

    #[test]
    fn rollout_of_linear_field() {
        let f = MlpField::from_layers(vec![(vec![vec![0.0, 1.0], vec![-1.0, 0.0]], vec![0.0, 0.0])]).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.3).collect();
        let out = rollout(&f, &times, &[1.0, 0.0]).unwrap();
        let t: f64 = 3.0;
        assert!((out[10][0] - t.cos()).abs() < 1e-5);
        assert!((out[10][1] + t.sin()).abs() < 1e-5);
    }
}
