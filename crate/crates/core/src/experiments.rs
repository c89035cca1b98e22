//! End-to-end discovery trials, success adjudication, discovery rates with
//! Wilson intervals, sweeps and report files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{generate_dataset, system, CatalogError, Dataset, SystemSpec};
use crate::generator::{
    direct_mode_pairs, ppo_finetune, pretrain_mle, FdInterpolant, FixedPairs, GeneratorError, PairSource, Policy,
    PpoConfig, PretrainConfig, RewardConfig,
};
use crate::integrators::VectorField;
use crate::neural::{field_fidelity, train, TrainConfig};
use crate::seeds;
use crate::symbolic::{equivalent_affine, Expr, Grammar};
use crate::verifier::{certify_pairs, drift_check, DefectMode, HullSampler, VerificationReport, VerifyError};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Learned vector field, then search against it.
    Hybrid,
    /// Finite differences of the raw observations; the internal baseline.
    Direct,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::Direct => "direct",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::Direct => "direct (internal baseline)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessCriteria {
    /// Points in the data region used for the affine-equivalence test.
    pub probe_points: usize,
    /// Largest relative drift along true trajectories.
    pub drift_tau: f64,
    pub min_variables: usize,
    /// Pool entries certified, in rank order.
    pub top_k: usize,
    pub drift_trajectories: usize,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        SuccessCriteria { probe_points: 200, drift_tau: 1e-2, min_variables: 2, top_k: 5, drift_trajectories: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub n_points: usize,
    pub epsilon: f64,
    pub mode: DefectMode,
}

impl Default for VerifyConfig {
    /// The normalized defect is the |cosine| between the candidate gradient and
    /// the learned field, so it never exceeds 1. Against a fitted network it
    /// peaks near equilibria, where both factors vanish and fit error dominates
    /// the ratio; the true energy reaches 0.4 there at 2% noise. A tolerance of
    /// 0.5 still rejects coordinates and leaves the drift check to catch decoys.
    fn default() -> Self {
        VerifyConfig { n_points: crate::verifier::DEFAULT_POINTS, epsilon: 0.5, mode: DefectMode::Normalized }
    }
}

/// Everything a trial needs besides its system, mode, noise, size and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub n_obs: usize,
    /// Defaults to the system's own span.
    pub t_span: Option<f64>,
    pub train: TrainConfig,
    pub policy_hidden: usize,
    pub pretrain: PretrainConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub verify: VerifyConfig,
    pub criteria: SuccessCriteria,
    /// Neighbours averaged by the direct-mode interpolant.
    pub direct_k: usize,
    /// Validation MSE above which a hybrid trial is flagged underfit.
    pub underfit_mse: f64,
    /// Hybrid mode searches against the true field instead of a learned one.
    pub exact_field: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            n_obs: 50,
            t_span: None,
            train: TrainConfig {
                hidden: vec![32, 32],
                learning_rate: 1e-2,
                batch_size: 4,
                final_lr_fraction: 0.05,
                target_val_mse: 1e-4,
                patience: 1000,
                ..TrainConfig::default()
            },
            policy_hidden: 64,
            pretrain: PretrainConfig::default(),
            ppo: PpoConfig::default(),
            reward: RewardConfig::default(),
            verify: VerifyConfig::default(),
            criteria: SuccessCriteria::default(),
            direct_k: 8,
            underfit_mse: 1e-3,
            exact_field: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub system: String,
    pub invariant: String,
    pub mode: Mode,
    pub seed: u64,
    pub sigma_rel: f64,
    pub n_traj: usize,
    /// Winning candidate on success, otherwise the best certified one if any.
    pub discovered: Option<String>,
    pub success: bool,
    pub reason: Option<String>,
    pub underfit: bool,
    pub val_mse: Option<f64>,
    pub field_fidelity: Option<f64>,
    pub verification: Option<VerificationReport>,
    pub drift: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Reward batches drawn from the data region of a point cloud.
pub struct HullPairs<'a, F: ?Sized> {
    pub field: &'a F,
    pub sampler: HullSampler,
}

impl<F: VectorField + ?Sized> PairSource for HullPairs<'_, F> {
    fn pairs(&self, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        match self.sampler.sample(n, seed) {
            Ok(points) => points.into_iter().map(|z| (z.clone(), self.field.eval_vec(&z))).collect(),
            Err(_) => Vec::new(),
        }
    }
}

/// Fresh policy for `variables`, pre-trained on the default grammar; the
/// seeds match those used by [`run_trial`].
pub fn pretrained_policy(
    variables: &[String],
    hidden: usize,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Policy, GeneratorError> {
    let grammar = Grammar::new(variables.to_vec());
    let policy = Policy::new(&grammar, hidden, seeds::derive(seed, "policy-init"))?;
    Ok(pretrain_mle(policy, &grammar, cfg, seeds::derive(seed, "pretrain"))?.0)
}

/// Seed of the fine-tuning stage of a trial.
pub fn ppo_seed(seed: u64) -> u64 {
    seeds::derive(seed, "ppo")
}

/// Seed of the certification points of a trial.
pub fn cert_seed(seed: u64) -> u64 {
    seeds::derive(seed, "cert-points")
}

/// Pre-trained policies keyed by variable names and seed, shared across the
/// trials of a grid.
#[derive(Default)]
pub struct PretrainCache {
    inner: Mutex<HashMap<(Vec<String>, u64), Policy>>,
}

impl PretrainCache {
    pub fn get_or_train(&self, variables: &[String], cfg: &TrialConfig, seed: u64) -> Result<Policy, String> {
        let key = (variables.to_vec(), seed);
        if let Some(p) = self.inner.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let policy = pretrained_policy(variables, cfg.policy_hidden, &cfg.pretrain, seed).map_err(|e| e.to_string())?;
        self.inner.lock().expect("cache lock").insert(key, policy.clone());
        Ok(policy)
    }
}

struct Searched {
    candidates: Vec<Expr>,
    /// `(z, f(z))` at the certification points for the field searched against.
    cert_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    probe: Vec<Vec<f64>>,
    val_mse: Option<f64>,
    fidelity: Option<f64>,
}

fn search(
    spec: &SystemSpec,
    mode: Mode,
    ds: &Dataset,
    cfg: &TrialConfig,
    seed: u64,
    cache: &PretrainCache,
) -> Result<Searched, String> {
    let states: Vec<Vec<f64>> = ds.trajectories.iter().flat_map(|t| t.states.iter().cloned()).collect();
    let sampler = HullSampler::new(&states).map_err(|e| e.to_string())?;
    let cert_points = sampler.sample(cfg.verify.n_points, cert_seed(seed)).map_err(|e| e.to_string())?;
    let probe = sampler.sample(cfg.criteria.probe_points, seeds::derive(seed, "probe")).map_err(|e| e.to_string())?;
    let policy = cache.get_or_train(&spec.variables, cfg, seed)?;
    let ppo_seed = ppo_seed(seed);
    let eval_at = |field: &dyn VectorField| -> Vec<(Vec<f64>, Vec<f64>)> {
        cert_points.par_iter().map(|z| (z.clone(), field.eval_vec(z))).collect()
    };
    let (pool, cert_pairs, val_mse, fidelity) = match mode {
        Mode::Hybrid if cfg.exact_field => {
            let source = HullPairs { field: spec, sampler };
            let (_, pool, _) =
                ppo_finetune(policy, &source, &cfg.reward, &cfg.ppo, ppo_seed).map_err(|e| e.to_string())?;
            (pool, eval_at(spec), None, None)
        }
        Mode::Hybrid => {
            let train_cfg = TrainConfig { seed: seeds::derive(seed, "train"), ..cfg.train.clone() };
            let (field, report) = train(ds, &train_cfg).map_err(|e| format!("training: {e}"))?;
            let fidelity = field_fidelity(&field, spec, 1000).ok();
            let source = HullPairs { field: &field, sampler };
            let (_, pool, _) =
                ppo_finetune(policy, &source, &cfg.reward, &cfg.ppo, ppo_seed).map_err(|e| e.to_string())?;
            (pool, eval_at(&field), Some(report.final_val_mse), fidelity)
        }
        Mode::Direct => {
            let pairs = direct_mode_pairs(ds);
            if pairs.is_empty() {
                return Err("no finite-difference pairs".into());
            }
            let interp = FdInterpolant::new(pairs.clone(), cfg.direct_k);
            let source = FixedPairs { pairs };
            let (_, pool, _) =
                ppo_finetune(policy, &source, &cfg.reward, &cfg.ppo, ppo_seed).map_err(|e| e.to_string())?;
            (pool, eval_at(&interp), None, None)
        }
    };
    let candidates = pool.top(cfg.criteria.top_k).iter().map(|e| e.expr.clone()).collect();
    Ok(Searched { candidates, cert_pairs, probe, val_mse, fidelity })
}

/// One discovery run. Returns one result per known invariant of the system;
/// every failure is recorded in the results rather than returned.
pub fn run_trial(
    spec: &SystemSpec,
    mode: Mode,
    sigma_rel: f64,
    n_traj: usize,
    seed: u64,
    cfg: &TrialConfig,
    cache: &PretrainCache,
) -> Vec<TrialResult> {
    let start = Instant::now();
    let blank = |label: &str| TrialResult {
        system: spec.name.to_owned(),
        invariant: label.to_owned(),
        mode,
        seed,
        sigma_rel,
        n_traj,
        discovered: None,
        success: false,
        reason: None,
        underfit: false,
        val_mse: None,
        field_fidelity: None,
        verification: None,
        drift: None,
        wall_time_s: 0.0,
    };
    let t_span = cfg.t_span.unwrap_or(spec.default_t_span);
    let searched = generate_dataset(spec, n_traj, t_span, cfg.n_obs, sigma_rel, seeds::derive(seed, "data"))
        .map_err(|e| e.to_string())
        .and_then(|ds| search(spec, mode, &ds, cfg, seed, cache));
    let mut out: Vec<TrialResult> = match searched {
        Err(reason) => spec
            .invariants
            .iter()
            .map(|inv| TrialResult { reason: Some(reason.clone()), ..blank(&inv.label) })
            .collect(),
        Ok(s) => {
            let checked: Vec<Checked> = s.candidates.iter().map(|c| check_candidate(c, spec, &s, cfg)).collect();
            spec.invariants
                .iter()
                .map(|inv| {
                    let mut r = blank(&inv.label);
                    r.val_mse = s.val_mse;
                    r.field_fidelity = s.fidelity;
                    r.underfit = s.val_mse.is_some_and(|m| !(m <= cfg.underfit_mse));
                    adjudicate(&mut r, &inv.expr, &s, &checked, cfg);
                    r
                })
                .collect()
        }
    };
    let secs = start.elapsed().as_secs_f64();
    out.iter_mut().for_each(|r| r.wall_time_s = secs);
    out
}

/// Per-candidate checks that do not depend on the target invariant.
struct Checked {
    report: Result<VerificationReport, String>,
    n_vars: usize,
    drift: Option<f64>,
}

fn check_candidate(expr: &Expr, spec: &SystemSpec, s: &Searched, cfg: &TrialConfig) -> Checked {
    let report = certify_pairs(expr, &s.cert_pairs, cfg.verify.epsilon, cfg.verify.mode).map_err(|e| match e {
        VerifyError::GradientDegenerate { .. } => "degenerate gradient".to_owned(),
        other => other.to_string(),
    });
    let drift = match &report {
        Ok(r) if r.verdict => drift_check(expr, spec, cfg.criteria.drift_trajectories, spec.default_t_span).ok(),
        _ => None,
    };
    Checked { report, n_vars: expr.variables().len(), drift }
}

fn adjudicate(r: &mut TrialResult, truth: &Expr, s: &Searched, checked: &[Checked], cfg: &TrialConfig) {
    if s.candidates.is_empty() {
        r.reason = Some("empty candidate pool".into());
        return;
    }
    let mut first_certified: Option<usize> = None;
    let mut reason = "no candidate certified";
    for (i, (expr, c)) in s.candidates.iter().zip(checked).enumerate() {
        let Ok(report) = &c.report else { continue };
        if !report.verdict {
            continue;
        }
        if c.n_vars < cfg.criteria.min_variables {
            reason = "certified candidates are trivial";
            continue;
        }
        first_certified.get_or_insert(i);
        reason = "certified candidates not equivalent to the target";
        if !equivalent_affine(expr, truth, &s.probe).unwrap_or(false) {
            continue;
        }
        match c.drift {
            Some(d) if d <= cfg.criteria.drift_tau => {
                r.discovered = Some(crate::symbolic::to_prefix(expr).to_string());
                r.verification = Some(report.clone());
                r.drift = Some(d);
                r.success = true;
                r.reason = None;
                return;
            }
            _ => reason = "equivalent candidate drifts on true trajectories",
        }
    }
    if let Some(i) = first_certified {
        r.discovered = Some(crate::symbolic::to_prefix(&s.candidates[i]).to_string());
        r.verification = checked[i].report.as_ref().ok().cloned();
        r.drift = checked[i].drift;
    } else if let Some(Ok(report)) = checked.first().map(|c| &c.report) {
        r.verification = Some(report.clone());
    }
    r.reason = Some(reason.to_owned());
}

/// Wilson score interval for `k` successes in `n` trials, clipped to [0, 1].
pub fn wilson_ci(k: usize, n: usize, z: f64) -> Result<(f64, f64), ExperimentError> {
    if n == 0 || k > n {
        return Err(ExperimentError::Domain(format!("need 0 <= k <= n and n >= 1, got k={k}, n={n}")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(ExperimentError::Domain("z must be positive".into()));
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // exact endpoints where the closed form only rounds to them
    let lo = if k == 0 { 0.0 } else { (center - half).clamp(0.0, 1.0) };
    let hi = if k == n { 1.0 } else { (center + half).clamp(0.0, 1.0) };
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub systems: Vec<String>,
    pub noise_levels: Vec<f64>,
    pub n_trajs: Vec<usize>,
    pub modes: Vec<Mode>,
    pub runs: usize,
    pub base_seed: u64,
    pub trial: TrialConfig,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            systems: vec!["ho".into()],
            noise_levels: vec![0.02],
            n_trajs: vec![10],
            modes: vec![Mode::Hybrid, Mode::Direct],
            runs: 20,
            base_seed: 0,
            trial: TrialConfig::default(),
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(ExperimentError::Domain("runs per cell must be at least 1".into()));
        }
        if self.systems.is_empty() || self.noise_levels.is_empty() || self.n_trajs.is_empty() || self.modes.is_empty() {
            return Err(ExperimentError::Domain("every grid axis needs at least one value".into()));
        }
        if self.noise_levels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ExperimentError::Domain("noise levels must be finite and nonnegative".into()));
        }
        for name in &self.systems {
            system(name)?;
        }
        Ok(())
    }
}

/// One aggregated cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub system: String,
    pub invariant: String,
    pub mode: Mode,
    pub sigma_rel: f64,
    pub n_traj: usize,
    pub runs: usize,
    pub successes: usize,
    pub underfit: usize,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub rows: Vec<CellRow>,
    pub trials: Vec<TrialResult>,
}

struct Job {
    system: usize,
    sigma: usize,
    n_traj: usize,
    mode: Mode,
    run: usize,
}

/// Runs every trial of the grid in parallel and aggregates per
/// (system, invariant, noise, size, mode) in grid order.
pub fn run_grid(grid: &ExperimentGrid) -> Result<GridOutcome, ExperimentError> {
    grid.validate()?;
    let specs: Vec<SystemSpec> = grid.systems.iter().map(|n| system(n)).collect::<Result<_, _>>()?;
    let mut jobs = Vec::new();
    for system in 0..specs.len() {
        for sigma in 0..grid.noise_levels.len() {
            for &n_traj in &grid.n_trajs {
                for &mode in &grid.modes {
                    for run in 0..grid.runs {
                        jobs.push(Job { system, sigma, n_traj, mode, run });
                    }
                }
            }
        }
    }
    let cache = PretrainCache::default();
    let per_job: Vec<Vec<TrialResult>> = jobs
        .par_iter()
        .map(|j| {
            let seed = grid.base_seed + j.run as u64;
            run_trial(&specs[j.system], j.mode, grid.noise_levels[j.sigma], j.n_traj, seed, &grid.trial, &cache)
        })
        .collect();
    let mut rows = Vec::new();
    for (group, chunk) in jobs.chunks(grid.runs).zip(per_job.chunks(grid.runs)) {
        let j = &group[0];
        let spec = &specs[j.system];
        for (i, inv) in spec.invariants.iter().enumerate() {
            let results: Vec<&TrialResult> = chunk.iter().filter_map(|r| r.get(i)).collect();
            let successes = results.iter().filter(|r| r.success).count();
            let (ci_lo, ci_hi) = wilson_ci(successes, grid.runs, Z95)?;
            rows.push(CellRow {
                system: spec.name.to_owned(),
                invariant: inv.label.clone(),
                mode: j.mode,
                sigma_rel: grid.noise_levels[j.sigma],
                n_traj: j.n_traj,
                runs: grid.runs,
                successes,
                underfit: results.iter().filter(|r| r.underfit).count(),
                rate: successes as f64 / grid.runs as f64,
                ci_lo,
                ci_hi,
            });
        }
    }
    Ok(GridOutcome { rows, trials: per_job.into_iter().flatten().collect() })
}

/// Rate against one swept axis, per mode, with trend flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub axis: String,
    pub rows: Vec<CellRow>,
    /// Human-readable notes on violated expected trends.
    pub flags: Vec<String>,
    #[serde(skip)]
    pub trials: Vec<TrialResult>,
}

impl Curve {
    fn axis_value(&self, row: &CellRow) -> f64 {
        if self.axis == "n_traj" {
            row.n_traj as f64
        } else {
            row.sigma_rel
        }
    }

    /// `(axis value, rate)` for one mode and invariant, in axis order.
    pub fn series(&self, mode: Mode, invariant: &str) -> Vec<(f64, f64)> {
        let mut s: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.mode == mode && r.invariant == invariant)
            .map(|r| (self.axis_value(r), r.rate))
            .collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s
    }
}

fn invariant_labels(rows: &[CellRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.invariant) {
            out.push(r.invariant.clone());
        }
    }
    out
}

/// Discovery rate against noise level for one system.
pub fn noise_sweep(
    system_name: &str,
    levels: &[f64],
    n_traj: usize,
    modes: &[Mode],
    runs: usize,
    base_seed: u64,
    trial: &TrialConfig,
) -> Result<Curve, ExperimentError> {
    let grid = ExperimentGrid {
        systems: vec![system_name.to_owned()],
        noise_levels: levels.to_vec(),
        n_trajs: vec![n_traj],
        modes: modes.to_vec(),
        runs,
        base_seed,
        trial: trial.clone(),
    };
    let outcome = run_grid(&grid)?;
    let mut curve = Curve {
        name: format!("noise_{system_name}"),
        axis: "sigma_rel".into(),
        rows: outcome.rows,
        flags: Vec::new(),
        trials: outcome.trials,
    };
    for inv in invariant_labels(&curve.rows) {
        let s = curve.series(Mode::Hybrid, &inv);
        if let (Some(first), Some(last)) = (s.first(), s.last()) {
            if first.1 < last.1 {
                curve.flags.push(format!(
                    "{inv}: hybrid rate at sigma {} ({:.2}) is below the rate at sigma {} ({:.2})",
                    first.0, first.1, last.0, last.1
                ));
            }
        }
    }
    Ok(curve)
}

/// Discovery rate against trajectory count for one system.
pub fn sample_efficiency(
    system_name: &str,
    n_trajs: &[usize],
    sigma_rel: f64,
    modes: &[Mode],
    runs: usize,
    base_seed: u64,
    trial: &TrialConfig,
) -> Result<Curve, ExperimentError> {
    let grid = ExperimentGrid {
        systems: vec![system_name.to_owned()],
        noise_levels: vec![sigma_rel],
        n_trajs: n_trajs.to_vec(),
        modes: modes.to_vec(),
        runs,
        base_seed,
        trial: trial.clone(),
    };
    let outcome = run_grid(&grid)?;
    let mut curve = Curve {
        name: format!("samples_{system_name}"),
        axis: "n_traj".into(),
        rows: outcome.rows,
        flags: Vec::new(),
        trials: outcome.trials,
    };
    for inv in invariant_labels(&curve.rows) {
        let hybrid = curve.series(Mode::Hybrid, &inv);
        let direct = curve.series(Mode::Direct, &inv);
        for (h, d) in hybrid.iter().zip(&direct) {
            if h.1 < d.1 {
                curve.flags.push(format!(
                    "{inv}: direct rate ({:.2}) exceeds hybrid rate ({:.2}) at n_traj {}",
                    d.1, h.1, h.0
                ));
            }
        }
    }
    Ok(curve)
}

const CSV_HEADER: &str = "system,invariant,mode,sigma_rel,n_traj,runs,successes,underfit,rate,ci_lo,ci_hi";

pub fn rows_to_csv(rows: &[CellRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4}",
            r.system,
            r.invariant,
            r.mode.as_str(),
            r.sigma_rel,
            r.n_traj,
            r.runs,
            r.successes,
            r.underfit,
            r.rate,
            r.ci_lo,
            r.ci_hi
        );
    }
    out
}

/// Parses the output of [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<CellRow>, ExperimentError> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(ExperimentError::Domain("grid CSV header does not match".into()));
    }
    let bad = |line: &str| ExperimentError::Domain(format!("malformed grid row: {line}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad(line));
            }
            let mode = match f[2] {
                "hybrid" => Mode::Hybrid,
                "direct" => Mode::Direct,
                _ => return Err(bad(line)),
            };
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
            let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad(line));
            Ok(CellRow {
                system: f[0].to_owned(),
                invariant: f[1].to_owned(),
                mode,
                sigma_rel: num(3)?,
                n_traj: int(4)?,
                runs: int(5)?,
                successes: int(6)?,
                underfit: int(7)?,
                rate: num(8)?,
                ci_lo: num(9)?,
                ci_hi: num(10)?,
            })
        })
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.0}", 100.0 * x)
}

/// Markdown table with one row per (system, invariant, noise, size) and one
/// column per mode; cells read `rate [lo, hi]` in percent, best mode bold.
pub fn rows_to_markdown(rows: &[CellRow]) -> String {
    let mut modes: Vec<Mode> = rows.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();
    let mut out = String::from("| System | Invariant | Noise | Trajectories |");
    for m in &modes {
        let _ = write!(out, " {} |", m.label());
    }
    out.push('\n');
    out.push_str("|---|---|---|---|");
    for _ in &modes {
        out.push_str("---|");
    }
    out.push('\n');
    let mut keys: Vec<(String, String, f64, usize)> = Vec::new();
    for r in rows {
        let k = (r.system.clone(), r.invariant.clone(), r.sigma_rel, r.n_traj);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (sys, inv, sigma, n) in keys {
        let cells: Vec<Option<&CellRow>> = modes
            .iter()
            .map(|m| {
                rows.iter().find(|r| {
                    r.system == sys && r.invariant == inv && r.sigma_rel == sigma && r.n_traj == n && r.mode == *m
                })
            })
            .collect();
        let best = cells.iter().flatten().map(|r| r.rate).fold(f64::NEG_INFINITY, f64::max);
        let title = system(&sys).map(|s| s.title).unwrap_or("?");
        let _ = write!(out, "| {title} | {inv} | {}% | {n} |", pct(sigma));
        for c in cells {
            match c {
                Some(r) => {
                    let text = format!("{} [{}, {}]", pct(r.rate), pct(r.ci_lo), pct(r.ci_hi));
                    if r.rate == best && r.successes > 0 {
                        let _ = write!(out, " **{text}** |");
                    } else {
                        let _ = write!(out, " {text} |");
                    }
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

fn trial_file_name(r: &TrialResult) -> String {
    format!(
        "{}_{}_{}_s{}_n{}_seed{}.json",
        r.system,
        r.invariant.to_lowercase().replace(|c: char| !c.is_ascii_alphanumeric(), ""),
        r.mode.as_str(),
        r.sigma_rel,
        r.n_traj,
        r.seed
    )
}

/// Writes `grid.csv`, `grid.md`, `trials/*.json` and `curves/*.csv` under `dir`.
/// Wall times are left out so reruns are byte-identical.
pub fn emit_report(dir: &Path, grid: &GridOutcome, curves: &[Curve]) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir.join("trials"))?;
    std::fs::write(dir.join("grid.csv"), rows_to_csv(&grid.rows))?;
    let mut md = rows_to_markdown(&grid.rows);
    for c in curves {
        for f in &c.flags {
            let _ = writeln!(md, "\n> flag ({}): {f}", c.name);
        }
    }
    std::fs::write(dir.join("grid.md"), md)?;
    let all_trials = grid.trials.iter().chain(curves.iter().flat_map(|c| c.trials.iter()));
    for r in all_trials {
        std::fs::write(dir.join("trials").join(trial_file_name(r)), serde_json::to_string_pretty(r)? + "\n")?;
    }
    if !curves.is_empty() {
        std::fs::create_dir_all(dir.join("curves"))?;
        for c in curves {
            std::fs::write(dir.join("curves").join(format!("{}.csv", c.name)), rows_to_csv(&c.rows))?;
        }
    }
    Ok(())
}
