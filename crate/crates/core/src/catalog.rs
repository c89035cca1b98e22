//! Benchmark systems with closed-form fields and known invariants, and noisy
//! dataset generation.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrators::{integrate, IntegrateError, IntegratorConfig, VectorField};
use crate::seeds;
use crate::spatial::BoundingBox;
use crate::symbolic::{evaluate_gradient, grad_symbolic, parse_str, Expr};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown system `{name}`; known systems: {known}")]
    UnknownSystem { name: String, known: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("initial-condition rejection sampling exhausted after {0} draws")]
    RejectionExhausted(usize),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("dataset file: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    HarmonicOscillator,
    Pendulum,
    Kepler,
    Lorenz,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invariant {
    pub label: String,
    pub expr: Expr,
}

/// A named autonomous system. Kepler uses GM = 1 and unit reduced mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub name: &'static str,
    pub title: &'static str,
    pub variables: Vec<String>,
    pub params: Vec<(&'static str, f64)>,
    pub invariants: Vec<Invariant>,
    pub sampling_box: BoundingBox,
    pub default_t_span: f64,
}

const LORENZ_SIGMA: f64 = 10.0;
const LORENZ_RHO: f64 = 28.0;
const LORENZ_BETA: f64 = 8.0 / 3.0;

const KEPLER_R_MIN: f64 = 0.5;
const KEPLER_R_MAX: f64 = 2.0;
const KEPLER_PERICENTER_MIN: f64 = 0.25;
const MAX_REJECTIONS: usize = 100_000;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn invariant(label: &str, prefix: &str, vars: &[String]) -> Invariant {
    Invariant { label: label.to_owned(), expr: parse_str(prefix, vars).expect("catalog invariant must parse") }
}

impl SystemSpec {
    pub fn harmonic_oscillator() -> Self {
        let vars = names(&["x", "v"]);
        SystemSpec {
            kind: SystemKind::HarmonicOscillator,
            name: "ho",
            title: "Harmonic Oscillator",
            invariants: vec![invariant("Energy", "mul 0.5 add mul x x mul v v", &vars)],
            variables: vars,
            params: vec![],
            sampling_box: BoundingBox::new(vec![-1.5, -1.5], vec![1.5, 1.5]),
            default_t_span: 10.0,
        }
    }

    pub fn pendulum() -> Self {
        let vars = names(&["q", "p"]);
        SystemSpec {
            kind: SystemKind::Pendulum,
            name: "pendulum",
            title: "Pendulum",
            invariants: vec![invariant("Energy", "sub mul 0.5 mul p p cos q", &vars)],
            variables: vars,
            params: vec![],
            // Every state in this box has E < 1, so all orbits librate.
            sampling_box: BoundingBox::new(vec![-2.0, -1.0], vec![2.0, 1.0]),
            default_t_span: 10.0,
        }
    }

    pub fn kepler() -> Self {
        let vars = names(&["x", "y", "vx", "vy"]);
        SystemSpec {
            kind: SystemKind::Kepler,
            name: "kepler",
            title: "Kepler Problem",
            invariants: vec![
                invariant("Energy", "sub mul 0.5 add mul vx vx mul vy vy pow add mul x x mul y y -0.5", &vars),
                invariant("Ang. Mom.", "sub mul x vy mul y vx", &vars),
            ],
            variables: vars,
            params: vec![("gm", 1.0)],
            sampling_box: BoundingBox::new(vec![-2.0, -2.0, -1.2, -1.2], vec![2.0, 2.0, 1.2, 1.2]),
            default_t_span: 20.0,
        }
    }

    /// Dissipative; no known first integrals at the classical parameters.
    pub fn lorenz() -> Self {
        SystemSpec {
            kind: SystemKind::Lorenz,
            name: "lorenz",
            title: "Lorenz",
            variables: names(&["x", "y", "z"]),
            params: vec![("sigma", LORENZ_SIGMA), ("rho", LORENZ_RHO), ("beta", LORENZ_BETA)],
            invariants: vec![],
            sampling_box: BoundingBox::new(vec![-15.0, -20.0, 5.0], vec![15.0, 20.0, 40.0]),
            default_t_span: 5.0,
        }
    }

    pub fn invariant(&self, label: &str) -> Option<&Invariant> {
        self.invariants.iter().find(|i| i.label == label)
    }

    /// Largest normalized defect `|grad K . f| / (|grad K| |f| + 1e-12)` of any
    /// known invariant over `n` sampled states.
    pub fn invariant_residual(&self, n: usize, seed: u64) -> f64 {
        let d = self.dim();
        let states = sample_initial_conditions(self, n, seed).expect("catalog sampling box is valid");
        let mut worst: f64 = 0.0;
        let mut g = vec![0.0; d];
        let mut f = vec![0.0; d];
        for inv in &self.invariants {
            let grad = grad_symbolic(&inv.expr, d);
            for z in &states {
                evaluate_gradient(&grad, z, &mut g).expect("invariant defined on sampling region");
                self.eval(z, &mut f);
                let dot: f64 = g.iter().zip(&f).map(|(a, b)| a * b).sum();
                let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
                let fnorm = f.iter().map(|a| a * a).sum::<f64>().sqrt();
                worst = worst.max(dot.abs() / (gn * fnorm + 1e-12));
            }
        }
        worst
    }

    fn accept_initial(&self, z: &[f64]) -> bool {
        match self.kind {
            SystemKind::Kepler => {
                let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
                let energy = 0.5 * (z[2] * z[2] + z[3] * z[3]) - 1.0 / r;
                if !(KEPLER_R_MIN..=KEPLER_R_MAX).contains(&r) || energy >= 0.0 {
                    return false;
                }
                let l = z[0] * z[3] - z[1] * z[2];
                let ecc = (1.0 + 2.0 * energy * l * l).max(0.0).sqrt();
                let semi_major = -1.0 / (2.0 * energy);
                semi_major * (1.0 - ecc) >= KEPLER_PERICENTER_MIN
            }
            _ => true,
        }
    }
}

impl VectorField for SystemSpec {
    fn dim(&self) -> usize {
        self.variables.len()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::HarmonicOscillator => {
                out[0] = z[1];
                out[1] = -z[0];
            }
            SystemKind::Pendulum => {
                out[0] = z[1];
                out[1] = -z[0].sin();
            }
            SystemKind::Kepler => {
                let r2 = z[0] * z[0] + z[1] * z[1];
                let inv_r3 = 1.0 / (r2 * r2.sqrt());
                out[0] = z[2];
                out[1] = z[3];
                out[2] = -z[0] * inv_r3;
                out[3] = -z[1] * inv_r3;
            }
            SystemKind::Lorenz => {
                out[0] = LORENZ_SIGMA * (z[1] - z[0]);
                out[1] = z[0] * (LORENZ_RHO - z[2]) - z[1];
                out[2] = z[0] * z[1] - LORENZ_BETA * z[2];
            }
        }
    }
}

impl fmt::Display for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}, d={})", self.name, self.title, self.dim())
    }
}

pub fn catalog() -> Vec<SystemSpec> {
    let systems =
        vec![SystemSpec::harmonic_oscillator(), SystemSpec::pendulum(), SystemSpec::kepler(), SystemSpec::lorenz()];
    debug_assert!(systems.iter().all(|s| s.invariant_residual(200, 0) <= 1e-10));
    systems
}

pub fn system(name: &str) -> Result<SystemSpec, CatalogError> {
    let all = catalog();
    let known = all.iter().map(|s| s.name).collect::<Vec<_>>().join(", ");
    all.into_iter().find(|s| s.name == name).ok_or_else(|| CatalogError::UnknownSystem { name: name.to_owned(), known })
}

/// Uniform draws from the system's sampling box, with Kepler states kept only
/// for bound orbits starting at radius in [0.5, 2] whose pericenter stays at or
/// above 0.25.
pub fn sample_initial_conditions(spec: &SystemSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, CatalogError> {
    if n == 0 {
        return Err(CatalogError::InvalidArgument("need at least one initial condition".into()));
    }
    let mut rng = seeds::stream(seed, "initial-conditions");
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        let z = spec.sampling_box.sample(&mut rng);
        draws += 1;
        if spec.accept_initial(&z) {
            out.push(z);
        } else if draws >= MAX_REJECTIONS * n {
            return Err(CatalogError::RejectionExhausted(draws));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(skip)]
    pub system: String,
    #[serde(skip)]
    pub sigma_rel: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_states: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let bad = |m: &str| Err(CatalogError::InvalidArgument(m.to_owned()));
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("trajectory times must be strictly increasing");
        }
        if self.states.len() != self.times.len() {
            return bad("state rows must match times");
        }
        if self.states.iter().flatten().any(|v| !v.is_finite()) {
            return bad("trajectory states must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub system: String,
    pub sigma_rel: f64,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
    pub split: Split,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Trajectory> {
        self.split.train.iter().map(|&i| &self.trajectories[i])
    }

    pub fn val(&self) -> impl Iterator<Item = &Trajectory> {
        self.split.val.iter().map(|&i| &self.trajectories[i])
    }

    pub fn dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::dim)
    }

    pub fn train_states(&self) -> Vec<Vec<f64>> {
        self.train().flat_map(|t| t.states.iter().cloned()).collect()
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let n = self.trajectories.len();
        let mut seen = vec![false; n];
        for &i in self.split.train.iter().chain(&self.split.val) {
            if i >= n || seen[i] {
                return Err(CatalogError::InvalidArgument("split must partition trajectories".into()));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) || self.split.train.is_empty() || self.split.val.is_empty() {
            return Err(CatalogError::InvalidArgument("split must cover trajectories, one per side".into()));
        }
        self.trajectories.iter().try_for_each(Trajectory::validate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let mut ds: Dataset = serde_json::from_str(text)?;
        for t in &mut ds.trajectories {
            t.system = ds.system.clone();
            t.sigma_rel = ds.sigma_rel;
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One row per observation: `traj_id,t,z_0,..,z_{d-1}`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("traj_id,t");
        for j in 0..d {
            out.push_str(&format!(",z_{j}"));
        }
        out.push('\n');
        for (id, traj) in self.trajectories.iter().enumerate() {
            for (t, z) in traj.times.iter().zip(&traj.states) {
                out.push_str(&format!("{id},{t}"));
                for v in z {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Per-coordinate population standard deviation of a set of states.
pub fn coordinate_std(states: &[Vec<f64>]) -> Vec<f64> {
    let d = states.first().map_or(0, Vec::len);
    let n = states.len() as f64;
    (0..d)
        .map(|j| {
            let mean = states.iter().map(|z| z[j]).sum::<f64>() / n;
            (states.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Simulates `n_traj` trajectories at irregular observation times and adds
/// Gaussian noise with per-coordinate standard deviation `sigma_rel * s_j`,
/// where `s_j` is the clean trajectory's own standard deviation in coordinate j.
pub fn generate_dataset(
    spec: &SystemSpec,
    n_traj: usize,
    t_span: f64,
    n_obs: usize,
    sigma_rel: f64,
    seed: u64,
) -> Result<Dataset, CatalogError> {
    generate_dataset_with(spec, n_traj, t_span, n_obs, sigma_rel, seed, &IntegratorConfig::default())
}

/// As [`generate_dataset`], integrating with `cfg`.
pub fn generate_dataset_with(
    spec: &SystemSpec,
    n_traj: usize,
    t_span: f64,
    n_obs: usize,
    sigma_rel: f64,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<Dataset, CatalogError> {
    if n_obs < 8 {
        return Err(CatalogError::InvalidArgument("need at least 8 observations".into()));
    }
    if !(sigma_rel >= 0.0) || !sigma_rel.is_finite() {
        return Err(CatalogError::InvalidArgument("noise level must be nonnegative".into()));
    }
    if n_traj < 2 {
        return Err(CatalogError::InvalidArgument("need at least two trajectories for a split".into()));
    }
    if !(t_span > 0.0) {
        return Err(CatalogError::InvalidArgument("time span must be positive".into()));
    }
    let ics = sample_initial_conditions(spec, n_traj, seeds::derive(seed, "dataset-ic"))?;
    let mut trajectories = Vec::with_capacity(n_traj);
    for (k, z0) in ics.iter().enumerate() {
        let mut rng = seeds::rng(seeds::derive_indexed(seed, "dataset-traj", k as u64));
        let times = observation_times(&mut rng, t_span, n_obs);
        let mut grid = Vec::with_capacity(n_obs + 1);
        grid.push(0.0);
        grid.extend_from_slice(&times);
        let mut clean = integrate(spec, z0, &grid, cfg)?;
        clean.remove(0);
        let std = coordinate_std(&clean);
        let states = if sigma_rel == 0.0 {
            clean.clone()
        } else {
            clean
                .iter()
                .map(|z| {
                    z.iter().zip(&std).map(|(v, s)| v + sigma_rel * s * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect()
        };
        trajectories.push(Trajectory {
            system: spec.name.to_owned(),
            sigma_rel,
            times,
            states,
            clean_states: Some(clean),
        });
    }
    let mut order: Vec<usize> = (0..n_traj).collect();
    order.shuffle(&mut seeds::stream(seed, "dataset-split"));
    let n_val = ((n_traj as f64 * 0.2).round() as usize).clamp(1, n_traj - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let ds = Dataset { system: spec.name.to_owned(), sigma_rel, seed, trajectories, split: Split { train, val } };
    ds.validate()?;
    Ok(ds)
}

/// Sorted uniform draws in (0, t_span], strictly increasing.
fn observation_times<R: Rng>(rng: &mut R, t_span: f64, n: usize) -> Vec<f64> {
    loop {
        let mut t: Vec<f64> = (0..n).map(|_| t_span * (1.0 - rng.random::<f64>())).collect();
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[1] > w[0]) {
            return t;
        }
    }
}
