//! Certification of candidate invariants against a vector field, and drift of
//! a candidate along trajectories of the true system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{sample_initial_conditions, CatalogError, SystemSpec};
use crate::integrators::{integrate, IntegrateError, IntegratorConfig, VectorField};
use crate::seeds;
use crate::spatial::{BoundingBox, GridIndex};
use crate::symbolic::{evaluate, evaluate_gradient, grad_symbolic, Expr, SymbolicError};

pub const DEFAULT_POINTS: usize = 10_000;
/// Membership radius as a fraction of the cloud's bounding-box diagonal.
pub const HULL_RADIUS_FRACTION: f64 = 0.05;
const DEGENERATE_GRAD: f64 = 1e-9;
const MAX_SKIPPED_FRACTION: f64 = 0.01;
const ACCEPTANCE_CHECK_DRAWS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("gradient norm below 1e-9 at {degenerate} of {n_points} points; candidate is trivial")]
    GradientDegenerate { degenerate: usize, n_points: usize },
    #[error("no evaluation points")]
    NoPoints,
    #[error("point cloud has {got} points, need at least {needed}")]
    CloudTooSmall { needed: usize, got: usize },
    #[error("hull sampling accepted {accepted} of {draws} draws")]
    AcceptanceTooLow { accepted: usize, draws: usize },
    #[error("candidate: {0}")]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectMode {
    /// `|grad C . f|`
    Raw,
    /// `|grad C . f| / (|grad C| |f| + 1e-12)`
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_points: usize,
    pub max_defect: f64,
    pub mean_defect: f64,
    pub mode: DefectMode,
    pub epsilon: f64,
    pub verdict: bool,
    pub skipped: usize,
}

/// Rejection sampler over the cloud's bounding box that keeps points within
/// `radius` of some cloud point: a proxy for the region the data covers.
#[derive(Debug, Clone)]
pub struct HullSampler {
    bbox: BoundingBox,
    index: GridIndex,
}

impl HullSampler {
    pub fn new(cloud: &[Vec<f64>]) -> Result<Self, VerifyError> {
        let d = cloud.first().map_or(0, Vec::len);
        if d == 0 || cloud.len() < d + 1 {
            return Err(VerifyError::CloudTooSmall { needed: d.max(1) + 1, got: cloud.len() });
        }
        let bbox = BoundingBox::of_points(cloud).expect("nonempty cloud");
        let radius = (HULL_RADIUS_FRACTION * bbox.diagonal()).max(1e-12);
        Ok(HullSampler { bbox, index: GridIndex::new(cloud.to_vec(), radius) })
    }

    pub fn bounding_box(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn radius(&self) -> f64 {
        self.index.radius()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.bbox.contains(z) && self.index.has_neighbor(z)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, VerifyError> {
        let mut rng = seeds::stream(seed, "hull-sample");
        let mut out = Vec::with_capacity(n);
        let mut draws = 0usize;
        while out.len() < n {
            let z = self.bbox.sample(&mut rng);
            draws += 1;
            if self.index.has_neighbor(&z) {
                out.push(z);
            }
            if draws >= ACCEPTANCE_CHECK_DRAWS && (out.len() as f64) < 0.01 * draws as f64 {
                return Err(VerifyError::AcceptanceTooLow { accepted: out.len(), draws });
            }
        }
        Ok(out)
    }
}

/// `n` points sampled uniformly from the data region of `states`.
pub fn hull_sample(states: &[Vec<f64>], n: usize, seed: u64) -> Result<Vec<Vec<f64>>, VerifyError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    HullSampler::new(states)?.sample(n, seed)
}

/// Bounds the invariance defect of `expr` under `field` over `points`.
pub fn certify<F: VectorField + ?Sized>(
    expr: &Expr,
    field: &F,
    points: &[Vec<f64>],
    epsilon: f64,
    mode: DefectMode,
) -> Result<VerificationReport, VerifyError> {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = points.par_iter().map(|z| (z.clone(), field.eval_vec(z))).collect();
    certify_pairs(expr, &pairs, epsilon, mode)
}

/// As [`certify`], on precomputed `(z, f(z))` pairs.
pub fn certify_pairs(
    expr: &Expr,
    pairs: &[(Vec<f64>, Vec<f64>)],
    epsilon: f64,
    mode: DefectMode,
) -> Result<VerificationReport, VerifyError> {
    if pairs.is_empty() {
        return Err(VerifyError::NoPoints);
    }
    let d = pairs[0].0.len();
    if expr.required_dim() > d {
        return Err(SymbolicError::DimensionMismatch { needed: expr.required_dim(), got: d }.into());
    }
    let grad = grad_symbolic(expr, d);
    // None: skipped; Some((defect, degenerate))
    let per_point: Vec<Option<(f64, bool)>> = pairs
        .par_iter()
        .map(|(z, f)| {
            let mut g = vec![0.0; d];
            evaluate_gradient(&grad, z, &mut g).ok()?;
            if !f.iter().all(|v| v.is_finite()) {
                return None;
            }
            let dot: f64 = g.iter().zip(f).map(|(a, b)| a * b).sum();
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let defect = match mode {
                DefectMode::Raw => dot.abs(),
                DefectMode::Normalized => {
                    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                    dot.abs() / (gn * fnorm + 1e-12)
                }
            };
            Some((defect, gn < DEGENERATE_GRAD))
        })
        .collect();
    let n_points = pairs.len();
    let degenerate = per_point.iter().flatten().filter(|(_, deg)| *deg).count();
    if 2 * degenerate > n_points {
        return Err(VerifyError::GradientDegenerate { degenerate, n_points });
    }
    let mut max_defect = 0.0f64;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut evaluated = 0usize;
    for (defect, _) in per_point.iter().flatten() {
        max_defect = max_defect.max(*defect);
        // Neumaier summation
        let t = sum + defect;
        if sum.abs() >= defect.abs() {
            comp += (sum - t) + defect;
        } else {
            comp += (defect - t) + sum;
        }
        sum = t;
        evaluated += 1;
    }
    let skipped = n_points - evaluated;
    let mean_defect = if evaluated > 0 { ((sum + comp) / evaluated as f64).min(max_defect) } else { 0.0 };
    let verdict = evaluated > 0 && max_defect < epsilon && skipped as f64 <= MAX_SKIPPED_FRACTION * n_points as f64;
    Ok(VerificationReport { n_points, max_defect, mean_defect, mode, epsilon, verdict, skipped })
}

/// Relative drift of `expr` along `n_traj` true-system trajectories over
/// `[0, t_span]`: the largest `|C(z(t)) - C(z(0))|` divided by the range of `C`
/// over all visited states.
pub fn drift_check(expr: &Expr, spec: &SystemSpec, n_traj: usize, t_span: f64) -> Result<f64, VerifyError> {
    const SAMPLES: usize = 200;
    let ics = sample_initial_conditions(spec, n_traj, seeds::derive(0, "drift-check"))?;
    let times: Vec<f64> = (0..=SAMPLES).map(|k| t_span * k as f64 / SAMPLES as f64).collect();
    let cfg = IntegratorConfig::default();
    let values: Vec<Vec<f64>> = ics
        .par_iter()
        .map(|z0| -> Result<Vec<f64>, VerifyError> {
            let states = integrate(spec, z0, &times, &cfg)?;
            Ok(states.iter().map(|z| evaluate(expr, z)).collect::<Result<_, _>>()?)
        })
        .collect::<Result<_, _>>()?;
    let (lo, hi) =
        values.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let worst = values.iter().map(|c| c.iter().map(|v| (v - c[0]).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
    Ok(worst / (hi - lo + 1e-12))
}

/// Persisted form of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub expr_prefix: String,
    /// Hash of the model file, or `exact:<system>` for closed-form fields.
    pub field_fingerprint: String,
    #[serde(flatten)]
    pub report: VerificationReport,
    pub drift: Option<f64>,
}
