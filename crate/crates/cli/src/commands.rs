use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use invariant_forge::catalog::{coordinate_std, generate_dataset_with, system, Dataset, SystemSpec};
use invariant_forge::experiments::{
    cert_seed, emit_report, noise_sweep, ppo_seed, pretrained_policy, rows_from_csv, rows_to_markdown, run_grid,
    sample_efficiency, ExperimentGrid, HullPairs,
};
use invariant_forge::generator::{direct_mode_pairs, ppo_finetune, FixedPairs, PairSource};
use invariant_forge::neural::{load_model, save_model, train as fit};
use invariant_forge::symbolic::{parse_str, to_prefix};
use invariant_forge::verifier::{certify, drift_check, hull_sample, DefectMode, HullSampler, ReportFile};
use invariant_forge::{seeds, VectorField};

use crate::config::RunConfig;
use crate::{DiscoverArgs, ExperimentArgs, ModeArg, ReportArgs, SimulateArgs, TrainArgs, VerifyArgs};

/// Bad flags, config or input files; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<E: fmt::Display>(e: E) -> anyhow::Error {
    UsageError(format!("{e:#}")).into()
}

/// A command that ran to completion; `Failed` exits with status 1.
pub enum Outcome {
    Success,
    Failed(String),
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: Option<&PathBuf>) -> Result<Dataset> {
    let path = path.ok_or_else(|| usage("a dataset file is required (--dataset)"))?;
    if !path.exists() {
        return Err(usage(format!("dataset {} does not exist", path.display())));
    }
    Dataset::load(path).map_err(|e| usage(format!("loading dataset {}: {e}", path.display())))
}

fn all_states(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.trajectories.iter().flat_map(|t| t.states.iter().cloned()).collect()
}

pub fn simulate(mut cfg: RunConfig, a: SimulateArgs) -> Result<Outcome> {
    if let Some(s) = a.system {
        cfg.system = s;
    }
    cfg.noise = a.noise.unwrap_or(cfg.noise);
    cfg.n_traj = a.n_traj.unwrap_or(cfg.n_traj);
    cfg.n_obs = a.n_obs.unwrap_or(cfg.n_obs);
    cfg.t_span = a.t_span.or(cfg.t_span);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let out = a.out.unwrap_or(cfg.output_dir.clone());
    cfg.validate().map_err(usage)?;
    let spec = system(&cfg.system)?;
    let t_span = cfg.t_span.unwrap_or(spec.default_t_span);
    let ds = generate_dataset_with(&spec, cfg.n_traj, t_span, cfg.n_obs, cfg.noise, cfg.seed, &cfg.integrator)
        .map_err(usage)?;
    std::fs::create_dir_all(&out)?;
    ds.save(&out.join("dataset.json"))?;
    std::fs::write(out.join("dataset.csv"), ds.to_csv())?;
    println!("{}: {} trajectories x {} observations, sigma_rel {}", spec.name, cfg.n_traj, cfg.n_obs, cfg.noise);
    for (j, name) in spec.variables.iter().enumerate() {
        let (mut noise, mut clean) = (Vec::new(), Vec::new());
        for t in &ds.trajectories {
            if let Some(c) = &t.clean_states {
                noise.extend(t.states.iter().zip(c).map(|(s, c)| vec![s[j] - c[j]]));
                clean.extend(c.iter().map(|c| vec![c[j]]));
            }
        }
        let ns = coordinate_std(&noise).first().copied().unwrap_or(0.0);
        let cs = coordinate_std(&clean).first().copied().unwrap_or(0.0);
        println!("  {name}: noise std {ns:.4e}, clean std {cs:.4e}, ratio {:.4}", ns / cs.max(1e-300));
    }
    Ok(Outcome::Success)
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<Outcome> {
    cfg.dataset = a.dataset.or(cfg.dataset);
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.train.seed = cfg.seed;
    let out = a.out.unwrap_or(cfg.output_dir.clone());
    let ds = load_dataset(cfg.dataset.as_ref())?;
    cfg.system = ds.system.clone();
    cfg.validate().map_err(usage)?;
    let (field, report) = fit(&ds, &cfg.train)?;
    std::fs::create_dir_all(&out)?;
    save_model(&out.join("model.json"), &field.to_model_file(cfg.seed, report.final_val_mse))?;
    write_json(&out.join("train_report.json"), &report)?;
    println!(
        "{} epochs ({:?}), final validation MSE {:.4e}",
        report.epochs_run(),
        report.stop_reason,
        report.final_val_mse
    );
    if report.final_val_mse <= cfg.train.target_val_mse {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Failed(format!(
            "validation MSE {:.4e} did not reach the target {:.1e}",
            report.final_val_mse, cfg.train.target_val_mse
        )))
    }
}

pub fn discover(mut cfg: RunConfig, a: DiscoverArgs) -> Result<Outcome> {
    cfg.dataset = a.dataset.or(cfg.dataset);
    cfg.model = a.model.or(cfg.model);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.generator.ppo.iterations = a.iterations.unwrap_or(cfg.generator.ppo.iterations);
    let out = a.out.unwrap_or(cfg.output_dir.join("candidates.json"));
    let ds = load_dataset(cfg.dataset.as_ref())?;
    cfg.system = ds.system.clone();
    cfg.validate().map_err(usage)?;
    let spec = system(&cfg.system)?;
    let policy = pretrained_policy(&spec.variables, cfg.generator.policy_hidden, &cfg.generator.pretrain, cfg.seed)?;
    let sampler = HullSampler::new(&all_states(&ds))?;
    let model;
    let source: Box<dyn PairSource + '_> = if a.direct {
        Box::new(FixedPairs { pairs: direct_mode_pairs(&ds) })
    } else if a.exact_field {
        Box::new(HullPairs { field: &spec, sampler })
    } else {
        let path = cfg
            .model
            .as_ref()
            .ok_or_else(|| usage("a model file is required (--model), or pass --exact-field or --direct"))?;
        model = load_model(path).map_err(usage)?.0;
        Box::new(HullPairs { field: &model, sampler })
    };
    let (_, pool, _) =
        ppo_finetune(policy, source.as_ref(), &cfg.generator.reward, &cfg.generator.ppo, ppo_seed(cfg.seed))?;
    let mode = if a.direct { "direct" } else { "hybrid" };
    let records = pool.records(cfg.seed, mode);
    write_json(&out, &records)?;
    for r in records.iter().take(5) {
        println!("{:.4}  err {:.3e}  {}", r.reward, r.err, r.expr_prefix);
    }
    Ok(Outcome::Success)
}

fn fingerprint(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

const EXACT_EPSILON: f64 = 1e-3;

pub fn verify(mut cfg: RunConfig, a: VerifyArgs) -> Result<Outcome> {
    cfg.dataset = a.dataset.or(cfg.dataset);
    cfg.model = a.model.or(cfg.model);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    // the configured tolerance is tuned for fitted networks; an exact field
    // should satisfy a true invariant to rounding
    if let Some(e) = a.epsilon.or(a.exact_field.then_some(EXACT_EPSILON)) {
        cfg.verifier.epsilon = e;
    }
    if let Some(m) = a.mode {
        cfg.verifier.mode = match m {
            ModeArg::Raw => DefectMode::Raw,
            ModeArg::Normalized => DefectMode::Normalized,
        };
    }
    cfg.verifier.n_points = a.n.unwrap_or(cfg.verifier.n_points);
    let ds = match &cfg.dataset {
        Some(_) => Some(load_dataset(cfg.dataset.as_ref())?),
        None => None,
    };
    if let Some(s) = a.system.or(ds.as_ref().map(|d| d.system.clone())) {
        cfg.system = s;
    }
    cfg.validate().map_err(usage)?;
    let spec: SystemSpec = system(&cfg.system)?;
    let expr = parse_str(&a.expr, &spec.variables).map_err(|e| usage(format!("expression: {e}")))?;
    let points = match &ds {
        Some(ds) => hull_sample(&all_states(ds), cfg.verifier.n_points, cert_seed(cfg.seed))?,
        None if a.exact_field => {
            let mut rng = seeds::stream(cert_seed(cfg.seed), "verify-box");
            (0..cfg.verifier.n_points).map(|_| spec.sampling_box.sample(&mut rng)).collect()
        }
        None => return Err(usage("a dataset is required unless --exact-field is given")),
    };
    let (field, field_fingerprint): (Box<dyn VectorField>, String) = if a.exact_field {
        (Box::new(spec.clone()), format!("exact:{}", spec.name))
    } else {
        let path = cfg.model.clone().ok_or_else(|| usage("a model file is required (--model) or --exact-field"))?;
        (Box::new(load_model(&path).map_err(usage)?.0), fingerprint(&path)?)
    };
    let report = match certify(&expr, field.as_ref(), &points, cfg.verifier.epsilon, cfg.verifier.mode) {
        Ok(r) => r,
        Err(e) => return Ok(Outcome::Failed(format!("not certified: {e}"))),
    };
    let drift = if a.drift { Some(drift_check(&expr, &spec, 10, spec.default_t_span)?) } else { None };
    let file = ReportFile { expr_prefix: to_prefix(&expr).to_string(), field_fingerprint, report, drift };
    let out = a.out.unwrap_or(cfg.output_dir.join("verify_report.json"));
    write_json(&out, &file)?;
    println!(
        "max defect {:.3e}, mean {:.3e} ({:?}, epsilon {:.1e}): {}",
        file.report.max_defect,
        file.report.mean_defect,
        file.report.mode,
        file.report.epsilon,
        if file.report.verdict { "pass" } else { "fail" }
    );
    if let Some(d) = drift {
        println!("drift along true trajectories {d:.3e}");
    }
    let tau = cfg.experiment.criteria.drift_tau;
    match (file.report.verdict, drift) {
        (false, _) => Ok(Outcome::Failed("certification failed".into())),
        (true, Some(d)) if d > tau => Ok(Outcome::Failed(format!("drift {d:.3e} exceeds {tau:.1e}"))),
        _ => Ok(Outcome::Success),
    }
}

pub fn experiment(mut cfg: RunConfig, a: ExperimentArgs) -> Result<Outcome> {
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.experiment.runs = a.runs.unwrap_or(cfg.experiment.runs);
    let out = a.out.unwrap_or(cfg.output_dir.clone());
    cfg.validate().map_err(usage)?;
    let e = &cfg.experiment;
    let trial = cfg.trial();
    let grid = ExperimentGrid {
        systems: e.systems.clone(),
        noise_levels: e.noise_levels.clone(),
        n_trajs: e.n_trajs.clone(),
        modes: e.modes.clone(),
        runs: e.runs,
        base_seed: cfg.seed,
        trial: trial.clone(),
    };
    grid.validate().map_err(usage)?;
    let outcome = run_grid(&grid)?;
    let mut curves = Vec::new();
    for name in &e.systems {
        if let Some(levels) = &e.noise_sweep {
            curves.push(noise_sweep(name, levels, cfg.n_traj, &e.modes, e.runs, cfg.seed, &trial)?);
        }
        if let Some(counts) = &e.sample_efficiency {
            curves.push(sample_efficiency(name, counts, cfg.noise, &e.modes, e.runs, cfg.seed, &trial)?);
        }
    }
    emit_report(&out, &outcome, &curves)?;
    print!("{}", rows_to_markdown(&outcome.rows));
    for c in &curves {
        for f in &c.flags {
            println!("flag ({}): {f}", c.name);
        }
    }
    let failed = outcome.trials.iter().filter(|t| t.reason.is_some() && !t.success).count();
    println!("{} trials, {} without success; results in {}", outcome.trials.len(), failed, out.display());
    Ok(Outcome::Success)
}

pub fn report(a: ReportArgs) -> Result<Outcome> {
    let path = a.results.join("grid.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let rows = rows_from_csv(&text).map_err(usage)?;
    let md = rows_to_markdown(&rows);
    std::fs::write(a.results.join("grid.md"), &md)?;
    print!("{md}");
    Ok(Outcome::Success)
}
