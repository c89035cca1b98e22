use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use invariant_forge::catalog::system;
use invariant_forge::experiments::{Mode, SuccessCriteria, TrialConfig, VerifyConfig};
use invariant_forge::generator::{PpoConfig, PretrainConfig, RewardConfig};
use invariant_forge::neural::TrainConfig;
use invariant_forge::IntegratorConfig;

pub const SEED_ENV: &str = "INVARIANT_FORGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub policy_hidden: usize,
    pub pretrain: PretrainConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let t = TrialConfig::default();
        GeneratorConfig { policy_hidden: t.policy_hidden, pretrain: t.pretrain, ppo: t.ppo, reward: t.reward }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub systems: Vec<String>,
    pub noise_levels: Vec<f64>,
    pub n_trajs: Vec<usize>,
    pub modes: Vec<Mode>,
    pub runs: usize,
    /// Extra noise-sweep curve for each listed system.
    pub noise_sweep: Option<Vec<f64>>,
    /// Extra trajectory-count curve for each listed system.
    pub sample_efficiency: Option<Vec<usize>>,
    pub criteria: SuccessCriteria,
    pub underfit_mse: f64,
    pub direct_k: usize,
    pub exact_field: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let t = TrialConfig::default();
        ExperimentSection {
            systems: vec!["ho".into()],
            noise_levels: vec![0.02],
            n_trajs: vec![10],
            modes: vec![Mode::Hybrid, Mode::Direct],
            runs: 20,
            noise_sweep: None,
            sample_efficiency: None,
            criteria: t.criteria,
            underfit_mse: t.underfit_mse,
            direct_k: t.direct_k,
            exact_field: false,
        }
    }
}

/// One JSON document describing a run; command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    pub noise: f64,
    pub n_traj: usize,
    pub n_obs: usize,
    pub t_span: Option<f64>,
    pub integrator: IntegratorConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub verifier: VerifyConfig,
    pub experiment: ExperimentSection,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrialConfig::default();
        RunConfig {
            system: "ho".into(),
            noise: 0.02,
            n_traj: 10,
            n_obs: t.n_obs,
            t_span: None,
            integrator: IntegratorConfig::default(),
            train: t.train,
            generator: GeneratorConfig::default(),
            verifier: t.verify,
            experiment: ExperimentSection::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: None,
            model: None,
        }
    }
}

impl RunConfig {
    /// Reads `path` if given, then applies the seed environment variable.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().with_context(|| format!("{SEED_ENV} must be an unsigned integer"))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        system(&self.system)?;
        for name in &self.experiment.systems {
            system(name)?;
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            bail!("noise must be finite and nonnegative");
        }
        for p in [&self.dataset, &self.model].into_iter().flatten() {
            if !p.exists() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        self.train.validate()?;
        self.generator.reward.validate()?;
        Ok(())
    }

    pub fn trial(&self) -> TrialConfig {
        TrialConfig {
            n_obs: self.n_obs,
            t_span: self.t_span,
            train: self.train.clone(),
            policy_hidden: self.generator.policy_hidden,
            pretrain: self.generator.pretrain.clone(),
            ppo: self.generator.ppo.clone(),
            reward: self.generator.reward.clone(),
            verify: self.verifier.clone(),
            criteria: self.experiment.criteria.clone(),
            direct_k: self.experiment.direct_k,
            underfit_mse: self.experiment.underfit_mse,
            exact_field: self.experiment.exact_field,
        }
    }
}
