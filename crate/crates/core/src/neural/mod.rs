//! Learned vector fields: an MLP with hand-written reverse mode, trained by
//! differentiating through fixed-step RK4 rollouts of short trajectory windows.

mod mlp;
mod train;

use std::path::Path;

use thiserror::Error;

pub use mlp::{swish, swish_grad, Arch, ForwardCache, LayerFile, MlpField, ModelFile, TrainMeta};
pub use train::{
    grad_params, normalization_weights, rollout, segments_of, train, validation_mse, Segment, StopReason, TrainConfig,
    TrainReport,
};

use crate::catalog::{sample_initial_conditions, CatalogError, SystemSpec};
use crate::integrators::VectorField;
use crate::seeds;
use crate::spatial::BoundingBox;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("non-finite value in network evaluation or gradient")]
    NonFinite,
    #[error("dataset has no usable training or validation data")]
    EmptyDataset,
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// `n` states uniform in `region` paired with the field's value there.
pub fn sample_pairs<F: VectorField + ?Sized>(
    field: &F,
    region: &BoundingBox,
    n: usize,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = seeds::stream(seed, "field-pairs");
    (0..n)
        .map(|_| {
            let z = region.sample(&mut rng);
            let f = field.eval_vec(&z);
            (z, f)
        })
        .collect()
}

/// Mean relative squared error `|f_hat - f|^2 / (|f|^2 + 1e-12)` over `n`
/// states drawn like initial conditions of `spec`.
pub fn field_fidelity<F: VectorField + ?Sized>(field: &F, spec: &SystemSpec, n: usize) -> Result<f64, NeuralError> {
    if n == 0 {
        return Err(NeuralError::InvalidConfig("fidelity needs at least one state".into()));
    }
    let states = sample_initial_conditions(spec, n, seeds::derive(0, "field-fidelity"))?;
    let total: f64 = states
        .iter()
        .map(|z| {
            let a = field.eval_vec(z);
            let b = spec.eval_vec(z);
            let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            let den: f64 = b.iter().map(|y| y * y).sum();
            num / (den + 1e-12)
        })
        .sum();
    Ok(total / n as f64)
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<(), NeuralError> {
    std::fs::write(path, serde_json::to_string_pretty(file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(MlpField, ModelFile), NeuralError> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok((file.clone().into_field()?, file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::system;

    #[test]
    fn pairs_match_forward() {
        let f = MlpField::random(vec![2, 8, 2], 0).unwrap();
        let b = BoundingBox::new(vec![-1.0, 0.0], vec![1.0, 3.0]);
        let pairs = sample_pairs(&f, &b, 100, 4);
        assert_eq!(pairs.len(), 100);
        for (z, fz) in &pairs {
            assert!(b.contains(z));
            assert_eq!(*fz, f.forward(z).unwrap());
        }
        assert_eq!(pairs, sample_pairs(&f, &b, 100, 4));
    }

    #[test]
    fn fidelity_examples() {
        let ho = system("ho").unwrap();
        assert_eq!(field_fidelity(&ho, &ho, 200).unwrap(), 0.0);
        let zero = MlpField::zeros(vec![2, 4, 2]).unwrap();
        let r = field_fidelity(&zero, &ho, 500).unwrap();
        assert!((r - 1.0).abs() < 1e-6, "{r}");
        assert!(field_fidelity(&zero, &ho, 0).is_err());
    }
}
