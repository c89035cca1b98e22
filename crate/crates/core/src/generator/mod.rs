//! Candidate generation: a small autoregressive token policy over the
//! expression grammar, pre-trained by maximum likelihood on grammar samples and
//! fine-tuned with a clipped policy-gradient objective against the invariance
//! reward. Direct mode feeds the same search with finite differences of raw
//! observations instead of a learned field.

mod direct;
mod policy;
mod pool;
mod reward;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use direct::{direct_mode_pairs, FdInterpolant};
pub use policy::{
    sample_from_policy, softmax_in_place, Decoder, Episode, Policy, PolicyCache, Sample, StepContext, Vocabulary,
    DEFAULT_CONTEXT, END_TOKEN,
};
pub use pool::{CandidatePool, CandidateRecord, PoolEntry, DEFAULT_CAPACITY};
pub use reward::{reward, reward_with_gradient, ErrMode, RewardBreakdown, RewardConfig};

use crate::integrators::VectorField;
use crate::neural::sample_pairs;
use crate::optim::Adam;
use crate::seeds;
use crate::spatial::BoundingBox;
use crate::symbolic::{grad_symbolic, parse_prefix, sample_expr_with, to_prefix, Expr, Grammar, SymbolicError};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("{invalid} of {total} batch points gave a non-finite gradient")]
    TooManyInvalidPoints { invalid: usize, total: usize },
    #[error("empty state-derivative batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub n_corpus: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { n_corpus: 2000, epochs: 6, learning_rate: 3e-3, batch_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_perplexity: f64,
    pub final_perplexity: f64,
    /// Running per-token perplexity during each epoch.
    pub epoch_perplexity: Vec<f64>,
}

fn corpus(policy: &Policy, grammar: &Grammar, n: usize, seed: u64) -> Result<Vec<Vec<usize>>, GeneratorError> {
    let mut rng = seeds::stream(seed, "mle-corpus");
    let end = policy.vocab.end();
    (0..n)
        .map(|_| {
            let e = sample_expr_with(grammar, &mut rng)?;
            let mut ids = to_prefix(&e)
                .iter()
                .map(|t| policy.vocab.id(t).ok_or_else(|| SymbolicError::UnknownToken(t.to_owned())))
                .collect::<Result<Vec<_>, _>>()?;
            ids.push(end);
            Ok(ids)
        })
        .collect()
}

/// Mean negative log-likelihood per token and its gradient over `seqs`.
fn nll_grad(policy: &Policy, seqs: &[&Vec<usize>], want_grad: bool) -> (f64, usize, Vec<f64>) {
    let parts: Vec<(f64, usize, Vec<f64>)> = seqs
        .par_iter()
        .map(|ids| {
            let mut grad = if want_grad { vec![0.0; policy.n_params()] } else { Vec::new() };
            let mut cache = PolicyCache::default();
            let mut nll = 0.0;
            let ctxs = policy.contexts_for(ids);
            for (ctx, &id) in ctxs.iter().zip(ids.iter()) {
                policy.forward(ctx, &mut cache);
                nll -= cache.probs[id].ln();
                if want_grad {
                    let mut dl = cache.probs.clone();
                    dl[id] -= 1.0;
                    policy.backward(ctx, &cache, &dl, &mut grad);
                }
            }
            (nll, ids.len(), grad)
        })
        .collect();
    let mut grad = if want_grad { vec![0.0; policy.n_params()] } else { Vec::new() };
    let (mut nll, mut count) = (0.0, 0);
    for (l, c, g) in parts {
        nll += l;
        count += c;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (nll, count, grad)
}

fn perplexity(policy: &Policy, seqs: &[Vec<usize>]) -> f64 {
    let refs: Vec<&Vec<usize>> = seqs.iter().collect();
    let (nll, count, _) = nll_grad(policy, &refs, false);
    (nll / count as f64).exp()
}

/// Next-token maximum likelihood on `n_corpus` grammar samples, each followed
/// by the end marker.
pub fn pretrain_mle(
    mut policy: Policy,
    grammar: &Grammar,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(Policy, PretrainReport), GeneratorError> {
    if cfg.n_corpus == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(GeneratorError::InvalidConfig("pre-training needs a corpus, batch and rate".into()));
    }
    let seqs = corpus(&policy, grammar, cfg.n_corpus, seed)?;
    let initial_perplexity = perplexity(&policy, &seqs);
    let mut adam = Adam::with_defaults(policy.n_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut rng = seeds::stream(seed, "mle-shuffle");
    let mut epoch_perplexity = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut nll, mut count) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Vec<usize>> = chunk.iter().map(|&i| &seqs[i]).collect();
            let (l, c, mut g) = nll_grad(&policy, &batch, true);
            g.iter_mut().for_each(|v| *v /= c as f64);
            adam.step(&mut policy.params, &g);
            nll += l;
            count += c;
        }
        epoch_perplexity.push((nll / count as f64).exp());
    }
    let final_perplexity = perplexity(&policy, &seqs);
    Ok((policy, PretrainReport { initial_perplexity, final_perplexity, epoch_perplexity }))
}

/// Where the state-derivative pairs for the reward come from.
pub trait PairSource: Sync {
    fn pairs(&self, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)>;
}

/// Uniform states in a region, paired with a field's value.
pub struct FieldSource<'a, F: ?Sized> {
    pub field: &'a F,
    pub region: BoundingBox,
}

impl<F: VectorField + ?Sized> PairSource for FieldSource<'_, F> {
    fn pairs(&self, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        sample_pairs(self.field, &self.region, n, seed)
    }
}

/// Random subsets of a fixed list of pairs.
pub struct FixedPairs {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PairSource for FixedPairs {
    fn pairs(&self, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        if n >= self.pairs.len() {
            return self.pairs.clone();
        }
        let mut rng = seeds::stream(seed, "fixed-pairs");
        let mut picked = index::sample(&mut rng, self.pairs.len(), n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| self.pairs[i].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub iterations: usize,
    pub episodes: usize,
    pub clip: f64,
    pub update_epochs: usize,
    pub learning_rate: f64,
    /// EMA decay of the reward baseline.
    pub baseline_decay: f64,
    pub entropy_coef: f64,
    pub n_pairs: usize,
    pub max_len: usize,
    pub pool_capacity: usize,
    /// Score samples whose gradient vanishes on most of the batch as 0
    /// during fine-tuning.
    pub reject_degenerate: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            iterations: 200,
            episodes: 64,
            clip: 0.2,
            update_epochs: 4,
            // larger steps collapse the policy onto near-invariants such as
            // cos x + cos v before the exact one is sampled
            learning_rate: 5e-5,
            baseline_decay: 0.9,
            entropy_coef: 0.005,
            n_pairs: 256,
            max_len: DEFAULT_CONTEXT,
            pool_capacity: DEFAULT_CAPACITY,
            reject_degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoReport {
    pub mean_reward: Vec<f64>,
    pub complete_fraction: Vec<f64>,
    pub pool_mean_reward: Vec<f64>,
    pub best_reward: Vec<f64>,
}

/// Scores a sampled sequence; `None` for incomplete or unevaluable samples.
fn score(
    policy: &Policy,
    sample: &Sample,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &RewardConfig,
    reject_degenerate: bool,
) -> Option<(Expr, RewardBreakdown)> {
    let Sample::Complete(tokens) = sample else { return None };
    let expr = parse_prefix(&tokens.0, &policy.variables).ok()?;
    let d = pairs.first()?.0.len();
    let grad = grad_symbolic(&expr, d);
    let r = reward_with_gradient(&grad, pairs, cfg).ok()?;
    if reject_degenerate && r.is_degenerate(pairs.len()) {
        return None;
    }
    Some((expr, r))
}

/// Fine-tunes the policy on terminal rewards with a clipped surrogate, with an
/// exponential-moving-average baseline in place of a critic.
pub fn ppo_finetune(
    policy: Policy,
    source: &dyn PairSource,
    reward_cfg: &RewardConfig,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<(Policy, CandidatePool, PpoReport), GeneratorError> {
    let pool = CandidatePool::new(cfg.pool_capacity);
    ppo_finetune_with_pool(policy, source, reward_cfg, cfg, seed, pool)
}

/// As [`ppo_finetune`], starting from an existing pool.
pub fn ppo_finetune_with_pool(
    mut policy: Policy,
    source: &dyn PairSource,
    reward_cfg: &RewardConfig,
    cfg: &PpoConfig,
    seed: u64,
    mut pool: CandidatePool,
) -> Result<(Policy, CandidatePool, PpoReport), GeneratorError> {
    reward_cfg.validate()?;
    if cfg.episodes == 0 || cfg.n_pairs == 0 || cfg.max_len == 0 || !(cfg.clip > 0.0) {
        return Err(GeneratorError::InvalidConfig("PPO needs episodes, pairs, length and clip".into()));
    }
    let mut adam = Adam::with_defaults(policy.n_params(), cfg.learning_rate);
    let mut baseline: Option<f64> = None;
    let mut report = PpoReport::default();
    for it in 0..cfg.iterations {
        let pairs = source.pairs(cfg.n_pairs, seeds::derive_indexed(seed, "ppo-pairs", it as u64));
        if pairs.is_empty() {
            return Err(GeneratorError::EmptyBatch);
        }
        let base_idx = (it * cfg.episodes) as u64;
        let episodes: Vec<Episode> = (0..cfg.episodes)
            .into_par_iter()
            .map(|e| {
                let mut rng = seeds::rng(seeds::derive_indexed(seed, "ppo-episode", base_idx + e as u64));
                policy.sample_episode(cfg.max_len, &mut rng)
            })
            .collect();
        let scored: Vec<Option<(Expr, RewardBreakdown)>> = episodes
            .par_iter()
            .map(|ep| score(&policy, &ep.sample, &pairs, reward_cfg, cfg.reject_degenerate))
            .collect();
        let rewards: Vec<f64> = scored.iter().map(|s| s.as_ref().map_or(0.0, |(_, r)| r.reward)).collect();
        for (expr, r) in scored.iter().flatten() {
            pool.insert(expr, r.reward, r.err);
        }
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let b = *baseline.get_or_insert(mean);
        let advantages: Vec<f64> = rewards.iter().map(|r| r - b).collect();
        baseline = Some(cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * mean);

        let n_tokens: usize = episodes.iter().map(|e| e.ids.len()).sum();
        for _ in 0..cfg.update_epochs {
            let grad = surrogate_grad(&policy, &episodes, &advantages, cfg);
            let scale = -1.0 / n_tokens.max(1) as f64;
            let step: Vec<f64> = grad.iter().map(|g| g * scale).collect();
            adam.step(&mut policy.params, &step);
        }

        report.mean_reward.push(mean);
        report
            .complete_fraction
            .push(episodes.iter().filter(|e| e.sample.is_complete()).count() as f64 / episodes.len() as f64);
        report.pool_mean_reward.push(pool.mean_reward());
        report.best_reward.push(pool.entries().first().map_or(0.0, |e| e.reward));
    }
    Ok((policy, pool, report))
}

/// Gradient (to ascend) of the summed per-token clipped surrogate plus entropy bonus.
fn surrogate_grad(policy: &Policy, episodes: &[Episode], advantages: &[f64], cfg: &PpoConfig) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = episodes
        .par_iter()
        .zip(advantages.par_iter())
        .map(|(ep, &adv)| {
            let mut grad = vec![0.0; policy.n_params()];
            let mut cache = PolicyCache::default();
            for ((ctx, &id), &old) in ep.contexts.iter().zip(&ep.ids).zip(&ep.log_probs) {
                policy.forward(ctx, &mut cache);
                let p = &cache.probs;
                let ratio = (p[id].ln() - old).exp();
                let active = if adv >= 0.0 { ratio < 1.0 + cfg.clip } else { ratio > 1.0 - cfg.clip };
                let c = if active { adv * ratio } else { 0.0 };
                let entropy: f64 = -p.iter().filter(|q| **q > 0.0).map(|q| q * q.ln()).sum::<f64>();
                let dl: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(k, &q)| {
                        let onehot = if k == id { 1.0 } else { 0.0 };
                        let dh = if q > 0.0 { -q * (q.ln() + entropy) } else { 0.0 };
                        c * (onehot - q) + cfg.entropy_coef * dh
                    })
                    .collect();
                policy.backward(ctx, &cache, &dl, &mut grad);
            }
            grad
        })
        .collect();
    let mut grad = vec![0.0; policy.n_params()];
    for g in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::system;
    use crate::symbolic::parse_str;

    fn grammar() -> Grammar {
        Grammar::new(vec!["x".into(), "v".into()])
    }

    #[test]
    fn pretraining_lowers_perplexity_and_is_deterministic() {
        let cfg = PretrainConfig { n_corpus: 1000, epochs: 2, ..Default::default() };
        let p = Policy::new(&grammar(), 32, 1).unwrap();
        let (a, rep) = pretrain_mle(p.clone(), &grammar(), &cfg, 4).unwrap();
        assert!(rep.final_perplexity < rep.initial_perplexity);
        let (b, rep2) = pretrain_mle(p, &grammar(), &cfg, 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(rep, rep2);
    }

    #[test]
    fn constant_attractor_without_gradient_term() {
        let ho = system("ho").unwrap();
        let source = FieldSource { field: &ho, region: ho.sampling_box.clone() };
        let rc = RewardConfig { lambda2: 0.0, ..Default::default() };
        // large enough that nothing is evicted
        let mut pool = CandidatePool::new(64);
        pool.insert(&parse_str("5", &ho.variables).unwrap(), 1.0, 0.0);
        let cfg = PpoConfig { iterations: 3, episodes: 16, ..Default::default() };
        let p = Policy::new(&grammar(), 16, 0).unwrap();
        let (_, pool, _) = ppo_finetune_with_pool(p, &source, &rc, &cfg, 2, pool).unwrap();
        let five = pool.entries().iter().find(|e| e.key == "5").unwrap();
        assert_eq!(five.reward, 1.0);
        assert!(pool.entries()[0].reward <= 1.0);
    }

    #[test]
    fn fixed_pairs_subsets_are_reproducible() {
        let pairs: Vec<_> = (0..50).map(|i| (vec![i as f64], vec![0.0])).collect();
        let src = FixedPairs { pairs };
        let a = src.pairs(10, 3);
        assert_eq!(a.len(), 10);
        assert_eq!(a, src.pairs(10, 3));
        assert_eq!(src.pairs(100, 3).len(), 50);
    }
}
