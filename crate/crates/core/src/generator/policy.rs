use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GeneratorError;
use crate::seeds;
use crate::symbolic::{BinaryOp, Grammar, TokenSeq, UnaryOp};

pub const END_TOKEN: &str = "<end>";
pub const DEFAULT_CONTEXT: usize = 40;
const EMBED: usize = 16;
const OPEN_CAP: usize = 8;
const DEPTH_CAP: usize = 8;

/// Grammar tokens plus the end marker, with each token's arity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    /// `None` for the end marker.
    pub arity: Vec<Option<usize>>,
}

impl Vocabulary {
    pub fn from_grammar(grammar: &Grammar) -> Self {
        let mut tokens = grammar.vocabulary();
        let mut arity: Vec<Option<usize>> = tokens
            .iter()
            .map(|t| {
                if UnaryOp::ALL.iter().any(|op| op.token() == t) {
                    Some(1)
                } else if BinaryOp::ALL.iter().any(|op| op.token() == t) {
                    Some(2)
                } else {
                    Some(0)
                }
            })
            .collect();
        tokens.push(END_TOKEN.to_owned());
        arity.push(None);
        Vocabulary { tokens, arity }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn end(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }
}

/// Structural context of one decoding step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    /// Previous token, parent of the slot being filled, and its left sibling;
    /// `vocab.len()` stands for "none".
    pub prev: usize,
    pub parent: usize,
    pub sibling: usize,
    pub open: usize,
    pub depth: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    parent: usize,
    sibling: usize,
    depth: usize,
    /// Stack index of the right-sibling slot whose `sibling` this slot's token fills.
    feeds: Option<usize>,
}

/// Tracks open argument slots while a prefix sequence is written.
#[derive(Debug, Clone)]
pub struct Decoder {
    none: usize,
    stack: Vec<Slot>,
    prev: usize,
    t: usize,
}

impl Decoder {
    pub fn new(vocab: &Vocabulary) -> Self {
        let none = vocab.len();
        Decoder { none, stack: vec![Slot { parent: none, sibling: none, depth: 0, feeds: None }], prev: none, t: 0 }
    }

    pub fn is_closed(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn open_slots(&self) -> usize {
        self.stack.len()
    }

    pub fn context(&self) -> StepContext {
        let (parent, sibling, depth) = match self.stack.last() {
            Some(s) => (s.parent, s.sibling, s.depth),
            None => (self.none, self.none, 0),
        };
        StepContext { prev: self.prev, parent, sibling, open: self.stack.len(), depth, t: self.t }
    }

    /// Fills the current slot with `token` (of the given arity).
    pub fn push(&mut self, token: usize, arity: usize) {
        self.t += 1;
        self.prev = token;
        let Some(slot) = self.stack.pop() else { return };
        if let Some(i) = slot.feeds {
            self.stack[i].sibling = token;
        }
        let child = |feeds| Slot { parent: token, sibling: self.none, depth: slot.depth + 1, feeds };
        match arity {
            1 => self.stack.push(child(None)),
            2 => {
                let right = self.stack.len();
                self.stack.push(child(None));
                self.stack.push(child(Some(right)));
            }
            _ => {}
        }
    }
}

/// Outcome of one autoregressive sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Complete(TokenSeq),
    /// End marker before closure, or the length cap hit mid-expression.
    Incomplete(TokenSeq),
}

impl Sample {
    pub fn tokens(&self) -> &TokenSeq {
        match self {
            Sample::Complete(t) | Sample::Incomplete(t) => t,
        }
    }

    pub fn is_complete(&self) -> bool {
        matches!(self, Sample::Complete(_))
    }
}

/// One sampled episode with everything a policy update needs.
#[derive(Debug, Clone)]
pub struct Episode {
    pub ids: Vec<usize>,
    pub contexts: Vec<StepContext>,
    pub log_probs: Vec<f64>,
    pub sample: Sample,
}

#[derive(Debug, Clone, Default)]
pub struct PolicyCache {
    x: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Autoregressive next-token scorer: embeddings of the previous, parent and
/// sibling tokens plus open-slot, depth and position features feed a tanh
/// layer, a residual tanh block, and a linear softmax head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub vocab: Vocabulary,
    pub variables: Vec<String>,
    pub hidden: usize,
    pub context: usize,
    pub params: Vec<f64>,
}

struct Layout {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl Policy {
    pub fn new(grammar: &Grammar, hidden: usize, seed: u64) -> Result<Self, GeneratorError> {
        grammar.validate()?;
        if hidden == 0 {
            return Err(GeneratorError::InvalidConfig("policy width must be positive".into()));
        }
        let vocab = Vocabulary::from_grammar(grammar);
        let mut policy = Policy {
            vocab,
            variables: grammar.variables.clone(),
            hidden,
            context: grammar.max_len.clamp(1, DEFAULT_CONTEXT),
            params: Vec::new(),
        };
        let lay = policy.layout();
        policy.params = vec![0.0; lay.total];
        let mut rng = seeds::stream(seed, "policy-init");
        let mut fill = |range: std::ops::Range<usize>, bound: f64, params: &mut Vec<f64>| {
            for p in &mut params[range] {
                *p = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        let n_in = policy.input_dim();
        let v = policy.vocab.len();
        fill(lay.emb..lay.w1, 0.5, &mut policy.params);
        fill(lay.w1..lay.b1, (6.0 / (n_in + hidden) as f64).sqrt(), &mut policy.params);
        fill(lay.w2..lay.b2, (6.0 / (2 * hidden) as f64).sqrt(), &mut policy.params);
        fill(lay.w3..lay.b3, 0.1 * (6.0 / (hidden + v) as f64).sqrt(), &mut policy.params);
        Ok(policy)
    }

    pub fn input_dim(&self) -> usize {
        3 * EMBED + (OPEN_CAP + 1) + DEPTH_CAP + 1
    }

    fn layout(&self) -> Layout {
        let v = self.vocab.len();
        let h = self.hidden;
        let emb = 0;
        let w1 = emb + (v + 1) * EMBED;
        let b1 = w1 + h * self.input_dim();
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + v * h;
        Layout { emb, w1, b1, w2, b2, w3, b3, total: b3 + v }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn features(&self, ctx: &StepContext, x: &mut Vec<f64>) {
        x.clear();
        let lay = self.layout();
        for id in [ctx.prev, ctx.parent, ctx.sibling] {
            let start = lay.emb + id * EMBED;
            x.extend_from_slice(&self.params[start..start + EMBED]);
        }
        let mut open = [0.0; OPEN_CAP + 1];
        open[ctx.open.min(OPEN_CAP)] = 1.0;
        x.extend_from_slice(&open);
        let mut depth = [0.0; DEPTH_CAP];
        depth[ctx.depth.min(DEPTH_CAP - 1)] = 1.0;
        x.extend_from_slice(&depth);
        x.push(ctx.t as f64 / self.context as f64);
    }

    /// Next-token distribution at `ctx`; the cache feeds [`Policy::backward`].
    pub fn forward(&self, ctx: &StepContext, cache: &mut PolicyCache) {
        let lay = self.layout();
        let h = self.hidden;
        let v = self.vocab.len();
        let n_in = self.input_dim();
        self.features(ctx, &mut cache.x);
        let p = &self.params;
        cache.h1.clear();
        for o in 0..h {
            let row = &p[lay.w1 + o * n_in..lay.w1 + (o + 1) * n_in];
            let s: f64 = row.iter().zip(&cache.x).map(|(a, b)| a * b).sum::<f64>() + p[lay.b1 + o];
            cache.h1.push(s.tanh());
        }
        cache.a2.clear();
        cache.h2.clear();
        for o in 0..h {
            let row = &p[lay.w2 + o * h..lay.w2 + (o + 1) * h];
            let s: f64 = row.iter().zip(&cache.h1).map(|(a, b)| a * b).sum::<f64>() + p[lay.b2 + o];
            let a = s.tanh();
            cache.a2.push(a);
            cache.h2.push(cache.h1[o] + a);
        }
        cache.probs.clear();
        for o in 0..v {
            let row = &p[lay.w3 + o * h..lay.w3 + (o + 1) * h];
            let s: f64 = row.iter().zip(&cache.h2).map(|(a, b)| a * b).sum::<f64>() + p[lay.b3 + o];
            cache.probs.push(s);
        }
        softmax_in_place(&mut cache.probs);
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose
    /// gradient with respect to the logits is `dlogits`.
    pub fn backward(&self, ctx: &StepContext, cache: &PolicyCache, dlogits: &[f64], grad: &mut [f64]) {
        let lay = self.layout();
        let h = self.hidden;
        let n_in = self.input_dim();
        let p = &self.params;
        let mut dh2 = vec![0.0; h];
        for (o, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let w = lay.w3 + o * h;
            for i in 0..h {
                dh2[i] += g * p[w + i];
                grad[w + i] += g * cache.h2[i];
            }
            grad[lay.b3 + o] += g;
        }
        let mut dh1 = dh2.clone();
        for o in 0..h {
            let du = dh2[o] * (1.0 - cache.a2[o] * cache.a2[o]);
            if du == 0.0 {
                continue;
            }
            let w = lay.w2 + o * h;
            for i in 0..h {
                dh1[i] += du * p[w + i];
                grad[w + i] += du * cache.h1[i];
            }
            grad[lay.b2 + o] += du;
        }
        let mut dx = vec![0.0; n_in];
        for o in 0..h {
            let du = dh1[o] * (1.0 - cache.h1[o] * cache.h1[o]);
            if du == 0.0 {
                continue;
            }
            let w = lay.w1 + o * n_in;
            for i in 0..n_in {
                dx[i] += du * p[w + i];
                grad[w + i] += du * cache.x[i];
            }
            grad[lay.b1 + o] += du;
        }
        for (slot, id) in [ctx.prev, ctx.parent, ctx.sibling].into_iter().enumerate() {
            let start = lay.emb + id * EMBED;
            for k in 0..EMBED {
                grad[start + k] += dx[slot * EMBED + k];
            }
        }
    }

    /// Teacher-forced contexts for a token id sequence.
    pub fn contexts_for(&self, ids: &[usize]) -> Vec<StepContext> {
        let mut dec = Decoder::new(&self.vocab);
        ids.iter()
            .map(|&id| {
                let ctx = dec.context();
                dec.push(id, self.vocab.arity[id].unwrap_or(0));
                ctx
            })
            .collect()
    }

    /// Samples one sequence of at most `max_len` tokens.
    pub fn sample_episode<R: Rng>(&self, max_len: usize, rng: &mut R) -> Episode {
        let mut dec = Decoder::new(&self.vocab);
        let mut cache = PolicyCache::default();
        let mut ep = Episode {
            ids: Vec::new(),
            contexts: Vec::new(),
            log_probs: Vec::new(),
            sample: Sample::Incomplete(TokenSeq(Vec::new())),
        };
        let end = self.vocab.end();
        let mut complete = false;
        while ep.ids.len() < max_len.min(self.context) {
            let ctx = dec.context();
            self.forward(&ctx, &mut cache);
            let id = sample_categorical(&cache.probs, rng.random::<f64>());
            ep.contexts.push(ctx);
            ep.log_probs.push(cache.probs[id].ln());
            ep.ids.push(id);
            if id == end {
                break;
            }
            dec.push(id, self.vocab.arity[id].unwrap_or(0));
            if dec.is_closed() {
                complete = true;
                break;
            }
        }
        let tokens = TokenSeq(ep.ids.iter().map(|&i| self.vocab.tokens[i].clone()).collect());
        ep.sample = if complete { Sample::Complete(tokens) } else { Sample::Incomplete(tokens) };
        ep
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws one sequence from the policy. Stops at arity closure or the end
/// marker; reaching `max_len` first yields [`Sample::Incomplete`].
pub fn sample_from_policy(policy: &Policy, max_len: usize, seed: u64) -> Sample {
    policy.sample_episode(max_len, &mut seeds::stream(seed, "policy-sample")).sample
}
