use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::symbolic::{complexity, simplify, to_prefix, Expr};

pub const DEFAULT_CAPACITY: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    /// Simplified prefix string; unique within a pool.
    pub key: String,
    pub expr: Expr,
    pub reward: f64,
    pub err: f64,
    pub complexity: usize,
}

/// Best distinct candidates seen so far, sorted by reward (descending), then
/// complexity, then key.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    capacity: usize,
    entries: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn new(capacity: usize) -> Self {
        CandidatePool { capacity: capacity.max(1), entries: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[PoolEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn mean_reward(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.entries.iter().map(|e| e.reward).sum::<f64>() / self.entries.len() as f64
        }
    }

    /// Inserts `expr` (simplified) unless an equal key already holds at least
    /// this reward or the pool is full of strictly better entries. Returns
    /// whether the pool changed.
    pub fn insert(&mut self, expr: &Expr, reward: f64, err: f64) -> bool {
        if !reward.is_finite() {
            return false;
        }
        let simple = simplify(expr);
        let key = to_prefix(&simple).to_string();
        let entry = PoolEntry { complexity: complexity(&simple), key, expr: simple, reward, err };
        if let Some(i) = self.entries.iter().position(|e| e.key == entry.key) {
            if self.entries[i].reward >= reward {
                return false;
            }
            self.entries.remove(i);
        } else if self.entries.len() >= self.capacity {
            let worst = self.entries.last().expect("nonempty when full");
            if order(&entry, worst) != Ordering::Less {
                return false;
            }
            self.entries.pop();
        }
        let at = self.entries.partition_point(|e| order(e, &entry) == Ordering::Less);
        self.entries.insert(at, entry);
        true
    }
}

fn order(a: &PoolEntry, b: &PoolEntry) -> Ordering {
    b.reward.total_cmp(&a.reward).then(a.complexity.cmp(&b.complexity)).then_with(|| a.key.cmp(&b.key))
}

/// One line of a candidates file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub expr_prefix: String,
    pub reward: f64,
    pub err: f64,
    pub complexity: usize,
    pub seed: u64,
    pub mode: String,
}

impl CandidatePool {
    pub fn records(&self, seed: u64, mode: &str) -> Vec<CandidateRecord> {
        self.entries
            .iter()
            .map(|e| CandidateRecord {
                expr_prefix: e.key.clone(),
                reward: e.reward,
                err: e.err,
                complexity: e.complexity,
                seed,
                mode: mode.to_owned(),
            })
            .collect()
    }
}
