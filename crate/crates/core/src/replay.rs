//! Experience replay pool of scored, valid episodes.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::psv::{PsvTable, ShapedRewards};

pub const DEFAULT_CAPACITY: usize = 1000;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry<S> {
    /// Action ids including the final EOS.
    pub actions: Vec<usize>,
    pub smiles: String,
    pub score: f64,
    pub rewards: ShapedRewards,
    pub table: PsvTable,
    /// Distributions the actions were sampled from.
    pub prior: Vec<Vec<S>>,
    pub epoch: usize,
}

#[derive(Serialize)]
struct DumpLine<'a> {
    smiles: &'a str,
    score: f64,
    epoch: usize,
}

/// Fixed-capacity pool, deduplicated by token sequence and kept sorted by
/// score (highest first; ties keep insertion order).
#[derive(Debug, Clone)]
pub struct ReplayPool<S> {
    capacity: usize,
    entries: Vec<PoolEntry<S>>,
    keys: HashSet<Vec<usize>>,
    duplicates: u64,
}

impl<S> ReplayPool<S> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: Vec::new(), keys: HashSet::new(), duplicates: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rejected inserts of a sequence already in the pool.
    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn entries(&self) -> &[PoolEntry<S>] {
        &self.entries
    }

    pub fn contains(&self, actions: &[usize]) -> bool {
        self.keys.contains(actions)
    }

    pub fn min_score(&self) -> Option<f64> {
        self.entries.last().map(|e| e.score)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.entries.first().map(|e| e.score)
    }

    /// Mean of the `k` best scores; missing entries count as 0.
    pub fn top_k_mean(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.entries.iter().take(k).map(|e| e.score).sum::<f64>() / k as f64
    }

    pub fn insert(&mut self, entry: PoolEntry<S>) -> bool {
        if self.keys.contains(&entry.actions) {
            self.duplicates += 1;
            return false;
        }
        if self.capacity == 0 {
            return false;
        }
        if self.entries.len() >= self.capacity {
            match self.min_score() {
                Some(min) if entry.score > min => {
                    let evicted = self.entries.pop().expect("pool is full");
                    self.keys.remove(&evicted.actions);
                }
                _ => return false,
            }
        }
        let at = self.entries.partition_point(|e| e.score >= entry.score);
        self.keys.insert(entry.actions.clone());
        self.entries.insert(at, entry);
        true
    }

    /// Uniform draw: without replacement when `batch_size <= len`, with
    /// replacement otherwise.
    pub fn sample_batch(&self, batch_size: usize, seed: u64) -> Result<Vec<&PoolEntry<S>>, ReplayError> {
        if self.entries.is_empty() {
            return Err(ReplayError::EmptyPool);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.entries.len();
        Ok(if batch_size <= n {
            index::sample(&mut rng, n, batch_size).into_iter().map(|i| &self.entries[i]).collect()
        } else {
            (0..batch_size).map(|_| &self.entries[rng.gen_range(0..n)]).collect()
        })
    }

    /// One JSON object per line: smiles, score, epoch.
    pub fn dump_jsonl(&self, mut w: impl Write) -> Result<(), ReplayError> {
        for e in &self.entries {
            let line = DumpLine { smiles: &e.smiles, score: e.score, epoch: e.epoch };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psv::{build_table, shaped_rewards};
    use crate::vocab::Vocabulary;

    fn entry(v: &Vocabulary, smiles: &str, score: f64) -> PoolEntry<f64> {
        let mut actions = v.encode(smiles).unwrap();
        actions.push(v.eos_id());
        let table = build_table(&actions, v, 1).unwrap();
        let rewards = shaped_rewards(&table, score, actions.len() - 1);
        PoolEntry { actions, smiles: smiles.into(), score, rewards, table, prior: Vec::new(), epoch: 0 }
    }

    #[test]
    fn duplicate_insert_is_counted() {
        let v = Vocabulary::default();
        let mut pool = ReplayPool::new(10);
        assert!(pool.insert(entry(&v, "CCO", 0.5)));
        assert!(!pool.insert(entry(&v, "CCO", 0.9)));
        assert_eq!(pool.duplicates(), 1);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.best_score(), Some(0.5));
    }

    #[test]
    fn eviction_rules() {
        let v = Vocabulary::default();
        let mut pool = ReplayPool::new(2);
        pool.insert(entry(&v, "CC", 0.3));
        pool.insert(entry(&v, "CCC", 0.6));
        assert!(!pool.insert(entry(&v, "CCCC", 0.2)));
        assert!(!pool.insert(entry(&v, "CCCCC", 0.3)));
        assert!(pool.insert(entry(&v, "CCCCCC", 0.7)));
        let scores: Vec<f64> = pool.entries().iter().map(|e| e.score).collect();
        assert_eq!(scores, [0.7, 0.6]);
        // the evicted sequence may come back
        assert!(!pool.contains(&entry(&v, "CC", 0.0).actions));
    }

    #[test]
    fn batches() {
        let v = Vocabulary::default();
        let mut pool = ReplayPool::new(10);
        for (i, s) in ["C", "CC", "CCC", "CCCC"].iter().enumerate() {
            pool.insert(entry(&v, s, i as f64 / 10.0));
        }
        let all = pool.sample_batch(4, 1).unwrap();
        let mut names: Vec<&str> = all.iter().map(|e| e.smiles.as_str()).collect();
        names.sort();
        assert_eq!(names, ["C", "CC", "CCC", "CCCC"]);
        let a: Vec<&str> = pool.sample_batch(3, 7).unwrap().iter().map(|e| e.smiles.as_str()).collect();
        let b: Vec<&str> = pool.sample_batch(3, 7).unwrap().iter().map(|e| e.smiles.as_str()).collect();
        assert_eq!(a, b);
        assert_eq!(pool.sample_batch(9, 0).unwrap().len(), 9);
        assert!(matches!(ReplayPool::<f64>::new(3).sample_batch(1, 0), Err(ReplayError::EmptyPool)));
    }

    #[test]
    fn two_entry_frequencies() {
        let v = Vocabulary::default();
        let mut pool = ReplayPool::new(2);
        pool.insert(entry(&v, "CO", 0.1));
        pool.insert(entry(&v, "CN", 0.2));
        let n = 10_000;
        let hits = (0..n)
            .filter(|&s| pool.sample_batch(1, s).unwrap()[0].smiles == "CO")
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn top_k_and_dump() {
        let v = Vocabulary::default();
        let mut pool = ReplayPool::new(10);
        pool.insert(entry(&v, "CC", 1.0));
        pool.insert(entry(&v, "CCC", 0.5));
        assert_eq!(pool.top_k_mean(2), 0.75);
        assert_eq!(pool.top_k_mean(10), 0.15);
        let mut out = Vec::new();
        pool.dump_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"smiles":"CC","score":1.0,"epoch":0}"#);
    }
}
