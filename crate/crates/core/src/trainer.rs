//! MLE pretraining and the PSV-PPO epoch loop.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{returns_and_advantages, sequence_loss, Ablations, LossBreakdown, LossConfig, SequenceInput};
use crate::model::{probs_grad_to_logits, Adam, ModelError, Policy, DEFAULT_D_EMB, DEFAULT_D_HID};
use crate::psv::{shaped_rewards, PsvError, PsvTable, TableBuilder, DEFAULT_MIN_EOS_LEN};
use crate::replay::{PoolEntry, ReplayError, ReplayPool, DEFAULT_CAPACITY};
use crate::scalar::Scalar;
use crate::tasks::{Task, DEFAULT_WARMUP_THRESHOLD};
use crate::validator::{check_complete, Verdict};
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("warm-up spent {calls} oracle calls without a score above {threshold}")]
    WarmupBudgetExceeded { calls: u64, threshold: f64 },
    #[error("corpus has no usable molecules")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Psv(#[from] PsvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::ser::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything that shapes a PSV-PPO run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub episode_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub min_eos_len: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Gradient steps per epoch on the same batch.
    pub update_steps: usize,
    pub pool_capacity: usize,
    pub warmup_threshold: f64,
    /// Oracle calls the warm-up may spend.
    pub warmup_budget: u64,
    pub oracle_call_cap: u64,
    /// Epochs without a top-10 gain above `min_improvement` before stopping.
    pub patience: usize,
    pub min_improvement: f64,
    /// Save the model every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episode_size: 64,
            batch_size: 32,
            epochs: 200,
            max_len: 100,
            min_eos_len: DEFAULT_MIN_EOS_LEN,
            temperature: 1.0,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            update_steps: 1,
            pool_capacity: DEFAULT_CAPACITY,
            warmup_threshold: DEFAULT_WARMUP_THRESHOLD,
            warmup_budget: 10_000,
            oracle_call_cap: 10_000,
            patience: 20,
            min_improvement: 1e-3,
            checkpoint_every: 0,
            loss: LossConfig::default(),
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.episode_size < self.batch_size {
            return bad("need episode_size >= batch_size >= 1");
        }
        if self.oracle_call_cap < self.episode_size as u64 {
            return bad("need oracle_call_cap >= episode_size");
        }
        if self.max_len == 0 || self.update_steps == 0 || self.pool_capacity == 0 {
            return bad("max_len, update_steps and pool_capacity must be positive");
        }
        if !(self.temperature > 0.0 && self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return bad("temperature, learning_rate and clip_norm must be positive");
        }
        Ok(())
    }
}

/// One row of `epochs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    pub hd: f64,
    pub tpc: f64,
    pub gps: f64,
    pub total: f64,
    /// Completed (non-truncated) samples this epoch.
    pub sampled: usize,
    pub valid: usize,
    pub validity: f64,
    pub mean_score: f64,
    pub max_score: f64,
    pub top10: f64,
    pub dup_generation: u64,
    pub dup_experience: u64,
    pub oracle_calls: u64,
    pub pool_size: usize,
}

impl EpochReport {
    pub fn loss(&self) -> LossBreakdown<f64> {
        LossBreakdown {
            clip: self.clip,
            value: self.value,
            entropy: self.entropy,
            hd: self.hd,
            tpc: self.tpc,
            gps: self.gps,
            total: self.total,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent seed for item `index` of round `round` in stream `stream`.
pub fn derive_seed(seed: u64, stream: u64, round: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed ^ splitmix(stream)) ^ round) ^ index)
}

const STREAM_SAMPLE: u64 = 1;
const STREAM_WARMUP: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_EVAL: u64 = 5;

struct Episode<S> {
    actions: Vec<usize>,
    probs: Vec<Vec<S>>,
    table: PsvTable,
    smiles: String,
}

impl<S> Episode<S> {
    fn is_valid(&self) -> bool {
        self.table.index_invalid().is_none()
    }
}

/// A sequence ready for the loss: actions, valid sets and rewards agree in length.
/// Distributions, returns and advantages from the pre-update parameters.
type OldPass<S> = (Vec<Vec<S>>, Vec<S>, Vec<S>);

struct TrainSeq {
    actions: Vec<usize>,
    valid: Vec<Vec<usize>>,
    rewards: Vec<f64>,
}

impl TrainSeq {
    fn from_parts(actions: &[usize], table: &PsvTable, rewards: &[f64]) -> Result<Self, PsvError> {
        let t = rewards.len();
        let valid = (0..t).map(|r| table.valid_set(r)).collect::<Result<_, _>>()?;
        Ok(Self { actions: actions[..t].to_vec(), valid, rewards: rewards.to_vec() })
    }
}

pub struct Trainer<S> {
    config: TrainConfig,
    vocab: Vocabulary,
    builder: TableBuilder,
    task: Task,
    policy: Policy<S>,
    adam: Adam<S>,
    pool: ReplayPool<S>,
    generated: HashSet<Vec<usize>>,
    dup_generation: u64,
    oracle_calls: u64,
    warmup_rounds: u64,
    epoch: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig, vocab: Vocabulary, task: Task, policy: Policy<S>) -> Result<Self, TrainError> {
        config.validate()?;
        if policy.vocab_size() != vocab.len() {
            return Err(TrainError::Config("policy and vocabulary sizes differ".into()));
        }
        Ok(Self {
            builder: TableBuilder::new(&vocab, config.min_eos_len),
            adam: Adam::new(policy.num_params(), config.learning_rate, config.clip_norm),
            pool: ReplayPool::new(config.pool_capacity),
            config,
            vocab,
            task,
            policy,
            generated: HashSet::new(),
            dup_generation: 0,
            oracle_calls: 0,
            warmup_rounds: 0,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policy(&self) -> &Policy<S> {
        &self.policy
    }

    pub fn pool(&self) -> &ReplayPool<S> {
        &self.pool
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn sample_round(&self, stream: u64, round: u64) -> Result<Vec<Episode<S>>, TrainError> {
        let cfg = &self.config;
        let found: Vec<Option<Result<Episode<S>, TrainError>>> = (0..cfg.episode_size)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(cfg.seed, stream, round, i as u64);
                let rollout = self.policy.sample(cfg.max_len, cfg.temperature, seed);
                if rollout.truncated {
                    return None;
                }
                Some((|| {
                    let table = self.builder.build(&rollout.actions)?;
                    let smiles = self.vocab.decode(&rollout.actions)?;
                    Ok(Episode { actions: rollout.actions, probs: rollout.probs, table, smiles })
                })())
            })
            .collect();
        found.into_iter().flatten().collect()
    }

    /// Scores valid episodes in order until the oracle budget runs out and
    /// inserts them into the pool. Returns the scores given out.
    fn score_and_store(&mut self, episodes: &mut Vec<Episode<S>>, epoch: usize) -> Vec<f64> {
        let remaining = self.config.oracle_call_cap.saturating_sub(self.oracle_calls) as usize;
        let chosen: Vec<usize> = episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_valid())
            .map(|(i, _)| i)
            .take(remaining)
            .collect();
        let task = &self.task;
        let scores: Vec<f64> = chosen.par_iter().map(|&i| task.score(&episodes[i].smiles)).collect();
        self.oracle_calls += scores.len() as u64;
        for (&i, &score) in chosen.iter().zip(&scores).rev() {
            let e = episodes.swap_remove(i);
            let rewards = shaped_rewards(&e.table, score, e.actions.len() - 1);
            self.pool.insert(PoolEntry {
                actions: e.actions,
                smiles: e.smiles,
                score,
                rewards,
                table: e.table,
                prior: e.probs,
                epoch,
            });
        }
        scores
    }

    fn pool_reaches(&self, threshold: f64) -> bool {
        self.pool.best_score().is_some_and(|s| s > threshold)
    }

    /// Samples with the current policy until the pool holds a molecule
    /// scoring above the warm-up threshold. Returns the oracle calls spent.
    pub fn warmup(&mut self) -> Result<u64, TrainError> {
        let threshold = self.config.warmup_threshold;
        let start = self.oracle_calls;
        while !self.pool_reaches(threshold) {
            let spent = self.oracle_calls - start;
            if spent >= self.config.warmup_budget || self.oracle_calls >= self.config.oracle_call_cap {
                return Err(TrainError::WarmupBudgetExceeded { calls: spent, threshold });
            }
            let mut episodes = self.sample_round(STREAM_WARMUP, self.warmup_rounds)?;
            self.warmup_rounds += 1;
            let budget_left = self.config.warmup_budget - spent;
            let allowed = episodes.iter().filter(|e| e.is_valid()).count().min(budget_left as usize);
            let mut kept = 0;
            episodes.retain(|e| {
                if !e.is_valid() {
                    return false;
                }
                kept += 1;
                kept <= allowed
            });
            self.score_and_store(&mut episodes, 0);
        }
        Ok(self.oracle_calls - start)
    }

    /// One pass of sample, score, store, draw, replay, loss and update.
    pub fn train_epoch(&mut self) -> Result<EpochReport, TrainError> {
        let epoch = self.epoch;
        self.epoch += 1;
        let mut episodes = self.sample_round(STREAM_SAMPLE, epoch as u64)?;
        let sampled = episodes.len();
        let valid = episodes.iter().filter(|e| e.is_valid()).count();
        for e in &episodes {
            if !self.generated.insert(e.actions.clone()) {
                self.dup_generation += 1;
            }
        }
        let scores = self.score_and_store(&mut episodes, epoch + 1);

        let mut seqs = Vec::new();
        if !self.pool.is_empty() {
            let seed = derive_seed(self.config.seed, STREAM_BATCH, epoch as u64, 0);
            for entry in self.pool.sample_batch(self.config.batch_size, seed)? {
                seqs.push(TrainSeq::from_parts(&entry.actions, &entry.table, &entry.rewards.rewards)?);
            }
        }
        for e in episodes.iter().filter(|e| !e.is_valid()) {
            let rewards = shaped_rewards(&e.table, 0.0, e.actions.len() - 1);
            seqs.push(TrainSeq::from_parts(&e.actions, &e.table, &rewards.rewards)?);
        }
        let loss = self.update(&seqs)?;

        let mean_score = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
        Ok(EpochReport {
            epoch: epoch + 1,
            clip: loss.clip,
            value: loss.value,
            entropy: loss.entropy,
            hd: loss.hd,
            tpc: loss.tpc,
            gps: loss.gps,
            total: loss.total,
            sampled,
            valid,
            validity: if sampled == 0 { 0.0 } else { valid as f64 / sampled as f64 },
            mean_score,
            max_score: scores.iter().copied().fold(0.0, f64::max),
            top10: self.pool.top_k_mean(10),
            dup_generation: self.dup_generation,
            dup_experience: self.pool.duplicates(),
            oracle_calls: self.oracle_calls,
            pool_size: self.pool.len(),
        })
    }

    /// Runs the configured number of gradient steps on `seqs`. The "old"
    /// distributions and values come from the parameters at entry. Returns
    /// the loss before the first step.
    fn update(&mut self, seqs: &[TrainSeq]) -> Result<LossBreakdown<f64>, TrainError> {
        if seqs.is_empty() {
            return Ok(LossBreakdown::zero());
        }
        let max_len = self.config.max_len;
        let discount = S::of(self.config.loss.discount);
        let olds: Vec<OldPass<S>> = seqs
            .par_iter()
            .map(|s| {
                let trace = self.policy.replay(&s.actions, max_len)?;
                let rewards: Vec<S> = s.rewards.iter().map(|&r| S::of(r)).collect();
                let (returns, adv) = returns_and_advantages(&rewards, &trace.values, discount);
                Ok((trace.probs, returns, adv))
            })
            .collect::<Result<_, ModelError>>()?;
        let mut first = None;
        for _ in 0..self.config.update_steps {
            let (parts, grad) = self.batch_gradient(seqs, &olds)?;
            first.get_or_insert(parts);
            self.adam.apply(self.policy.params_mut(), &grad)?;
        }
        Ok(first.expect("at least one update step"))
    }

    fn batch_gradient(
        &self,
        seqs: &[TrainSeq],
        olds: &[OldPass<S>],
    ) -> Result<(LossBreakdown<f64>, Vec<S>), TrainError> {
        let cfg = &self.config;
        let n = self.policy.num_params();
        let v = self.policy.vocab_size();
        let per_seq: Vec<(LossBreakdown<S>, Vec<S>)> = seqs
            .par_iter()
            .zip(olds)
            .map(|(s, (old_probs, returns, adv))| {
                let trace = self.policy.replay(&s.actions, cfg.max_len)?;
                let input = SequenceInput {
                    actions: &s.actions,
                    probs: &trace.probs,
                    old_probs,
                    valid: &s.valid,
                    values: &trace.values,
                    returns,
                    advantages: adv,
                };
                let (parts, g) = sequence_loss(&input, &cfg.loss, cfg.ablations);
                let mut dlogits = vec![S::zero(); s.actions.len() * v];
                for (t, out) in dlogits.chunks_exact_mut(v).enumerate() {
                    probs_grad_to_logits(&trace.probs[t], &g.dprobs[t], out);
                }
                let mut grad = vec![S::zero(); n];
                self.policy.backward(&trace, &dlogits, &g.dvalues, &mut grad);
                Ok((parts, grad))
            })
            .collect::<Result<_, ModelError>>()?;
        let scale = S::one() / S::of(per_seq.len() as f64);
        let mut total = vec![S::zero(); n];
        let mut parts = Vec::with_capacity(per_seq.len());
        for (p, g) in per_seq {
            for (a, b) in total.iter_mut().zip(&g) {
                *a += *b * scale;
            }
            parts.push(p);
        }
        Ok((LossBreakdown::mean(&parts).as_f64(), total))
    }

    /// Warm-up followed by epochs until the epoch limit, the oracle budget or
    /// a top-10 plateau. Writes artifacts to `out_dir` when given.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<RunSummary, TrainError> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), toml::to_string(&self.config)?)?;
        }
        let mut csv = match out_dir {
            Some(dir) => Some(csv::Writer::from_path(dir.join("epochs.csv"))?),
            None => None,
        };
        let warmup_calls = self.warmup()?;
        let mut reports = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0;
        let mut stop = StopReason::Epochs;
        while self.epoch < self.config.epochs {
            let report = self.train_epoch()?;
            if let Some(w) = csv.as_mut() {
                w.serialize(&report)?;
                w.flush()?;
            }
            if report.top10 > best + self.config.min_improvement {
                best = report.top10;
                stale = 0;
            } else {
                stale += 1;
            }
            let calls = report.oracle_calls;
            reports.push(report);
            if let (Some(dir), k) = (out_dir, self.config.checkpoint_every) {
                if k > 0 && self.epoch.is_multiple_of(k) {
                    self.policy.save(dir.join(format!("model_epoch_{}", self.epoch)))?;
                }
            }
            if calls >= self.config.oracle_call_cap {
                stop = StopReason::OracleBudget;
                break;
            }
            if stale >= self.config.patience {
                stop = StopReason::Plateau;
                break;
            }
        }
        if let Some(dir) = out_dir {
            self.write_artifacts(dir)?;
        }
        let points: Vec<(u64, f64)> = reports.iter().map(|r| (r.oracle_calls, r.top10)).collect();
        Ok(RunSummary {
            auc_top10: auc_top10(&points, self.config.oracle_call_cap),
            reports,
            warmup_calls,
            stop,
        })
    }

    pub fn write_artifacts(&self, dir: &Path) -> Result<(), TrainError> {
        let mut pool = std::io::BufWriter::new(fs::File::create(dir.join("pool.jsonl"))?);
        self.pool.dump_jsonl(&mut pool)?;
        pool.flush()?;
        let mut best = std::io::BufWriter::new(fs::File::create(dir.join("best.smi"))?);
        for (rank, e) in self.pool.entries().iter().enumerate() {
            writeln!(best, "{}\t{}\t{}", rank + 1, e.score, e.smiles)?;
        }
        best.flush()?;
        self.policy.save(dir.join("model_final"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Epochs,
    OracleBudget,
    Plateau,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<EpochReport>,
    pub warmup_calls: u64,
    pub auc_top10: f64,
    pub stop: StopReason,
}

/// Area under top-10 versus oracle calls, normalized by `budget`. The curve
/// starts at (0, 0) and holds its last value out to the budget.
pub fn auc_top10(points: &[(u64, f64)], budget: u64) -> f64 {
    if budget == 0 {
        return 0.0;
    }
    let mut area = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    for &(calls, top) in points {
        let x = (calls.min(budget)) as f64;
        area += (x - x0) * (y0 + top) / 2.0;
        x0 = x;
        y0 = top;
    }
    area += (budget as f64 - x0) * y0;
    area / budget as f64
}

pub fn read_epochs_csv(path: impl AsRef<Path>) -> Result<Vec<EpochReport>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Tokenized corpus; every sequence ends with EOS.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub sequences: Vec<Vec<usize>>,
    /// Lines that failed to tokenize.
    pub skipped: usize,
}

pub fn load_corpus(text: &str, vocab: &Vocabulary) -> Corpus {
    let mut corpus = Corpus::default();
    for line in text.lines() {
        let smiles = line.split_whitespace().next().unwrap_or("");
        if smiles.is_empty() {
            continue;
        }
        match vocab.encode(smiles) {
            Ok(mut ids) => {
                ids.push(vocab.eos_id());
                corpus.sequences.push(ids);
            }
            Err(_) => corpus.skipped += 1,
        }
    }
    corpus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplier on the learning rate.
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub d_emb: usize,
    pub d_hid: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 40,
            batch_size: 32,
            learning_rate: 5e-3,
            lr_decay: 0.95,
            clip_norm: 5.0,
            d_emb: DEFAULT_D_EMB,
            d_hid: DEFAULT_D_HID,
        }
    }
}

/// Teacher-forced maximum likelihood over `corpus`. Calls `on_epoch` with the
/// epoch's mean per-token NLL; returns all of them.
pub fn pretrain<S: Scalar>(
    policy: &mut Policy<S>,
    corpus: &Corpus,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>, TrainError> {
    if corpus.sequences.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let mut adam = Adam::new(policy.num_params(), cfg.learning_rate, cfg.clip_norm);
    let mut order: Vec<usize> = (0..corpus.sequences.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        adam.lr = S::of(cfg.learning_rate * cfg.lr_decay.powi(epoch as i32));
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64, 0)));
        let (mut nll, mut tokens) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[usize]> = batch.iter().map(|&i| corpus.sequences[i].as_slice()).collect();
            let (batch_nll, count, grad) = nll_gradient(policy, &seqs)?;
            adam.apply(policy.params_mut(), &grad)?;
            nll += batch_nll;
            tokens += count;
        }
        let mean = nll / tokens as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Summed NLL, token count and the gradient of the per-token mean NLL.
fn nll_gradient<S: Scalar>(policy: &Policy<S>, seqs: &[&[usize]]) -> Result<(f64, usize, Vec<S>), TrainError> {
    let n = policy.num_params();
    let v = policy.vocab_size();
    let tokens: usize = seqs.iter().map(|s| s.len()).sum();
    let scale = S::one() / S::of(tokens as f64);
    let per_seq: Vec<(f64, Vec<S>)> = seqs
        .par_iter()
        .map(|s| {
            let trace = policy.replay(s, usize::MAX)?;
            let mut dlogits = vec![S::zero(); s.len() * v];
            let mut nll = 0.0;
            for (t, out) in dlogits.chunks_exact_mut(v).enumerate() {
                let p = &trace.probs[t];
                nll -= p[s[t]].f64().ln();
                for (o, &pj) in out.iter_mut().zip(p) {
                    *o = pj * scale;
                }
                out[s[t]] -= scale;
            }
            let mut grad = vec![S::zero(); n];
            policy.backward(&trace, &dlogits, &vec![S::zero(); s.len()], &mut grad);
            Ok((nll, grad))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut total = vec![S::zero(); n];
    let mut nll = 0.0;
    for (l, g) in per_seq {
        nll += l;
        for (a, b) in total.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    Ok((nll, tokens, total))
}

/// Fraction of `n` samples that decode to a complete, valid molecule.
pub fn sample_validity<S: Scalar>(policy: &Policy<S>, vocab: &Vocabulary, n: usize, max_len: usize, seed: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let ok = (0..n)
        .into_par_iter()
        .filter(|&i| {
            let r = policy.sample(max_len, 1.0, derive_seed(seed, STREAM_EVAL, 0, i as u64));
            !r.truncated
                && vocab
                    .decode(&r.actions)
                    .ok()
                    .filter(|s| !s.is_empty())
                    .is_some_and(|s| check_complete(&s).is_ok_and(|v| v == Verdict::ValidComplete))
        })
        .count();
    ok as f64 / n as f64
}

/// Paths of the files a run writes.
pub fn run_files(dir: &Path) -> [PathBuf; 5] {
    ["epochs.csv", "pool.jsonl", "best.smi", "model_final", "config.toml"].map(|f| dir.join(f))
}
