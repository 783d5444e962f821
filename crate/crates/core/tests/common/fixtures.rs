//! Random loss inputs and a central-difference gradient checker.

use psvppo::losses::{term_with_grad, LossConfig, SequenceGrad, SequenceInput, Term};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub actions: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
    pub old: Vec<Vec<f64>>,
    pub valid: Vec<Vec<usize>>,
    pub values: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Peaked distributions whose chosen actions are likely, so the sequence
/// probability clears small thresholds and some tokens exceed the token
/// threshold.
pub fn random_fixture(seed: u64, steps: usize, vocab: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Fixture {
        actions: Vec::new(),
        probs: Vec::new(),
        old: Vec::new(),
        valid: Vec::new(),
        values: Vec::new(),
        returns: Vec::new(),
        advantages: Vec::new(),
    };
    for _ in 0..steps {
        let action = rng.gen_range(0..vocab);
        let mut logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-1.0..1.0)).collect();
        logits[action] += 4.0;
        let probs = softmax(&logits);
        let old_logits: Vec<f64> = logits.iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect();
        let mut valid: Vec<usize> = (0..vocab).filter(|_| rng.gen_bool(0.5)).collect();
        if !valid.contains(&action) {
            valid.push(action);
            valid.sort_unstable();
        }
        f.actions.push(action);
        f.probs.push(probs);
        f.old.push(softmax(&old_logits));
        f.valid.push(valid);
        f.values.push(rng.gen_range(-1.0..1.0));
        f.returns.push(rng.gen_range(-1.0..1.0));
        f.advantages.push(rng.gen_range(-1.0..1.0));
    }
    f
}

impl Fixture {
    pub fn input(&self) -> SequenceInput<'_, f64> {
        SequenceInput {
            actions: &self.actions,
            probs: &self.probs,
            old_probs: &self.old,
            valid: &self.valid,
            values: &self.values,
            returns: &self.returns,
            advantages: &self.advantages,
        }
    }

    pub fn term_value(&self, term: Term, cfg: &LossConfig) -> f64 {
        let mut scratch = SequenceGrad::zeros(self.actions.len(), self.probs[0].len());
        term_with_grad(term, &self.input(), cfg, 1.0, &mut scratch)
    }

    pub fn term_grad(&self, term: Term, cfg: &LossConfig) -> SequenceGrad<f64> {
        let mut grad = SequenceGrad::zeros(self.actions.len(), self.probs[0].len());
        term_with_grad(term, &self.input(), cfg, 1.0, &mut grad);
        grad
    }

    /// Coordinates the term actually depends on: `(step, token)` for
    /// distribution entries, `(step, usize::MAX)` for the critic value.
    pub fn relevant_coordinates(&self, term: Term) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for t in 0..self.actions.len() {
            match term {
                Term::Value => out.push((t, usize::MAX)),
                Term::Clip | Term::Gps => out.push((t, self.actions[t])),
                Term::Entropy | Term::Tpc => out.extend(self.valid[t].iter().map(|&j| (t, j))),
                Term::Hellinger | Term::EntropyFull | Term::KlPrior => {
                    out.extend((0..self.probs[t].len()).map(|j| (t, j)))
                }
            }
        }
        out
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over `coords`.
pub fn max_relative_error(fx: &mut Fixture, term: Term, cfg: &LossConfig, coords: &[(usize, usize)], eps: f64) -> f64 {
    let grad = fx.term_grad(term, cfg);
    let mut worst: f64 = 0.0;
    for &(t, j) in coords {
        let (analytic, fd) = if j == usize::MAX {
            let keep = fx.values[t];
            fx.values[t] = keep + eps;
            let up = fx.term_value(term, cfg);
            fx.values[t] = keep - eps;
            let down = fx.term_value(term, cfg);
            fx.values[t] = keep;
            (grad.dvalues[t], (up - down) / (2.0 * eps))
        } else {
            let keep = fx.probs[t][j];
            let h = eps * keep.max(1e-3);
            fx.probs[t][j] = keep + h;
            let up = fx.term_value(term, cfg);
            fx.probs[t][j] = keep - h;
            let down = fx.term_value(term, cfg);
            fx.probs[t][j] = keep;
            (grad.dprobs[t][j], (up - down) / (2.0 * h))
        };
        let scale = analytic.abs().max(fd.abs());
        let err = if scale < 1e-10 { 0.0 } else { (analytic - fd).abs() / scale };
        worst = worst.max(err);
    }
    worst
}
