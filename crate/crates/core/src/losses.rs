//! PSV-PPO loss terms with analytic gradients.
//!
//! Every term is a function of the per-step distributions (and, for the
//! value term, of the critic outputs). Gradients are returned with respect to
//! those inputs; [`crate::model::probs_grad_to_logits`] carries them on to
//! the logits.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub w_clip: f64,
    pub w_value: f64,
    pub w_entropy: f64,
    pub w_hd: f64,
    pub w_tpc: f64,
    pub w_gps: f64,
    pub gps_threshold: f64,
    pub token_threshold: f64,
    pub length_gamma: f64,
    pub discount: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            entropy_coef: 0.35,
            w_clip: 1.0,
            w_value: 1.0,
            w_entropy: 1.0,
            w_hd: 1.0,
            w_tpc: 1.0,
            w_gps: 1.0,
            gps_threshold: 1e-5,
            token_threshold: 0.3,
            length_gamma: 0.01,
            discount: 1.0,
        }
    }
}

/// Switches for the two ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Plain full-vocabulary entropy and KL against the unmasked prior.
    pub disable_psv_losses: bool,
    /// Drop the GPS and TPC terms.
    pub disable_gps_tpc: bool,
}

/// The six term values and the weighted total.
///
/// `entropy` holds the (length-normalized) entropy itself; the total
/// subtracts it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown<S> {
    pub clip: S,
    pub value: S,
    pub entropy: S,
    pub hd: S,
    pub tpc: S,
    pub gps: S,
    pub total: S,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn zero() -> Self {
        Self {
            clip: S::zero(),
            value: S::zero(),
            entropy: S::zero(),
            hd: S::zero(),
            tpc: S::zero(),
            gps: S::zero(),
            total: S::zero(),
        }
    }

    pub fn as_f64(&self) -> LossBreakdown<f64> {
        LossBreakdown {
            clip: self.clip.f64(),
            value: self.value.f64(),
            entropy: self.entropy.f64(),
            hd: self.hd.f64(),
            tpc: self.tpc.f64(),
            gps: self.gps.f64(),
            total: self.total.f64(),
        }
    }

    /// Arithmetic mean of several breakdowns, summed in order.
    pub fn mean(items: &[Self]) -> Self {
        let mut acc = Self::zero();
        if items.is_empty() {
            return acc;
        }
        for b in items {
            acc.clip += b.clip;
            acc.value += b.value;
            acc.entropy += b.entropy;
            acc.hd += b.hd;
            acc.tpc += b.tpc;
            acc.gps += b.gps;
            acc.total += b.total;
        }
        let n = S::of(items.len() as f64);
        acc.clip /= n;
        acc.value /= n;
        acc.entropy /= n;
        acc.hd /= n;
        acc.tpc /= n;
        acc.gps /= n;
        acc.total /= n;
        acc
    }
}

/// Weighted composite: higher entropy lowers the total.
pub fn total_loss<S: Scalar>(parts: &LossBreakdown<S>, cfg: &LossConfig) -> S {
    let w = |x: f64| S::of(x);
    w(cfg.w_clip) * parts.clip + w(cfg.w_value) * parts.value
        - w(cfg.w_entropy) * w(cfg.entropy_coef) * parts.entropy
        + w(cfg.w_hd) * parts.hd
        + w(cfg.w_tpc) * parts.tpc
        + w(cfg.w_gps) * parts.gps
}

/// Discounted returns and advantages against the given baseline values.
pub fn returns_and_advantages<S: Scalar>(rewards: &[S], values: &[S], discount: S) -> (Vec<S>, Vec<S>) {
    let mut returns = vec![S::zero(); rewards.len()];
    let mut acc = S::zero();
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + discount * acc;
        returns[t] = acc;
    }
    let adv = returns.iter().zip(values).map(|(&r, &v)| r - v).collect();
    (returns, adv)
}

pub fn length_normalize<S: Scalar>(term: S, steps: usize, gamma: f64) -> S {
    term * S::of((-gamma * steps as f64).exp())
}

/// Clipped surrogate, negated for minimization, averaged over steps.
pub fn clip_loss<S: Scalar>(ratios: &[S], advantages: &[S], eps: f64) -> S {
    if ratios.is_empty() {
        return S::zero();
    }
    let (lo, hi) = (S::of(1.0 - eps), S::of(1.0 + eps));
    let sum: S = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| -(r * a).min(r.max(lo).min(hi) * a))
        .sum();
    sum / S::of(ratios.len() as f64)
}

pub fn value_loss<S: Scalar>(values: &[S], returns: &[S]) -> S {
    if values.is_empty() {
        return S::zero();
    }
    let sum: S = values.iter().zip(returns).map(|(&v, &r)| (v - r) * (v - r)).sum();
    sum / S::of(values.len() as f64)
}

/// Entropy of `probs` restricted to `valid`, divided by `ln |valid|`. Zero
/// when fewer than two tokens are valid.
pub fn normalized_entropy<S: Scalar>(probs: &[S], valid: &[usize]) -> S {
    if valid.len() <= 1 {
        return S::zero();
    }
    let h: S = valid.iter().map(|&a| xlogx(probs[a])).sum();
    -h / S::of((valid.len() as f64).ln())
}

fn xlogx<S: Scalar>(p: S) -> S {
    if p > S::zero() {
        p * p.ln()
    } else {
        S::zero()
    }
}

/// Mean normalized entropy over steps.
pub fn entropy_psv<S: Scalar>(dists: &[Vec<S>], valid: &[Vec<usize>]) -> S {
    if dists.is_empty() {
        return S::zero();
    }
    let sum: S = dists.iter().zip(valid).map(|(p, d)| normalized_entropy(p, d)).sum();
    sum / S::of(dists.len() as f64)
}

pub fn hellinger<S: Scalar>(p: &[S], q: &[S]) -> S {
    let s: S = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let d = a.max(S::zero()).sqrt() - b.max(S::zero()).sqrt();
            d * d
        })
        .sum();
    s.sqrt() / S::of(2f64.sqrt())
}

/// Prior restricted to `valid` and renormalized; uniform over `valid` when
/// the prior puts no mass there.
pub fn masked_prior<S: Scalar>(prior: &[S], valid: &[usize]) -> Vec<S> {
    let mut q = vec![S::zero(); prior.len()];
    let mass: S = valid.iter().map(|&a| prior[a]).sum();
    if mass > S::zero() {
        for &a in valid {
            q[a] = prior[a] / mass;
        }
    } else if !valid.is_empty() {
        let u = S::one() / S::of(valid.len() as f64);
        for &a in valid {
            q[a] = u;
        }
    }
    q
}

/// Mean Hellinger distance between the current distribution and the masked
/// prior.
pub fn hellinger_psv<S: Scalar>(current: &[Vec<S>], prior: &[Vec<S>], valid: &[Vec<usize>]) -> S {
    if current.is_empty() {
        return S::zero();
    }
    let sum: S = current
        .iter()
        .zip(prior)
        .zip(valid)
        .map(|((p, q), d)| hellinger(p, &masked_prior(q, d)))
        .sum();
    sum / S::of(current.len() as f64)
}

/// Sequence-probability penalty from the summed log-probability of the
/// chosen actions.
pub fn gps_loss<S: Scalar>(log_prob: S, threshold: f64) -> S {
    let tau = S::of(threshold);
    if log_prob <= tau.ln() {
        return S::zero();
    }
    let d = (log_prob / S::of(2.0)).exp() - tau.sqrt();
    d * d / S::of(2f64.sqrt())
}

fn tpc_token<S: Scalar>(p: S, tau: S) -> S {
    if p > tau {
        let d = p.sqrt() - tau.sqrt();
        d * d / S::of(2f64.sqrt())
    } else {
        S::zero()
    }
}

/// Token-probability penalty over the valid set, summed over steps.
pub fn tpc_loss<S: Scalar>(dists: &[Vec<S>], valid: &[Vec<usize>], threshold: f64) -> S {
    let tau = S::of(threshold);
    dists
        .iter()
        .zip(valid)
        .filter(|(_, d)| !d.is_empty())
        .map(|(p, d)| {
            let s: S = d.iter().map(|&a| tpc_token(p[a], tau)).sum();
            s / S::of(d.len() as f64)
        })
        .sum()
}

/// Plain entropy over the full vocabulary, averaged over steps.
pub fn entropy_full<S: Scalar>(dists: &[Vec<S>]) -> S {
    if dists.is_empty() {
        return S::zero();
    }
    let sum: S = dists.iter().map(|p| -p.iter().map(|&x| xlogx(x)).sum::<S>()).sum();
    sum / S::of(dists.len() as f64)
}

/// Mean `KL(prior || current)` over steps, unmasked.
pub fn kl_prior<S: Scalar>(current: &[Vec<S>], prior: &[Vec<S>]) -> S {
    if current.is_empty() {
        return S::zero();
    }
    let sum: S = current
        .iter()
        .zip(prior)
        .map(|(p, q)| {
            q.iter()
                .zip(p)
                .filter(|(&qj, _)| qj > S::zero())
                .map(|(&qj, &pj)| qj * (qj.ln() - pj.ln()))
                .sum::<S>()
        })
        .sum();
    sum / S::of(current.len() as f64)
}

/// Everything the loss needs about one training sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInput<'a, S> {
    pub actions: &'a [usize],
    /// Current policy, one distribution per step.
    pub probs: &'a [Vec<S>],
    /// Prior ("old") policy.
    pub old_probs: &'a [Vec<S>],
    /// Valid-token set per step.
    pub valid: &'a [Vec<usize>],
    /// Current critic outputs.
    pub values: &'a [S],
    pub returns: &'a [S],
    pub advantages: &'a [S],
}

impl<S> SequenceInput<'_, S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Gradient of a loss with respect to each step's distribution and value.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceGrad<S> {
    pub dprobs: Vec<Vec<S>>,
    pub dvalues: Vec<S>,
}

impl<S: Scalar> SequenceGrad<S> {
    pub fn zeros(steps: usize, vocab: usize) -> Self {
        Self {
            dprobs: vec![vec![S::zero(); vocab]; steps],
            dvalues: vec![S::zero(); steps],
        }
    }
}

/// Which term a gradient is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Clip,
    Value,
    Entropy,
    Hellinger,
    Gps,
    Tpc,
    EntropyFull,
    KlPrior,
}

/// Value of one term for a sequence, adding `scale` times its gradient
/// into `grad`. Entropy terms include length normalization.
pub fn term_with_grad<S: Scalar>(
    term: Term,
    seq: &SequenceInput<'_, S>,
    cfg: &LossConfig,
    scale: S,
    grad: &mut SequenceGrad<S>,
) -> S {
    let t_len = seq.len();
    if t_len == 0 {
        return S::zero();
    }
    let inv_t = S::one() / S::of(t_len as f64);
    let ln_factor = S::of((-cfg.length_gamma * t_len as f64).exp());
    match term {
        Term::Clip => {
            let (lo, hi) = (S::of(1.0 - cfg.clip_epsilon), S::of(1.0 + cfg.clip_epsilon));
            let mut sum = S::zero();
            for t in 0..t_len {
                let a = seq.actions[t];
                let (p, q, adv) = (seq.probs[t][a], seq.old_probs[t][a], seq.advantages[t]);
                let r = p / q;
                let plain = r * adv;
                let clipped = r.max(lo).min(hi) * adv;
                if plain <= clipped {
                    sum -= plain;
                    grad.dprobs[t][a] -= scale * inv_t * adv / q;
                } else {
                    sum -= clipped;
                }
            }
            sum * inv_t
        }
        Term::Value => {
            let mut sum = S::zero();
            for t in 0..t_len {
                let d = seq.values[t] - seq.returns[t];
                sum += d * d;
                grad.dvalues[t] += scale * inv_t * S::of(2.0) * d;
            }
            sum * inv_t
        }
        Term::Entropy => {
            let mut sum = S::zero();
            for t in 0..t_len {
                let d = &seq.valid[t];
                if d.len() <= 1 {
                    continue;
                }
                let norm = S::of((d.len() as f64).ln());
                sum += normalized_entropy(&seq.probs[t], d);
                for &a in d {
                    let p = seq.probs[t][a];
                    grad.dprobs[t][a] -= scale * ln_factor * inv_t * (p.ln() + S::one()) / norm;
                }
            }
            sum * inv_t * ln_factor
        }
        Term::EntropyFull => {
            let mut sum = S::zero();
            for t in 0..t_len {
                for (j, &p) in seq.probs[t].iter().enumerate() {
                    sum -= xlogx(p);
                    grad.dprobs[t][j] -= scale * ln_factor * inv_t * (p.ln() + S::one());
                }
            }
            sum * inv_t * ln_factor
        }
        Term::Hellinger => {
            let mut sum = S::zero();
            let c = S::of(2.0 * 2f64.sqrt());
            for t in 0..t_len {
                let p = &seq.probs[t];
                let q = masked_prior(&seq.old_probs[t], &seq.valid[t]);
                let hd = hellinger(p, &q);
                sum += hd;
                if hd <= S::zero() {
                    continue;
                }
                let root = hd * S::of(2f64.sqrt());
                for j in 0..p.len() {
                    let sp = p[j].sqrt();
                    grad.dprobs[t][j] += scale * inv_t * (sp - q[j].sqrt()) / (c * root * sp);
                }
            }
            sum * inv_t
        }
        Term::KlPrior => {
            let mut sum = S::zero();
            for t in 0..t_len {
                for (j, (&pj, &qj)) in seq.probs[t].iter().zip(&seq.old_probs[t]).enumerate() {
                    if qj > S::zero() {
                        sum += qj * (qj.ln() - pj.ln());
                        grad.dprobs[t][j] -= scale * inv_t * qj / pj;
                    }
                }
            }
            sum * inv_t
        }
        Term::Gps => {
            let log_p: S = (0..t_len).map(|t| seq.probs[t][seq.actions[t]].ln()).sum();
            let loss = gps_loss(log_p, cfg.gps_threshold);
            if loss > S::zero() {
                let sp = (log_p / S::of(2.0)).exp();
                let k = (sp - S::of(cfg.gps_threshold).sqrt()) * sp / S::of(2f64.sqrt());
                for t in 0..t_len {
                    let a = seq.actions[t];
                    grad.dprobs[t][a] += scale * k / seq.probs[t][a];
                }
            }
            loss
        }
        Term::Tpc => {
            let tau = S::of(cfg.token_threshold);
            let mut sum = S::zero();
            for t in 0..t_len {
                let d = &seq.valid[t];
                if d.is_empty() {
                    continue;
                }
                let inv_d = S::one() / S::of(d.len() as f64);
                for &a in d {
                    let p = seq.probs[t][a];
                    if p > tau {
                        sum += tpc_token(p, tau) * inv_d;
                        let sp = p.sqrt();
                        grad.dprobs[t][a] +=
                            scale * ln_factor * inv_d * (sp - tau.sqrt()) / (S::of(2f64.sqrt()) * sp);
                    }
                }
            }
            sum * ln_factor
        }
    }
}

/// Full loss of one sequence and its gradient.
pub fn sequence_loss<S: Scalar>(
    seq: &SequenceInput<'_, S>,
    cfg: &LossConfig,
    ablations: Ablations,
) -> (LossBreakdown<S>, SequenceGrad<S>) {
    let vocab = seq.probs.first().map_or(0, Vec::len);
    let mut grad = SequenceGrad::zeros(seq.len(), vocab);
    let w = |x: f64| S::of(x);
    let (entropy_term, divergence_term) = if ablations.disable_psv_losses {
        (Term::EntropyFull, Term::KlPrior)
    } else {
        (Term::Entropy, Term::Hellinger)
    };
    let mut parts = LossBreakdown::zero();
    parts.clip = term_with_grad(Term::Clip, seq, cfg, w(cfg.w_clip), &mut grad);
    parts.value = term_with_grad(Term::Value, seq, cfg, w(cfg.w_value), &mut grad);
    parts.entropy = term_with_grad(
        entropy_term,
        seq,
        cfg,
        -w(cfg.w_entropy) * w(cfg.entropy_coef),
        &mut grad,
    );
    parts.hd = term_with_grad(divergence_term, seq, cfg, w(cfg.w_hd), &mut grad);
    if !ablations.disable_gps_tpc {
        parts.gps = term_with_grad(Term::Gps, seq, cfg, w(cfg.w_gps), &mut grad);
        parts.tpc = term_with_grad(Term::Tpc, seq, cfg, w(cfg.w_tpc), &mut grad);
    }
    parts.total = total_loss(&parts, cfg);
    (parts, grad)
}
