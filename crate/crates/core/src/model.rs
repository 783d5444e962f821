//! Single-layer GRU policy with a value head on the shared hidden state.
//!
//! Forward and backward passes are written out by hand. Parameters live in
//! one flat buffer; [`Layout`] names the slices.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::vocab::Vocabulary;

pub const DEFAULT_D_EMB: usize = 32;
pub const DEFAULT_D_HID: usize = 64;

const MODEL_MAGIC: &[u8; 4] = b"PSVM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error("update produced non-finite parameters")]
    NonFiniteParameters,
    #[error("sequence of {len} steps exceeds the limit of {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Offsets of each tensor in the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub vocab: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    /// `vocab x d_emb`
    pub emb: usize,
    /// input weights, gates ordered reset, update, candidate: `3h x d_emb`
    pub w_x: usize,
    /// recurrent weights `3h x h`
    pub w_h: usize,
    pub b_x: usize,
    pub b_h: usize,
    /// output head `vocab x h`
    pub w_out: usize,
    pub b_out: usize,
    pub w_val: usize,
    pub b_val: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(vocab: usize, d_emb: usize, d_hid: usize) -> Self {
        let g = 3 * d_hid;
        let emb = 0;
        let w_x = emb + vocab * d_emb;
        let w_h = w_x + g * d_emb;
        let b_x = w_h + g * d_hid;
        let b_h = b_x + g;
        let w_out = b_h + g;
        let b_out = w_out + vocab * d_hid;
        let w_val = b_out + vocab;
        let b_val = w_val + d_hid;
        Self { vocab, d_emb, d_hid, emb, w_x, w_h, b_x, b_h, w_out, b_out, w_val, b_val, len: b_val + 1 }
    }

    /// Tensor names and ranges in declaration order.
    pub fn tensors(&self) -> [(&'static str, std::ops::Range<usize>); 9] {
        [
            ("embedding", self.emb..self.w_x),
            ("w_input", self.w_x..self.w_h),
            ("w_hidden", self.w_h..self.b_x),
            ("b_input", self.b_x..self.b_h),
            ("b_hidden", self.b_h..self.w_out),
            ("w_out", self.w_out..self.b_out),
            ("b_out", self.b_out..self.w_val),
            ("w_value", self.w_val..self.b_val),
            ("b_value", self.b_val..self.len),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<S> {
    layout: Layout,
    vocab_hash: u64,
    bos_id: usize,
    eos_id: usize,
    params: Vec<S>,
}

/// One sampled sequence with the distributions it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<S> {
    pub actions: Vec<usize>,
    /// Full next-token distribution before each action.
    pub probs: Vec<Vec<S>>,
    pub values: Vec<S>,
    /// No EOS within the length limit.
    pub truncated: bool,
}

impl<S> Rollout<S> {
    pub fn eos_row(&self) -> Option<usize> {
        (!self.truncated).then(|| self.actions.len() - 1)
    }
}

/// Activations of a teacher-forced pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    inputs: Vec<usize>,
    /// `(T + 1) x h`, row 0 is the initial state
    hidden: Vec<S>,
    reset: Vec<S>,
    update: Vec<S>,
    cand: Vec<S>,
    /// recurrent candidate pre-activation `W_hn h + b_hn`
    cand_h: Vec<S>,
    pub probs: Vec<Vec<S>>,
    pub values: Vec<S>,
}

impl<S> Trace<S> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn softmax_in_place<S: Scalar>(v: &mut [S]) {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Pulls a gradient with respect to softmax outputs back to the logits.
pub fn probs_grad_to_logits<S: Scalar>(probs: &[S], dprobs: &[S], out: &mut [S]) {
    let dot: S = probs.iter().zip(dprobs).map(|(&p, &g)| p * g).sum();
    for ((o, &p), &g) in out.iter_mut().zip(probs).zip(dprobs) {
        *o = p * (g - dot);
    }
}

fn matvec_add<S: Scalar>(w: &[S], x: &[S], out: &mut [S]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = S::zero();
        for (&a, &b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

impl<S: Scalar> Policy<S> {
    pub fn new(vocab: &Vocabulary, d_emb: usize, d_hid: usize, seed: u64) -> Self {
        let layout = Layout::new(vocab.len(), d_emb, d_hid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![S::zero(); layout.len];
        let k = 1.0 / (d_hid as f64).sqrt();
        let mut fill = |range: std::ops::Range<usize>, scale: f64| {
            for p in &mut params[range] {
                *p = S::of(rng.gen_range(-scale..scale));
            }
        };
        fill(layout.emb..layout.w_x, 0.5);
        fill(layout.w_x..layout.b_x, k);
        fill(layout.w_out..layout.b_out, k);
        Self::from_parts(layout, vocab, params)
    }

    fn from_parts(layout: Layout, vocab: &Vocabulary, params: Vec<S>) -> Self {
        Self {
            layout,
            vocab_hash: vocab.hash64(),
            bos_id: vocab.bos_id(),
            eos_id: vocab.eos_id(),
            params,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn vocab_size(&self) -> usize {
        self.layout.vocab
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Policy<T> {
        Policy {
            layout: self.layout,
            vocab_hash: self.vocab_hash,
            bos_id: self.bos_id,
            eos_id: self.eos_id,
            params: self.params.iter().map(|p| T::of(p.f64())).collect(),
        }
    }

    fn p(&self, start: usize, len: usize) -> &[S] {
        &self.params[start..start + len]
    }

    /// One GRU step; returns the new hidden state and fills the gate buffers.
    fn cell(&self, token: usize, h: &[S], gates: &mut Gates<S>) -> Vec<S> {
        let l = &self.layout;
        let hd = l.d_hid;
        let x = self.p(l.emb + token * l.d_emb, l.d_emb);
        let mut gx = self.p(l.b_x, 3 * hd).to_vec();
        matvec_add(self.p(l.w_x, 3 * hd * l.d_emb), x, &mut gx);
        let mut gh = self.p(l.b_h, 3 * hd).to_vec();
        matvec_add(self.p(l.w_h, 3 * hd * hd), h, &mut gh);
        let mut out = vec![S::zero(); hd];
        for i in 0..hd {
            let r = sigmoid(gx[i] + gh[i]);
            let z = sigmoid(gx[hd + i] + gh[hd + i]);
            let n = (gx[2 * hd + i] + r * gh[2 * hd + i]).tanh();
            gates.reset[i] = r;
            gates.update[i] = z;
            gates.cand[i] = n;
            gates.cand_h[i] = gh[2 * hd + i];
            out[i] = (S::one() - z) * n + z * h[i];
        }
        out
    }

    /// Next-token distribution (at `temperature`) and value for hidden state `h`.
    fn heads(&self, h: &[S], temperature: S) -> (Vec<S>, S) {
        let l = &self.layout;
        let mut logits = self.p(l.b_out, l.vocab).to_vec();
        matvec_add(self.p(l.w_out, l.vocab * l.d_hid), h, &mut logits);
        if temperature != S::one() {
            for x in &mut logits {
                *x /= temperature;
            }
        }
        softmax_in_place(&mut logits);
        let value = self.params[l.b_val]
            + self.p(l.w_val, l.d_hid).iter().zip(h).map(|(&w, &x)| w * x).sum::<S>();
        (logits, value)
    }

    /// Ancestral sampling from BOS until EOS or `max_len` actions.
    /// A temperature of zero picks the most likely token.
    pub fn sample(&self, max_len: usize, temperature: f64, seed: u64) -> Rollout<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hd = self.layout.d_hid;
        let mut gates = Gates::new(hd);
        let mut h = vec![S::zero(); hd];
        let mut token = self.bos_id;
        let mut rollout = Rollout { actions: Vec::new(), probs: Vec::new(), values: Vec::new(), truncated: true };
        while rollout.actions.len() < max_len {
            h = self.cell(token, &h, &mut gates);
            let (probs, value) = self.heads(&h, S::one());
            token = if temperature <= 0.0 {
                argmax(&probs)
            } else if temperature == 1.0 {
                draw(&probs, rng.gen())
            } else {
                let (tempered, _) = self.heads(&h, S::of(temperature));
                draw(&tempered, rng.gen())
            };
            rollout.actions.push(token);
            rollout.probs.push(probs);
            rollout.values.push(value);
            if token == self.eos_id {
                rollout.truncated = false;
                break;
            }
        }
        rollout
    }

    /// Teacher-forced pass over `actions` (BOS is prepended internally).
    pub fn replay(&self, actions: &[usize], max_len: usize) -> Result<Trace<S>, ModelError> {
        if actions.len() > max_len {
            return Err(ModelError::LengthOverflow { len: actions.len(), max: max_len });
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.layout.vocab) {
            return Err(ModelError::ShapeMismatch(format!("token id {bad} outside the vocabulary")));
        }
        let hd = self.layout.d_hid;
        let t_len = actions.len();
        let mut inputs = Vec::with_capacity(t_len);
        inputs.push(self.bos_id);
        inputs.extend_from_slice(&actions[..t_len.saturating_sub(1)]);
        inputs.truncate(t_len);
        let mut trace = Trace {
            inputs,
            hidden: vec![S::zero(); (t_len + 1) * hd],
            reset: vec![S::zero(); t_len * hd],
            update: vec![S::zero(); t_len * hd],
            cand: vec![S::zero(); t_len * hd],
            cand_h: vec![S::zero(); t_len * hd],
            probs: Vec::with_capacity(t_len),
            values: Vec::with_capacity(t_len),
        };
        let mut gates = Gates::new(hd);
        for t in 0..t_len {
            let h = self.cell(trace.inputs[t], &trace.hidden[t * hd..(t + 1) * hd], &mut gates);
            let rows = t * hd..(t + 1) * hd;
            trace.reset[rows.clone()].copy_from_slice(&gates.reset);
            trace.update[rows.clone()].copy_from_slice(&gates.update);
            trace.cand[rows.clone()].copy_from_slice(&gates.cand);
            trace.cand_h[rows].copy_from_slice(&gates.cand_h);
            let (probs, value) = self.heads(&h, S::one());
            trace.hidden[(t + 1) * hd..(t + 2) * hd].copy_from_slice(&h);
            trace.probs.push(probs);
            trace.values.push(value);
        }
        Ok(trace)
    }

    /// Sum of log-probabilities of `actions` under teacher forcing.
    pub fn log_likelihood(&self, actions: &[usize]) -> Result<S, ModelError> {
        let trace = self.replay(actions, usize::MAX)?;
        Ok(actions.iter().zip(&trace.probs).map(|(&a, p)| p[a].ln()).sum())
    }

    /// Accumulates parameter gradients into `grad` given the gradient of the
    /// loss with respect to each step's logits (`T x vocab`, flat) and values.
    pub fn backward(&self, trace: &Trace<S>, dlogits: &[S], dvalues: &[S], grad: &mut [S]) {
        let l = &self.layout;
        let (hd, de, v) = (l.d_hid, l.d_emb, l.vocab);
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(dlogits.len(), trace.len() * v);
        assert_eq!(dvalues.len(), trace.len());
        let mut dh_next = vec![S::zero(); hd];
        let mut pre_x = vec![S::zero(); 3 * hd];
        let mut pre_h = vec![S::zero(); 3 * hd];
        for t in (0..trace.len()).rev() {
            let h_prev = &trace.hidden[t * hd..(t + 1) * hd];
            let h = &trace.hidden[(t + 1) * hd..(t + 2) * hd];
            let dl = &dlogits[t * v..(t + 1) * v];
            let dv = dvalues[t];
            // heads
            let mut dh = dh_next.clone();
            for (j, &g) in dl.iter().enumerate() {
                if g == S::zero() {
                    continue;
                }
                grad[l.b_out + j] += g;
                let row = l.w_out + j * hd;
                for i in 0..hd {
                    grad[row + i] += g * h[i];
                    dh[i] += g * self.params[row + i];
                }
            }
            grad[l.b_val] += dv;
            for i in 0..hd {
                grad[l.w_val + i] += dv * h[i];
                dh[i] += dv * self.params[l.w_val + i];
            }
            // gates
            let rows = t * hd..(t + 1) * hd;
            let (r, z, n, hn) = (
                &trace.reset[rows.clone()],
                &trace.update[rows.clone()],
                &trace.cand[rows.clone()],
                &trace.cand_h[rows],
            );
            for i in 0..hd {
                let dn = dh[i] * (S::one() - z[i]);
                let dz = dh[i] * (h_prev[i] - n[i]);
                dh_next[i] = dh[i] * z[i];
                let dn_pre = dn * (S::one() - n[i] * n[i]);
                let dr = dn_pre * hn[i];
                let dr_pre = dr * r[i] * (S::one() - r[i]);
                let dz_pre = dz * z[i] * (S::one() - z[i]);
                pre_x[i] = dr_pre;
                pre_x[hd + i] = dz_pre;
                pre_x[2 * hd + i] = dn_pre;
                pre_h[i] = dr_pre;
                pre_h[hd + i] = dz_pre;
                pre_h[2 * hd + i] = dn_pre * r[i];
            }
            let token = trace.inputs[t];
            let x_at = l.emb + token * de;
            for k in 0..3 * hd {
                let gx = pre_x[k];
                grad[l.b_x + k] += gx;
                let row = l.w_x + k * de;
                for c in 0..de {
                    grad[row + c] += gx * self.params[x_at + c];
                    grad[x_at + c] += gx * self.params[row + c];
                }
                let gh = pre_h[k];
                grad[l.b_h + k] += gh;
                let row = l.w_h + k * hd;
                for c in 0..hd {
                    grad[row + c] += gh * h_prev[c];
                    dh_next[c] += gh * self.params[row + c];
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ModelError> {
        let mut out = Vec::with_capacity(40 + self.params.len() * S::BYTES as usize);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.vocab_hash.to_le_bytes());
        for dim in [self.layout.vocab, self.layout.d_emb, self.layout.d_hid] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.push(S::BYTES);
        for &p in &self.params {
            p.write_le(&mut out);
        }
        w.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f), vocab)
    }

    /// Reads a model written with either scalar width, converting as needed.
    pub fn read_from(mut r: impl Read, vocab: &Vocabulary) -> Result<Self, ModelError> {
        let header = read_header(&mut r)?;
        if header.vocab_hash != vocab.hash64() || header.vocab != vocab.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "model was trained on a different vocabulary ({} tokens, hash {:016x})",
                header.vocab, header.vocab_hash
            )));
        }
        let layout = Layout::new(header.vocab, header.d_emb, header.d_hid);
        let width = header.scalar_bytes as usize;
        let mut raw = vec![0u8; layout.len * width];
        r.read_exact(&mut raw)?;
        let params = raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => S::of(f32::read_le(c) as f64),
                _ => S::of(f64::read_le(c)),
            })
            .collect();
        Ok(Self::from_parts(layout, vocab, params))
    }
}

/// Fixed-size part of a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelHeader {
    pub version: u32,
    pub vocab_hash: u64,
    pub vocab: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    pub scalar_bytes: u8,
}

pub fn read_header(mut r: impl Read) -> Result<ModelHeader, ModelError> {
    let mut buf = [0u8; 29];
    r.read_exact(&mut buf)?;
    if &buf[..4] != MODEL_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != MODEL_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let scalar_bytes = buf[28];
    if scalar_bytes != 4 && scalar_bytes != 8 {
        return Err(ModelError::Format(format!("unsupported scalar width {scalar_bytes}")));
    }
    Ok(ModelHeader {
        version,
        vocab_hash: u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")),
        vocab: u32_at(16) as usize,
        d_emb: u32_at(20) as usize,
        d_hid: u32_at(24) as usize,
        scalar_bytes,
    })
}

struct Gates<S> {
    reset: Vec<S>,
    update: Vec<S>,
    cand: Vec<S>,
    cand_h: Vec<S>,
}

impl<S: Scalar> Gates<S> {
    fn new(hd: usize) -> Self {
        Self {
            reset: vec![S::zero(); hd],
            update: vec![S::zero(); hd],
            cand: vec![S::zero(); hd],
            cand_h: vec![S::zero(); hd],
        }
    }
}

fn argmax<S: Scalar>(p: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw with `u` uniform in `[0, 1)`.
fn draw<S: Scalar>(p: &[S], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x.f64();
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > S::zero()).unwrap_or(p.len() - 1)
}

/// Adam with global-norm clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub clip_norm: S,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(n: usize, lr: f64, clip_norm: f64) -> Self {
        Self {
            lr: S::of(lr),
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            clip_norm: S::of(clip_norm),
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Rescales `grads` in place so that their global norm is at most the
    /// clip norm. Returns the norm before clipping.
    pub fn clip(&self, grads: &mut [S]) -> S {
        let norm = grads.iter().map(|&g| g * g).sum::<S>().sqrt();
        if norm > self.clip_norm {
            let scale = self.clip_norm / norm;
            grads.iter_mut().for_each(|g| *g *= scale);
        }
        norm
    }

    /// Applies one update. Leaves everything untouched on failure.
    pub fn apply(&mut self, params: &mut [S], grads: &[S]) -> Result<(), ModelError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(ModelError::ShapeMismatch("gradient length".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteGradient);
        }
        let mut g = grads.to_vec();
        self.clip(&mut g);
        let t = self.t + 1;
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let mut next = params.to_vec();
        for i in 0..next.len() {
            m[i] = self.beta1 * m[i] + (S::one() - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (S::one() - self.beta2) * g[i] * g[i];
            next[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
        }
        if next.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::NonFiniteParameters);
        }
        params.copy_from_slice(&next);
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }
}
