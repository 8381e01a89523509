//! Unconstrained-features softmax policy.
//!
//! The logits at a context are `W · h_ctx`, where `W` is a readout matrix
//! shared by every context and `h_ctx` is a free feature vector owned by
//! that one context. Features are created on first use from a Gaussian
//! whose seed depends only on `(seed, context)`, so two parameter sets
//! built from the same seed agree on every context neither has touched.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub type TokenId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
    eos: TokenId,
}

impl Vocab {
    pub fn new(size: usize, eos: TokenId) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("vocabulary size {size} < 2")));
        }
        if eos as usize >= size {
            return Err(Error::Config(format!("eos {eos} outside vocabulary of {size}")));
        }
        Ok(Self { size, eos })
    }

    /// Vocabulary of `size` tokens with the last id reserved as terminator.
    pub fn with_trailing_eos(size: usize) -> Result<Self> {
        Self::new(size, size.saturating_sub(1) as TokenId)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }
}

/// A prediction context: the question plus the tokens generated so far.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextKey {
    pub question_id: u64,
    pub prefix: Vec<TokenId>,
}

impl ContextKey {
    pub fn new(question_id: u64, prefix: impl Into<Vec<TokenId>>) -> Self {
        Self {
            question_id,
            prefix: prefix.into(),
        }
    }

    pub fn root(question_id: u64) -> Self {
        Self::new(question_id, Vec::new())
    }
}

/// Next-token distribution with its entropy in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDist {
    pub probs: Vec<f64>,
    pub entropy: f64,
}

impl TokenDist {
    /// Softmax of `logits / temperature` with max subtraction.
    pub fn from_logits(logits: &[f64], temperature: f64) -> Option<Self> {
        if logits.iter().any(|l| !l.is_finite()) {
            return None;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        let entropy = entropy_of(&probs);
        Some(Self { probs, entropy })
    }

    pub fn log_prob(&self, token: TokenId) -> f64 {
        self.probs[token as usize].ln()
    }

    /// `e_token − π`.
    pub fn error_vector(&self, token: TokenId) -> Vec<f64> {
        let mut e: Vec<f64> = self.probs.iter().map(|p| -p).collect();
        e[token as usize] += 1.0;
        e
    }

    /// Smallest token id among the maximizers.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (v, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = v;
            }
        }
        best as TokenId
    }
}

/// `−Σ p ln p`, with `0 ln 0 = 0`.
pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    vocab: Vocab,
    dim: usize,
    init_scale: f64,
    seed: u64,
    /// `V × d`, row-major.
    readout: Vec<f64>,
    features: BTreeMap<ContextKey, Vec<f64>>,
}

impl PolicyParams {
    /// Seeded initialization: `W` entries ~ N(0, 1/d); features ~ N(0, σ_h²) on demand.
    pub fn new(vocab: Vocab, dim: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "init_scale {init_scale} must be finite and >= 0"
            )));
        }
        let mut rng = rng::substream(&[tag::READOUT, seed]);
        let std = 1.0 / (dim as f64).sqrt();
        let readout = (0..vocab.size() * dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            vocab,
            dim,
            init_scale,
            seed,
            readout,
            features: BTreeMap::new(),
        })
    }

    /// Assembles parameters from explicit parts. `readout` must be `V × d`.
    pub fn from_parts(
        vocab: Vocab,
        dim: usize,
        init_scale: f64,
        seed: u64,
        readout: Vec<f64>,
        features: BTreeMap<ContextKey, Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 || readout.len() != vocab.size() * dim {
            return Err(Error::Config(format!(
                "readout has {} entries, expected {} x {}",
                readout.len(),
                vocab.size(),
                dim
            )));
        }
        if let Some((k, _)) = features.iter().find(|(_, h)| h.len() != dim) {
            return Err(Error::Config(format!(
                "feature for question {} has wrong length",
                k.question_id
            )));
        }
        Ok(Self {
            vocab,
            dim,
            init_scale,
            seed,
            readout,
            features,
        })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn readout(&self) -> &[f64] {
        &self.readout
    }

    pub fn readout_mut(&mut self) -> &mut [f64] {
        &mut self.readout
    }

    pub fn features(&self) -> &BTreeMap<ContextKey, Vec<f64>> {
        &self.features
    }

    /// Deterministic initial feature for `ctx`.
    pub fn initial_feature(&self, ctx: &ContextKey) -> Vec<f64> {
        let mut parts = Vec::with_capacity(ctx.prefix.len() + 4);
        parts.extend([tag::FEATURE, self.seed, ctx.question_id, ctx.prefix.len() as u64]);
        parts.extend(ctx.prefix.iter().map(|&t| t as u64));
        let mut rng = rng::substream(&parts);
        (0..self.dim)
            .map(|_| self.init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Stored feature, or the value it would be initialized to.
    pub fn feature(&self, ctx: &ContextKey) -> Cow<'_, [f64]> {
        match self.features.get(ctx) {
            Some(h) => Cow::Borrowed(h),
            None => Cow::Owned(self.initial_feature(ctx)),
        }
    }

    /// Stores the feature for `ctx` if absent and returns it for mutation.
    pub fn materialize(&mut self, ctx: &ContextKey) -> &mut Vec<f64> {
        if !self.features.contains_key(ctx) {
            let h = self.initial_feature(ctx);
            self.features.insert(ctx.clone(), h);
        }
        self.features.get_mut(ctx).expect("inserted above")
    }

    pub fn set_feature(&mut self, ctx: ContextKey, h: Vec<f64>) {
        assert_eq!(h.len(), self.dim, "feature length must equal d");
        self.features.insert(ctx, h);
    }

    pub fn logits_for_feature(&self, h: &[f64]) -> Vec<f64> {
        self.readout.chunks_exact(self.dim).map(|row| dot(row, h)).collect()
    }

    pub fn logits(&self, ctx: &ContextKey) -> Vec<f64> {
        self.logits_for_feature(&self.feature(ctx))
    }

    pub fn dist(&self, ctx: &ContextKey, temperature: f64) -> Result<TokenDist> {
        TokenDist::from_logits(&self.logits(ctx), temperature).ok_or(Error::NonFiniteLogit {
            question_id: ctx.question_id,
            prefix_len: ctx.prefix.len(),
        })
    }

    /// `Σ_k log π(tokens[k] | question, tokens[..k])`.
    pub fn logprob_sequence(&self, question_id: u64, tokens: &[TokenId], temperature: f64) -> Result<f64> {
        let mut total = 0.0;
        let mut ctx = ContextKey::root(question_id);
        for &t in tokens {
            total += self.dist(&ctx, temperature)?.log_prob(t);
            ctx.prefix.push(t);
        }
        Ok(total)
    }

    /// Analytic partials of `log π(token | ctx)` at temperature 1:
    /// `∂/∂W = (e − π) hᵀ` and `∂/∂h = Wᵀ (e − π)`.
    pub fn grad_logprob(&self, ctx: &ContextKey, token: TokenId) -> Result<(Vec<f64>, Vec<f64>)> {
        self.grad_logprob_at(ctx, token, 1.0)
    }

    /// As [`grad_logprob`](Self::grad_logprob) with logits divided by `temperature`.
    pub fn grad_logprob_at(&self, ctx: &ContextKey, token: TokenId, temperature: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.feature(ctx);
        let dist = self.dist(ctx, temperature)?;
        let err: Vec<f64> = dist.error_vector(token).into_iter().map(|e| e / temperature).collect();
        let mut dw = vec![0.0; self.readout.len()];
        outer_add(&mut dw, &err, &h, 1.0);
        let dh = self.readout_transpose_mul(&err);
        Ok((dw, dh))
    }

    /// `Wᵀ g`.
    pub fn readout_transpose_mul(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (row, &gv) in self.readout.chunks_exact(self.dim).zip(g) {
            if gv != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += gv * w;
                }
            }
        }
        out
    }

    /// Deep copy used for the old and reference policies.
    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    /// Plain gradient descent: `θ ← θ − lr · g` on `W` and every touched feature.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (w, g) in self.readout.iter_mut().zip(&grads.readout) {
            *w -= lr * g;
        }
        for (ctx, g) in &grads.features {
            let h = self.materialize(ctx);
            for (hv, gv) in h.iter_mut().zip(g) {
                *hv -= lr * gv;
            }
        }
    }
}

/// `m += scale · a bᵀ` for a row-major `|a| × |b|` matrix.
pub(crate) fn outer_add(m: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let cols = b.len();
    for (row, &av) in m.chunks_exact_mut(cols).zip(a) {
        let s = scale * av;
        if s != 0.0 {
            for (x, &bv) in row.iter_mut().zip(b) {
                *x += s * bv;
            }
        }
    }
}

/// Gradient with respect to `W` and the features of every touched context.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub readout: Vec<f64>,
    pub features: BTreeMap<ContextKey, Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &PolicyParams) -> Self {
        Self {
            readout: vec![0.0; params.readout().len()],
            features: BTreeMap::new(),
        }
    }

    /// Adds `scale · ∂f/∂θ` for a function `f` of the logits at `ctx`,
    /// given `dlogits = ∂f/∂l` at that context.
    pub fn add_logit_grad(&mut self, params: &PolicyParams, ctx: &ContextKey, dlogits: &[f64], scale: f64) {
        let h = params.feature(ctx);
        outer_add(&mut self.readout, dlogits, &h, scale);
        let dh = params.readout_transpose_mul(dlogits);
        let slot = self
            .features
            .entry(ctx.clone())
            .or_insert_with(|| vec![0.0; params.dim()]);
        for (s, d) in slot.iter_mut().zip(dh) {
            *s += scale * d;
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        if self.readout.is_empty() {
            self.readout = vec![0.0; other.readout.len()];
        }
        for (a, b) in self.readout.iter_mut().zip(&other.readout) {
            *a += scale * b;
        }
        for (ctx, g) in &other.features {
            let slot = self.features.entry(ctx.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.readout.iter_mut().for_each(|x| *x *= s);
        for g in self.features.values_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self.readout.iter().map(|x| x * x).sum();
        let h: f64 = self.features.values().flat_map(|g| g.iter()).map(|x| x * x).sum();
        (w + h).sqrt()
    }
}
