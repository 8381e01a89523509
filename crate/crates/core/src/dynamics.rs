//! Numerical checks of the learning-dynamics identities: the first-order
//! change of the correct responses' likelihood, the entropy covariance
//! lemma, the cross-context entropy formula and the `Q`-alignment sweep.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::advantage::q_weights;
use crate::error::{Error, Result};
use crate::policy::{dot, entropy_of, ContextKey, PolicyParams, TokenDist, TokenId};
use crate::rollout::Group;
use crate::thr::{gram_pair, thr_group};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
    pub eta: f64,
}

impl IdentityReport {
    pub fn new(lhs: f64, rhs: f64, eta: f64) -> Self {
        Self {
            lhs,
            rhs,
            rel_err: rel_err(lhs, rhs),
            eta,
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyProbe {
    pub dist: TokenDist,
    pub logit_delta: Vec<f64>,
    pub dh_pred: f64,
    pub dh_actual: f64,
    /// `π ⊙ log π / H(π)`; all zeros when `H(π) = 0`.
    pub q: Vec<f64>,
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `Q = π ⊙ log π / H(π)`, or `None` for a zero-entropy distribution.
pub fn q_vector(probs: &[f64]) -> Option<Vec<f64>> {
    let h = entropy_of(probs);
    (h > 0.0).then(|| probs.iter().map(|&p| xlogx(p) / h).collect())
}

/// `Cov_{y∼π}(log π(y), Δl_y)`.
pub fn logprob_covariance(probs: &[f64], dl: &[f64]) -> f64 {
    let plogp: Vec<f64> = probs.iter().map(|&p| xlogx(p)).collect();
    dot(&plogp, dl) - plogp.iter().sum::<f64>() * dot(probs, dl)
}

/// `softmax(log π + Δl)` without forming logits, so zero-probability
/// entries stay exactly zero.
fn shift_probs(probs: &[f64], dl: &[f64]) -> Vec<f64> {
    let m = probs
        .iter()
        .zip(dl)
        .filter(|(&p, _)| p > 0.0)
        .map(|(_, &d)| d)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = probs.iter().zip(dl).map(|(&p, &d)| p * (d - m).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Predicted (`−Cov(log π, Δl)`) and exact entropy change under a logit shift.
pub fn entropy_lemma_check(probs: &[f64], dl: &[f64]) -> EntropyProbe {
    assert_eq!(probs.len(), dl.len());
    let h0 = entropy_of(probs);
    let dh_actual = entropy_of(&shift_probs(probs, dl)) - h0;
    EntropyProbe {
        dist: TokenDist {
            probs: probs.to_vec(),
            entropy: h0,
        },
        logit_delta: dl.to_vec(),
        dh_pred: -logprob_covariance(probs, dl),
        dh_actual,
        q: q_vector(probs).unwrap_or_else(|| vec![0.0; probs.len()]),
    }
}

/// `Σ_{i correct} log π(y_i) / |y_i|` at the group's temperature.
fn positive_loglik(params: &PolicyParams, group: &Group) -> Result<f64> {
    let mut total = 0.0;
    for r in group.responses.iter().filter(|r| r.is_correct()) {
        total += params.logprob_sequence(group.question.id, &r.tokens, group.temperature)? / r.len() as f64;
    }
    Ok(total)
}

/// Readout-only step along the unclipped GRPO surrogate gradient, compared
/// with the THR-assembled first-order prediction.
///
/// `lhs` is the forward difference of `Σ_{i correct} log π(y_i)/|y_i|` per
/// unit step; `rhs = (1/Z) Σ_t c_t THR_t / T²` with `c_t = q⁺` on correct
/// responses and `q⁻` on incorrect ones. `params` must be the policy the
/// group was sampled from.
pub fn first_order_check(group: &Group, params: &PolicyParams, eta: f64) -> Result<IdentityReport> {
    if !group.is_mixed() {
        return Err(Error::GroupDegenerate { q: group.q });
    }
    let temp = group.temperature;
    let (qplus, qminus) = q_weights(group.q);
    let z = group.total_tokens() as f64;
    let d = params.dim();

    let mut step = params.clone();
    let w = step.readout_mut();
    for st in &group.flat_stats {
        let correct = group.responses[st.owner.0].is_correct();
        let a = if correct { qplus } else { -qminus };
        let s = eta * a / (z * temp);
        for (row, &e) in w.chunks_exact_mut(d).zip(&st.error) {
            if e != 0.0 {
                for (x, &h) in row.iter_mut().zip(&st.hidden) {
                    *x += s * e * h;
                }
            }
        }
    }
    let lhs = (positive_loglik(&step, group)? - positive_loglik(params, group)?) / eta;

    let thr = thr_group(group, &gram_pair(group));
    let weighted: f64 = thr
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let c = if group.reward_of_token(t) == 1 { qplus } else { qminus };
            c * x
        })
        .sum();
    let rhs = weighted / (z * temp * temp);
    Ok(IdentityReport::new(lhs, rhs, eta))
}

/// Entropy change at `ctx_o` after one readout step of size `η` on
/// `log π(token_u | ctx_u)`, against
/// `η · H(π_o) · ⟨−Q − π_o, e_u − π_u⟩ · ⟨h_u, h_o⟩`.
pub fn cross_context_entropy_check(
    params: &PolicyParams,
    ctx_o: &ContextKey,
    ctx_u: &ContextKey,
    token_u: TokenId,
    eta: f64,
) -> Result<IdentityReport> {
    let pi_o = params.dist(ctx_o, 1.0)?;
    let q = q_vector(&pi_o.probs).ok_or(Error::ZeroEntropyContext)?;
    let pi_u = params.dist(ctx_u, 1.0)?;
    let err_u = pi_u.error_vector(token_u);
    let h_u = params.feature(ctx_u).into_owned();
    let h_o = params.feature(ctx_o).into_owned();

    let mut moved = params.clone();
    let d = moved.dim();
    for (row, &e) in moved.readout_mut().chunks_exact_mut(d).zip(&err_u) {
        for (x, &h) in row.iter_mut().zip(&h_u) {
            *x += eta * e * h;
        }
    }
    let lhs = moved.dist(ctx_o, 1.0)?.entropy - pi_o.entropy;

    let neg_q_pi: Vec<f64> = q.iter().zip(&pi_o.probs).map(|(q, p)| -q - p).collect();
    let rhs = eta * pi_o.entropy * dot(&neg_q_pi, &err_u) * dot(&h_u, &h_o);
    Ok(IdentityReport::new(lhs, rhs, eta))
}

/// Cosine between `e_o − π` and `Q + π`.
pub fn q_alignment_cosine(probs: &[f64], o: usize) -> Result<f64> {
    let q = q_vector(probs).ok_or_else(|| Error::DegenerateDistribution("zero entropy".into()))?;
    let a: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(v, &p)| f64::from(u8::from(v == o)) - p)
        .collect();
    let b: Vec<f64> = q.iter().zip(probs).map(|(q, p)| q + p).collect();
    let (na, nb) = (dot(&a, &a).sqrt(), dot(&b, &b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateDistribution("zero-length alignment vector".into()));
    }
    Ok(dot(&a, &b) / (na * nb))
}

/// A distribution with `π[0] = π*` and the rest spread as a flat Dirichlet,
/// redrawn until every tail entry is below `π*`.
pub fn peaked_distribution<R: Rng>(v: usize, pstar: f64, rng: &mut R) -> Result<Vec<f64>> {
    if v < 2 || !(pstar > 1.0 / v as f64 && pstar < 1.0) {
        return Err(Error::DegenerateDistribution(format!(
            "π* = {pstar} must lie in (1/V, 1) for V = {v}"
        )));
    }
    for _ in 0..100_000 {
        let draws: Vec<f64> = (1..v).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        let mut probs = Vec::with_capacity(v);
        probs.push(pstar);
        probs.extend(draws.iter().map(|x| x / total * (1.0 - pstar)));
        if probs[1..].iter().all(|&p| p < pstar) {
            return Ok(probs);
        }
    }
    Err(Error::DegenerateDistribution(format!(
        "could not draw a tail below π* = {pstar} for V = {v}"
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAlignRow {
    pub vocab: usize,
    pub pstar: f64,
    pub mean_cosine: f64,
    pub std_err: f64,
}

/// Mean alignment cosine at the argmax token for each `(V, π*)`.
pub fn q_alignment_sweep<R: Rng>(
    vocab_sizes: &[usize],
    pstars: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<Vec<QAlignRow>> {
    let mut rows = Vec::new();
    for &v in vocab_sizes {
        for &pstar in pstars {
            let mut cos = Vec::with_capacity(trials);
            for _ in 0..trials {
                cos.push(q_alignment_cosine(&peaked_distribution(v, pstar, rng)?, 0)?);
            }
            let n = cos.len().max(1) as f64;
            let mean = cos.iter().sum::<f64>() / n;
            let var = if cos.len() > 1 {
                cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            rows.push(QAlignRow {
                vocab: v,
                pstar,
                mean_cosine: mean,
                std_err: (var / n).sqrt(),
            });
        }
    }
    Ok(rows)
}
