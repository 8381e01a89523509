//! Clipped surrogate losses with analytic gradients.
//!
//! Every loss here is a minimization target: `total = −surrogate + β·kl`.
//! Ratios are taken against the `old_logprobs` cached in each [`Group`], so
//! the old policy itself never needs to be re-evaluated.

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageTable;
use crate::error::{Error, Result};
use crate::policy::{dot, Gradients, PolicyParams, TokenDist};
use crate::rollout::Group;
use crate::thr::top_n_indices;

/// A group paired with its per-token advantages.
pub type Scored = (Group, AdvantageTable);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub epsilon: f64,
    pub kl_coef: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            kl_coef: 1e-4,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon = {} outside (0, 1)", self.epsilon)));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::Config(format!("kl_coef = {} must be nonnegative", self.kl_coef)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub surrogate: f64,
    pub kl: f64,
    pub total: f64,
    pub clipped_fraction: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Grpo,
    GspoToken,
}

fn check_group(group: &Group, adv: &AdvantageTable) -> Result<()> {
    if !group.is_mixed() {
        return Err(Error::GroupDegenerate { q: group.q });
    }
    assert_eq!(
        adv.values.len(),
        group.total_tokens(),
        "advantages must align with the group's tokens"
    );
    Ok(())
}

/// `∂ log π(token) / ∂ logits` at temperature `t`.
fn logprob_logit_grad(dist: &TokenDist, token: u32, t: f64) -> Vec<f64> {
    dist.error_vector(token).into_iter().map(|e| e / t).collect()
}

/// `min(ρÂ, clip(ρ)Â)` and whether the clipped branch was strictly chosen.
fn clipped_term(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let plain = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if clipped < plain {
        (clipped, true)
    } else {
        (plain, false)
    }
}

struct Accum {
    surrogate: f64,
    clipped: usize,
    tokens: usize,
    grads: Gradients,
}

impl Accum {
    fn new(params: &PolicyParams) -> Self {
        Self {
            surrogate: 0.0,
            clipped: 0,
            tokens: 0,
            grads: Gradients::zeros(params),
        }
    }

    fn report(self) -> (LossReport, Gradients) {
        let report = LossReport {
            surrogate: self.surrogate,
            kl: 0.0,
            total: -self.surrogate,
            clipped_fraction: if self.tokens == 0 {
                0.0
            } else {
                self.clipped as f64 / self.tokens as f64
            },
            grad_norm: self.grads.norm(),
        };
        (report, self.grads)
    }
}

/// Clipped GRPO surrogate: per group `(1/Σ|y_i|) Σ_tokens min(γÂ, clip(γ)Â)`,
/// averaged over groups. Gradients are of `−surrogate`.
pub fn grpo_loss_and_grad(
    params: &PolicyParams,
    groups: &[Scored],
    cfg: &ClipConfig,
) -> Result<(LossReport, Gradients)> {
    let mut acc = Accum::new(params);
    let n = groups.len() as f64;
    for (group, adv) in groups {
        check_group(group, adv)?;
        let w = 1.0 / (n * group.total_tokens() as f64);
        let temp = group.temperature;
        for (t, st) in group.flat_stats.iter().enumerate() {
            let dist = params.dist(&st.ctx, temp)?;
            let old = group.responses[st.owner.0].old_logprobs[st.owner.1];
            let ratio = (dist.log_prob(st.token) - old).exp();
            let a = adv.values[t];
            let (value, clipped) = clipped_term(ratio, a, cfg.epsilon);
            acc.surrogate += w * value;
            acc.tokens += 1;
            if clipped {
                acc.clipped += 1;
            } else if a != 0.0 {
                let dl = logprob_logit_grad(&dist, st.token, temp);
                acc.grads.add_logit_grad(params, &st.ctx, &dl, -w * ratio * a);
            }
        }
    }
    Ok(acc.report())
}

/// Current log-probabilities of every token of a group, with their distributions.
fn current_logprobs(params: &PolicyParams, group: &Group) -> Result<Vec<(TokenDist, f64)>> {
    group
        .flat_stats
        .iter()
        .map(|st| {
            let d = params.dist(&st.ctx, group.temperature)?;
            let lp = d.log_prob(st.token);
            Ok((d, lp))
        })
        .collect()
}

fn ratio_from(group: &Group, i: usize, current: &[(TokenDist, f64)]) -> f64 {
    let r = &group.responses[i];
    if r.is_empty() {
        return 1.0;
    }
    let sum: f64 = r
        .stats
        .clone()
        .zip(&r.old_logprobs)
        .map(|(t, old)| current[t].1 - old)
        .sum();
    (sum / r.len() as f64).exp()
}

/// Length-normalized sequence ratio `s_i = exp(mean_k (log π − log π_old))`.
pub fn gspo_ratio(params: &PolicyParams, group: &Group, i: usize) -> Result<f64> {
    let r = &group.responses[i];
    let mut sum = 0.0;
    for (t, old) in r.stats.clone().zip(&r.old_logprobs) {
        let st = &group.flat_stats[t];
        sum += params.dist(&st.ctx, group.temperature)?.log_prob(st.token) - old;
    }
    Ok(if r.is_empty() {
        1.0
    } else {
        (sum / r.len() as f64).exp()
    })
}

/// GSPO-token: per group `(1/G) Σ_i (1/|y_i|) Σ_k min(s_i Â, clip(s_i) Â)`.
///
/// The token ratio is `sg[s_i] · π/sg[π]`, so its value is `s_i` and its
/// gradient is `s_i ∇log π(y_k)`: no gradient flows through `s_i`.
pub fn gspo_token_loss_and_grad(
    params: &PolicyParams,
    groups: &[Scored],
    cfg: &ClipConfig,
) -> Result<(LossReport, Gradients)> {
    let mut acc = Accum::new(params);
    let n = groups.len() as f64;
    for (group, adv) in groups {
        check_group(group, adv)?;
        let current = current_logprobs(params, group)?;
        let g = group.group_size() as f64;
        for (i, r) in group.responses.iter().enumerate() {
            if r.is_empty() {
                continue;
            }
            let s = ratio_from(group, i, &current);
            let w = 1.0 / (n * g * r.len() as f64);
            for t in r.stats.clone() {
                let a = adv.values[t];
                let (value, clipped) = clipped_term(s, a, cfg.epsilon);
                acc.surrogate += w * value;
                acc.tokens += 1;
                if clipped {
                    acc.clipped += 1;
                } else if a != 0.0 {
                    let st = &group.flat_stats[t];
                    let dl = logprob_logit_grad(&current[t].0, st.token, group.temperature);
                    acc.grads.add_logit_grad(params, &st.ctx, &dl, -w * s * a);
                }
            }
        }
    }
    Ok(acc.report())
}

/// Sequence-level GSPO surrogate `(1/G) Σ_i min(s_i Â_i, clip(s_i) Â_i)`, with
/// `Â_i` read from each response's first token. Value only.
pub fn gspo_sequence_surrogate(params: &PolicyParams, groups: &[Scored], cfg: &ClipConfig) -> Result<f64> {
    let n = groups.len() as f64;
    let mut total = 0.0;
    for (group, adv) in groups {
        check_group(group, adv)?;
        let current = current_logprobs(params, group)?;
        let g = group.group_size() as f64;
        for (i, r) in group.responses.iter().enumerate() {
            if r.is_empty() {
                continue;
            }
            let s = ratio_from(group, i, &current);
            total += clipped_term(s, adv.values[r.stats.start], cfg.epsilon).0 / (n * g);
        }
    }
    Ok(total)
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `KL(p ‖ r)` and its gradient with respect to the logits of `p` at temperature `t`.
fn kl_and_logit_grad(p: &TokenDist, r: &TokenDist, t: f64) -> (f64, Vec<f64>) {
    let terms: Vec<f64> = p
        .probs
        .iter()
        .zip(&r.probs)
        .map(|(&pv, &rv)| if pv == 0.0 { 0.0 } else { pv.ln() - rv.ln() })
        .collect();
    let kl: f64 = p.probs.iter().zip(&terms).map(|(pv, d)| pv * d).sum();
    let grad = p.probs.iter().zip(&terms).map(|(pv, d)| pv * (d - kl) / t).collect();
    (kl, grad)
}

fn kl_masked(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[&Group],
    masks: Option<&[Vec<bool>]>,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(params);
    let mut total = 0.0;
    let n = groups.len() as f64;
    for (gi, group) in groups.iter().enumerate() {
        if group.total_tokens() == 0 {
            continue;
        }
        let w = 1.0 / (n * group.total_tokens() as f64);
        for (t, st) in group.flat_stats.iter().enumerate() {
            if masks.is_some_and(|m| !m[gi][t]) {
                continue;
            }
            let p = params.dist(&st.ctx, group.temperature)?;
            let r = reference.dist(&st.ctx, group.temperature)?;
            let (kl, dl) = kl_and_logit_grad(&p, &r, group.temperature);
            total += w * kl;
            grads.add_logit_grad(params, &st.ctx, &dl, w);
        }
    }
    Ok((total, grads))
}

/// Exact `KL(π_θ ‖ π_ref)` at every rollout token's context, normalized per
/// group by its token count and averaged over groups.
pub fn kl_penalty_and_grad<'a>(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: impl IntoIterator<Item = &'a Group>,
) -> Result<(f64, Gradients)> {
    let groups: Vec<&Group> = groups.into_iter().collect();
    kl_masked(params, reference, &groups, None)
}

/// Per-token `Cov_π(log π, Δl)` where `Δl` is the logit change predicted by a
/// readout-only step along the group's advantage-weighted score.
pub fn token_covariances(params: &PolicyParams, group: &Group, adv: &AdvantageTable) -> Result<Vec<f64>> {
    let n = group.total_tokens();
    let z = n.max(1) as f64;
    let mut dists = Vec::with_capacity(n);
    let mut hiddens = Vec::with_capacity(n);
    for st in &group.flat_stats {
        dists.push(params.dist(&st.ctx, group.temperature)?);
        hiddens.push(params.feature(&st.ctx).into_owned());
    }
    let errors: Vec<Vec<f64>> = dists
        .iter()
        .zip(&group.flat_stats)
        .map(|(d, st)| d.error_vector(st.token))
        .collect();
    let v = params.vocab().size();
    Ok((0..n)
        .map(|t| {
            let mut dl = vec![0.0; v];
            for u in 0..n {
                let a = adv.values[u];
                if a == 0.0 {
                    continue;
                }
                let c = a * dot(&hiddens[u], &hiddens[t]) / z;
                for (x, e) in dl.iter_mut().zip(&errors[u]) {
                    *x += c * e;
                }
            }
            let probs = &dists[t].probs;
            let plogp: Vec<f64> = probs.iter().map(|&p| xlogy(p, p)).collect();
            let e_logp: f64 = plogp.iter().sum();
            let e_dl = dot(probs, &dl);
            dot(&plogp, &dl) - e_logp * e_dl
        })
        .collect())
}

/// Flat indices of the `⌈top_frac · T⌉` highest-covariance tokens of a
/// group, ties to the earlier token.
pub fn covkl_select(params: &PolicyParams, group: &Group, adv: &AdvantageTable, top_frac: f64) -> Result<Vec<usize>> {
    let cov = token_covariances(params, group, adv)?;
    let count = ((top_frac * cov.len() as f64).ceil() as usize).min(cov.len());
    Ok(top_n_indices(&cov, count))
}

/// Vanilla GRPO loss plus `β·KL` restricted to the selected high-covariance tokens.
pub fn covkl_baseline(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[Scored],
    top_frac: f64,
    cfg: &ClipConfig,
) -> Result<(LossReport, Gradients)> {
    if !(top_frac > 0.0 && top_frac <= 1.0) {
        return Err(Error::Config(format!("top_frac = {top_frac} outside (0, 1]")));
    }
    let (mut report, mut grads) = grpo_loss_and_grad(params, groups, cfg)?;
    let mut masks = Vec::with_capacity(groups.len());
    for (group, adv) in groups {
        let mut mask = vec![false; group.total_tokens()];
        for t in covkl_select(params, group, adv, top_frac)? {
            mask[t] = true;
        }
        masks.push(mask);
    }
    let refs: Vec<&Group> = groups.iter().map(|(g, _)| g).collect();
    let (kl, kl_grads) = kl_masked(params, reference, &refs, Some(&masks))?;
    grads.add_scaled(&kl_grads, cfg.kl_coef);
    report.kl = kl;
    report.total = -report.surrogate + cfg.kl_coef * kl;
    report.grad_norm = grads.norm();
    Ok((report, grads))
}

/// Chosen surrogate plus `β·KL` against `reference`.
pub fn total_loss_and_grad(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[Scored],
    kind: ObjectiveKind,
    cfg: &ClipConfig,
) -> Result<(LossReport, Gradients)> {
    let (mut report, mut grads) = match kind {
        ObjectiveKind::Grpo => grpo_loss_and_grad(params, groups, cfg)?,
        ObjectiveKind::GspoToken => gspo_token_loss_and_grad(params, groups, cfg)?,
    };
    if cfg.kl_coef > 0.0 {
        let (kl, kl_grads) = kl_penalty_and_grad(params, reference, groups.iter().map(|(g, _)| g))?;
        grads.add_scaled(&kl_grads, cfg.kl_coef);
        report.kl = kl;
    }
    report.total = -report.surrogate + cfg.kl_coef * report.kl;
    report.grad_norm = grads.norm();
    Ok((report, grads))
}
