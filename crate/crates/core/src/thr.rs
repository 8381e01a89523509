//! Token Hidden Reward.
//!
//! For a token at flat position `t'` of response `j`, its hidden reward
//! against a correct response `i` is
//!
//! ```text
//! THR(i, j, t') = (2 r_j − 1) Σ_{k ∈ i} ⟨e_k − π_k, e_t' − π_t'⟩ ⟨h_k, h_t'⟩
//! ```
//!
//! and its group score sums that over the correct responses weighted by
//! `1/|y_i|`. Both inner products come from the old-policy statistics
//! cached at rollout time, so everything here is a function of a [`Group`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::advantage::{AdvantageTable, Scheme};
use crate::error::{Error, Result};
use crate::policy::dot;
use crate::rollout::Group;

/// Error-vector and hidden-vector Gram matrices over all tokens of a group.
#[derive(Clone, Debug)]
pub struct GramPair {
    pub tokens: usize,
    /// `A[t, t'] = ⟨e_t − π_t, e_t' − π_t'⟩`, row-major.
    pub alpha: Vec<f64>,
    /// `S[t, t'] = ⟨h_t, h_t'⟩`, row-major.
    pub hidden: Vec<f64>,
}

impl GramPair {
    #[inline]
    pub fn a(&self, t: usize, u: usize) -> f64 {
        self.alpha[t * self.tokens + u]
    }

    #[inline]
    pub fn s(&self, t: usize, u: usize) -> f64 {
        self.hidden[t * self.tokens + u]
    }

    /// `A[t, u] · S[t, u]`.
    #[inline]
    pub fn interaction(&self, t: usize, u: usize) -> f64 {
        self.a(t, u) * self.s(t, u)
    }
}

pub fn gram_pair(group: &Group) -> GramPair {
    let n = group.total_tokens();
    let mut alpha = vec![0.0; n * n];
    let mut hidden = vec![0.0; n * n];
    for (t, st) in group.flat_stats.iter().enumerate() {
        for u in t..n {
            let su = &group.flat_stats[u];
            let a = dot(&st.error, &su.error);
            let s = dot(&st.hidden, &su.hidden);
            alpha[t * n + u] = a;
            alpha[u * n + t] = a;
            hidden[t * n + u] = s;
            hidden[u * n + t] = s;
        }
    }
    GramPair {
        tokens: n,
        alpha,
        hidden,
    }
}

fn sign_of_reward(r: u8) -> f64 {
    2.0 * r as f64 - 1.0
}

/// Hidden reward of token `k_prime` of response `j` against correct response `i_pos`.
pub fn thr_pairwise(group: &Group, grams: &GramPair, i_pos: usize, j: usize, k_prime: usize) -> Result<f64> {
    let pos = &group.responses[i_pos];
    if !pos.is_correct() {
        return Err(Error::NotPositiveResponse { index: i_pos });
    }
    let target = &group.responses[j];
    let u = target.stats.start + k_prime;
    assert!(u < target.stats.end, "position {k_prime} outside response {j}");
    let sum: f64 = pos.stats.clone().map(|k| grams.interaction(k, u)).sum();
    Ok(sign_of_reward(target.reward) * sum)
}

/// Group THR for every token: `Σ_{i correct} THR(i, j, k') / |y_i|`.
pub fn thr_group(group: &Group, grams: &GramPair) -> Vec<f64> {
    // Weight 1/|y_i| on tokens of correct responses, 0 elsewhere.
    let mut weight = vec![0.0; group.total_tokens()];
    for r in group.responses.iter().filter(|r| r.is_correct()) {
        let w = 1.0 / r.len() as f64;
        weight[r.stats.clone()].iter_mut().for_each(|x| *x = w);
    }
    (0..group.total_tokens())
        .map(|u| {
            let raw: f64 = weight
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(k, &w)| w * grams.interaction(k, u))
                .sum();
            sign_of_reward(group.reward_of_token(u)) * raw
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauMode {
    /// Mean influence of each correct response's tokens on the other correct
    /// responses, clamped at zero.
    PositiveInfluence,
    /// Mean absolute THR over all tokens.
    AbsMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThrConfig {
    pub p: f64,
    pub entropy_aug: bool,
    pub entropy_top_frac: f64,
    pub tau_mode: TauMode,
}

impl Default for ThrConfig {
    fn default() -> Self {
        Self {
            p: 0.0,
            entropy_aug: false,
            entropy_top_frac: 0.2,
            tau_mode: TauMode::PositiveInfluence,
        }
    }
}

impl ThrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("p = {} outside [-1, 1]", self.p)));
        }
        if !(self.entropy_top_frac > 0.0 && self.entropy_top_frac <= 1.0) {
            return Err(Error::Config(format!(
                "entropy_top_frac = {} outside (0, 1]",
                self.entropy_top_frac
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThrTable {
    pub thr: Vec<f64>,
    pub tau: f64,
    /// `|thr| > tau`, strictly.
    pub dominant: Vec<bool>,
    pub p: f64,
}

impl ThrTable {
    pub fn dominant_count(&self) -> usize {
        self.dominant.iter().filter(|&&d| d).count()
    }
}

/// Dominance threshold. Falls back to the absolute-mean rule when the group
/// has a single correct response, since "other correct responses" is empty.
pub fn tau_threshold(group: &Group, grams: &GramPair, thr: &[f64], cfg: &ThrConfig) -> f64 {
    let abs_mean = || {
        if thr.is_empty() {
            0.0
        } else {
            thr.iter().map(|x| x.abs()).sum::<f64>() / thr.len() as f64
        }
    };
    if cfg.tau_mode == TauMode::AbsMean || group.n_pos < 2 {
        return abs_mean();
    }
    let positives: Vec<usize> = (0..group.group_size())
        .filter(|&i| group.responses[i].is_correct())
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for &owner in &positives {
        for u in group.responses[owner].stats.clone() {
            let influence: f64 = positives
                .iter()
                .filter(|&&i| i != owner)
                .map(|&i| {
                    let r = &group.responses[i];
                    r.stats.clone().map(|k| grams.interaction(k, u)).sum::<f64>() / r.len() as f64
                })
                .sum();
            total += influence;
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    (total / count as f64).max(0.0)
}

/// Gram matrices, group THR, threshold and dominance mask in one pass.
pub fn score_group(group: &Group, cfg: &ThrConfig) -> ThrTable {
    let grams = gram_pair(group);
    let thr = thr_group(group, &grams);
    let tau = tau_threshold(group, &grams, &thr, cfg);
    let dominant = thr.iter().map(|x| x.abs() > tau).collect();
    ThrTable {
        thr,
        tau,
        dominant,
        p: cfg.p,
    }
}

/// Indices of the `n` largest values; ties go to the earlier index.
pub fn top_n_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Â' = 𝟙[|THR| > τ] · (1 + sign(THR) · p) · Â`.
///
/// With `entropy_aug`, non-dominant tokens among the top `entropy_top_frac`
/// by entropy keep their original advantage instead of being zeroed.
pub fn reweight(adv: &AdvantageTable, table: &ThrTable, cfg: &ThrConfig, entropies: &[f64]) -> AdvantageTable {
    assert_eq!(adv.values.len(), table.thr.len(), "tables must be aligned");
    let n = adv.values.len();
    let mut keep_plain = vec![false; n];
    if cfg.entropy_aug && n > 0 {
        assert_eq!(entropies.len(), n, "entropies must be aligned");
        let count = ((cfg.entropy_top_frac * n as f64).ceil() as usize).min(n);
        for i in top_n_indices(entropies, count) {
            keep_plain[i] = !table.dominant[i];
        }
    }
    if n > 0 && table.dominant_count() == 0 {
        log::warn!(
            "no dominant tokens (tau = {}); group contributes no THR-weighted gradient",
            table.tau
        );
    }
    let values = (0..n)
        .map(|i| {
            if table.dominant[i] {
                (1.0 + sign(table.thr[i]) * cfg.p) * adv.values[i]
            } else if keep_plain[i] {
                adv.values[i]
            } else {
                0.0
            }
        })
        .collect();
    AdvantageTable {
        values,
        scheme: Scheme::Thr {
            p: cfg.p,
            base: Box::new(adv.scheme.clone()),
        },
        ..adv.clone()
    }
}

/// Fraction of the top-`n` tokens by `|THR|` that are also in the top-`n` by
/// entropy. Returns 0 for `n = 0`.
pub fn entropy_thr_overlap(thr: &[f64], entropies: &[f64], n: usize) -> f64 {
    assert_eq!(thr.len(), entropies.len());
    assert!(n <= thr.len(), "n = {n} exceeds token count {}", thr.len());
    if n == 0 {
        return 0.0;
    }
    let abs: Vec<f64> = thr.iter().map(|x| x.abs()).collect();
    let mut by_thr = vec![false; thr.len()];
    for i in top_n_indices(&abs, n) {
        by_thr[i] = true;
    }
    let shared = top_n_indices(entropies, n).into_iter().filter(|&i| by_thr[i]).count();
    shared as f64 / n as f64
}

/// Flat CSV of per-token THR diagnostics for one group.
pub fn thr_csv(group: &Group, table: &ThrTable, before: &AdvantageTable, after: &AdvantageTable) -> String {
    let mut out =
        String::from("response,position,token,reward,thr,entropy,dominant,advantage_before,advantage_after\n");
    for (t, st) in group.flat_stats.iter().enumerate() {
        let (i, k) = st.owner;
        writeln!(
            out,
            "{i},{k},{},{},{},{},{},{},{}",
            st.token,
            group.responses[i].reward,
            table.thr[t],
            st.dist.entropy,
            u8::from(table.dominant[t]),
            before.values[t],
            after.values[t]
        )
        .expect("writing to String");
    }
    out
}
