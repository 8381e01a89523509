//! Greedy accuracy and unbiased Pass@K.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::binomial;
use crate::error::{Error, Result};
use crate::policy::{ContextKey, PolicyParams, TokenId};
use crate::rng::{self, tag};
use crate::rollout::sample_response;
use crate::tasks::{self, Question, TaskSpec};

/// Argmax decoding until `eos` or `max_len`; ties go to the smaller token id.
pub fn greedy_decode(params: &PolicyParams, q: &Question, max_len: usize) -> Result<Vec<TokenId>> {
    let eos = params.vocab().eos();
    let mut ctx = ContextKey::root(q.id);
    while ctx.prefix.len() < max_len {
        let t = params.dist(&ctx, 1.0)?.argmax();
        ctx.prefix.push(t);
        if t == eos {
            break;
        }
    }
    Ok(ctx.prefix)
}

/// `1 − C(M−C, K) / C(M, K)`, exact in integers up to `M = 64`.
pub fn pass_at_k(m: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > m || c > m {
        return Err(Error::BadArity { k, m, c });
    }
    if k == 1 {
        return Ok(c as f64 / m as f64);
    }
    if m - c < k {
        return Ok(1.0);
    }
    if m <= 64 {
        let miss = binomial((m - c) as u64, k as u64) as f64 / binomial(m as u64, k as u64) as f64;
        return Ok(1.0 - miss);
    }
    let miss: f64 = (0..k).map(|i| (m - c - i) as f64 / (m - i) as f64).product();
    Ok(1.0 - miss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub samples: usize,
    pub correct: Vec<usize>,
    pub pass_at_k: BTreeMap<usize, f64>,
    pub greedy_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub samples: usize,
    pub k_list: Vec<usize>,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

/// Samples `M` responses per question on its own substream and averages
/// Pass@K over questions; greedy accuracy is computed separately.
pub fn eval_suite(
    params: &PolicyParams,
    task: &TaskSpec,
    questions: &[Question],
    cfg: &EvalConfig,
) -> Result<EvalStats> {
    if let Some(&k) = cfg.k_list.iter().find(|&&k| k == 0 || k > cfg.samples) {
        return Err(Error::BadArity {
            k,
            m: cfg.samples,
            c: 0,
        });
    }
    let per_question: Vec<Result<(usize, u8)>> = questions
        .par_iter()
        .map(|q| {
            let mut rng = rng::substream(&[tag::EVAL, cfg.seed, q.id]);
            let mut c = 0usize;
            for _ in 0..cfg.samples {
                let y = sample_response(params, q.id, cfg.temperature, cfg.max_len, &mut rng)?;
                c += tasks::reward(task, q, &y) as usize;
            }
            let greedy = tasks::reward(task, q, &greedy_decode(params, q, cfg.max_len)?);
            Ok((c, greedy))
        })
        .collect();
    let mut correct = Vec::with_capacity(questions.len());
    let mut greedy_hits = 0usize;
    for r in per_question {
        let (c, g) = r?;
        correct.push(c);
        greedy_hits += g as usize;
    }
    let n = questions.len().max(1) as f64;
    let mut pass = BTreeMap::new();
    for &k in &cfg.k_list {
        let mut total = 0.0;
        for &c in &correct {
            total += pass_at_k(cfg.samples, c, k)?;
        }
        pass.insert(k, total / n);
    }
    Ok(EvalStats {
        samples: cfg.samples,
        correct,
        pass_at_k: pass,
        greedy_acc: greedy_hits as f64 / n,
    })
}
