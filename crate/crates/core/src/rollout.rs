//! Group sampling from the frozen old policy, with dynamic sampling and the
//! per-token statistics that THR scoring needs.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::{ContextKey, PolicyParams, TokenDist, TokenId};
use crate::rng::{self, tag};
use crate::tasks::{self, Question, TaskSpec};

/// Old-policy statistics at one generated position.
#[derive(Clone, Debug)]
pub struct TokenStats {
    pub ctx: ContextKey,
    pub token: TokenId,
    pub dist: TokenDist,
    /// `e_token − π_old(·|ctx)`.
    pub error: Vec<f64>,
    /// Feature vector of `ctx` under the old policy.
    pub hidden: Vec<f64>,
    /// (response index, position).
    pub owner: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct Response {
    pub tokens: Vec<TokenId>,
    pub reward: u8,
    pub old_logprobs: Vec<f64>,
    /// Range into [`Group::flat_stats`].
    pub stats: Range<usize>,
}

impl Response {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_correct(&self) -> bool {
        self.reward == 1
    }
}

#[derive(Clone, Debug)]
pub struct Group {
    pub question: Question,
    pub responses: Vec<Response>,
    pub flat_stats: Vec<TokenStats>,
    pub q: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub temperature: f64,
}

impl Group {
    /// Builds a group from explicit sequences and rewards, caching
    /// statistics from `old`.
    pub fn from_parts(
        old: &PolicyParams,
        question: Question,
        sequences: Vec<Vec<TokenId>>,
        rewards: &[u8],
        temperature: f64,
    ) -> Result<Self> {
        assert_eq!(sequences.len(), rewards.len(), "one reward per response");
        let mut flat_stats = Vec::new();
        let mut responses = Vec::with_capacity(sequences.len());
        for (i, (tokens, &reward)) in sequences.into_iter().zip(rewards).enumerate() {
            let start = flat_stats.len();
            let mut old_logprobs = Vec::with_capacity(tokens.len());
            let mut ctx = ContextKey::root(question.id);
            for (k, &token) in tokens.iter().enumerate() {
                let dist = old.dist(&ctx, temperature)?;
                old_logprobs.push(dist.log_prob(token));
                let error = dist.error_vector(token);
                let hidden = old.feature(&ctx).into_owned();
                flat_stats.push(TokenStats {
                    ctx: ctx.clone(),
                    token,
                    dist,
                    error,
                    hidden,
                    owner: (i, k),
                });
                ctx.prefix.push(token);
            }
            responses.push(Response {
                tokens,
                reward,
                old_logprobs,
                stats: start..flat_stats.len(),
            });
        }
        let n_pos = responses.iter().filter(|r| r.is_correct()).count();
        let g = responses.len();
        Ok(Self {
            question,
            q: if g == 0 { 0.0 } else { n_pos as f64 / g as f64 },
            n_pos,
            n_neg: g - n_pos,
            responses,
            flat_stats,
            temperature,
        })
    }

    pub fn group_size(&self) -> usize {
        self.responses.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.flat_stats.len()
    }

    /// `0 < q < 1`.
    pub fn is_mixed(&self) -> bool {
        self.n_pos > 0 && self.n_neg > 0
    }

    /// Reward of the response owning flat token `t`.
    pub fn reward_of_token(&self, t: usize) -> u8 {
        self.responses[self.flat_stats[t].owner.0].reward
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.flat_stats.iter().map(|s| s.dist.entropy).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    pub group_size: usize,
    pub temperature: f64,
    pub max_len: usize,
}

/// Samples tokens until `eos` or `max_len`.
pub fn sample_response<R: Rng>(
    params: &PolicyParams,
    question_id: u64,
    temperature: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    let eos = params.vocab().eos();
    let mut ctx = ContextKey::root(question_id);
    while ctx.prefix.len() < max_len {
        let dist = params.dist(&ctx, temperature)?;
        let t = sample_token(&dist, rng);
        ctx.prefix.push(t);
        if t == eos {
            break;
        }
    }
    Ok(ctx.prefix)
}

pub fn sample_token<R: Rng>(dist: &TokenDist, rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, &p) in dist.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return v as TokenId;
        }
    }
    // Rounding left u above the cumulative sum: take the last nonzero entry.
    dist.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as TokenId
}

pub fn sample_group<R: Rng>(
    old: &PolicyParams,
    task: &TaskSpec,
    question: &Question,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Group> {
    if cfg.group_size < 2 {
        return Err(Error::Config(format!("group size {} < 2", cfg.group_size)));
    }
    let mut seqs = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        seqs.push(sample_response(old, question.id, cfg.temperature, cfg.max_len, rng)?);
    }
    let rewards: Vec<u8> = seqs.iter().map(|s| tasks::reward(task, question, s)).collect();
    Group::from_parts(old, *question, seqs, &rewards, cfg.temperature)
}

/// Dynamic-sampling request: where in the dataset cycle to start and how
/// hard to try.
#[derive(Clone, Copy, Debug)]
pub struct BatchRequest {
    pub batch_groups: usize,
    pub max_attempts: usize,
    pub seed: u64,
    pub step: u64,
    pub parallel: bool,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub groups: Vec<Group>,
    pub attempts: usize,
}

/// Samples groups for successive questions (cycling from `*cursor`) and keeps
/// only those with mixed rewards. Each attempt draws from its own substream
/// keyed by (seed, step, attempt, question), so the parallel and serial paths
/// produce identical batches.
pub fn dynamic_sample_batch(
    old: &PolicyParams,
    task: &TaskSpec,
    questions: &[Question],
    cfg: &SamplingConfig,
    req: &BatchRequest,
    cursor: &mut usize,
) -> Result<Batch> {
    if req.batch_groups == 0 {
        return Err(Error::Config("batch_groups must be at least 1".into()));
    }
    if questions.is_empty() {
        return Err(Error::Config("empty question set".into()));
    }
    let mut kept: Vec<Group> = Vec::with_capacity(req.batch_groups);
    let mut attempts = 0usize;
    while kept.len() < req.batch_groups && attempts < req.max_attempts {
        let wave = (req.batch_groups - kept.len()).min(req.max_attempts - attempts);
        let jobs: Vec<(usize, Question)> = (0..wave)
            .map(|j| (attempts + j, questions[(*cursor + j) % questions.len()]))
            .collect();
        *cursor = (*cursor + wave) % questions.len();
        attempts += wave;
        let run = |&(attempt, q): &(usize, Question)| {
            let mut rng = rng::substream(&[tag::ROLLOUT, req.seed, req.step, attempt as u64, q.id]);
            sample_group(old, task, &q, cfg, &mut rng)
        };
        let sampled: Vec<Result<Group>> = if req.parallel {
            jobs.par_iter().map(run).collect()
        } else {
            jobs.iter().map(run).collect()
        };
        for g in sampled {
            let g = g?;
            if g.is_mixed() {
                kept.push(g);
            }
        }
    }
    if kept.len() < req.batch_groups {
        return Err(Error::BatchStarvation {
            wanted: req.batch_groups,
            collected: kept.len(),
            attempts,
        });
    }
    Ok(Batch { groups: kept, attempts })
}

#[derive(Serialize)]
struct RolloutRecord<'a> {
    question: u64,
    tokens: &'a [TokenId],
    reward: u8,
    old_logprob: f64,
}

/// One JSON object per response.
pub fn dump_rollouts(groups: &[Group]) -> String {
    let mut out = String::new();
    for g in groups {
        for r in &g.responses {
            let rec = RolloutRecord {
                question: g.question.id,
                tokens: &r.tokens,
                reward: r.reward,
                old_logprob: r.old_logprobs.iter().sum(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
    }
    out
}
