//! Training loop.
//!
//! Each step snapshots the old policy, dynamically samples a batch of mixed
//! groups, shapes their advantages according to the scheme, and takes
//! `updates_per_batch` gradient steps, one per contiguous slice of the
//! batch, on the surrogate plus `β·KL` against the initial policy.

use std::path::Path;

use crate::advantage::{
    grpo_advantages, passk_advantages, passk_mixed, sign_mask, static_mixed, AdvantageTable, SignMode,
};
use crate::checkpoint;
use crate::config::{RunConfig, SchemeName, ThrBase};
use crate::error::{Error, Result};
use crate::eval::eval_suite;
use crate::metrics::{metrics_jsonl, to_csv, EvalRow, MetricRow};
use crate::objective::{covkl_baseline, total_loss_and_grad, LossReport, Scored};
use crate::policy::PolicyParams;
use crate::rollout::{dynamic_sample_batch, Group};
use crate::tasks::{generate_dataset, Question, TaskSpec};
use crate::thr::{entropy_thr_overlap, reweight, score_group, ThrConfig, ThrTable};

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: RunConfig,
    pub metrics: Vec<MetricRow>,
    pub evals: Vec<EvalRow>,
    pub params: PolicyParams,
}

impl RunRecord {
    /// Value of an eval metric at the last evaluated step.
    pub fn final_eval(&self, metric: &str, k: usize) -> Option<f64> {
        self.evals
            .iter()
            .rev()
            .find(|r| r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    pub fn final_greedy(&self) -> Option<f64> {
        self.final_eval("greedy_acc", 0)
    }

    pub fn final_pass(&self, k: usize) -> Option<f64> {
        self.final_eval("pass_at_k", k)
    }
}

fn base_advantages(cfg: &RunConfig, base: ThrBase, group: &Group) -> Result<AdvantageTable> {
    match base {
        ThrBase::Grpo => grpo_advantages(group),
        ThrBase::Passk => passk_advantages(group, &cfg.passk_config()),
        ThrBase::PasskMixed => passk_mixed(group, &cfg.passk_config()),
        ThrBase::StaticMixed => static_mixed(group, &cfg.passk_config()),
    }
}

/// Advantages for one group under the configured scheme, plus the THR table
/// when the scheme uses one.
pub fn scheme_advantages(cfg: &RunConfig, group: &Group) -> Result<(AdvantageTable, Option<ThrTable>)> {
    let adv = match cfg.scheme {
        SchemeName::Grpo | SchemeName::Covkl => grpo_advantages(group)?,
        SchemeName::Passk => base_advantages(cfg, ThrBase::Passk, group)?,
        SchemeName::PasskMixed => base_advantages(cfg, ThrBase::PasskMixed, group)?,
        SchemeName::StaticMixed => base_advantages(cfg, ThrBase::StaticMixed, group)?,
        SchemeName::PosOnly => sign_mask(&grpo_advantages(group)?, SignMode::PosOnly),
        SchemeName::NegOnly => sign_mask(&grpo_advantages(group)?, SignMode::NegOnly),
        SchemeName::ThrOnly | SchemeName::ThrP => {
            let base = base_advantages(cfg, cfg.thr_base, group)?;
            let thr_cfg = cfg.thr_config();
            let table = score_group(group, &thr_cfg);
            let out = reweight(&base, &table, &thr_cfg, &group.entropies());
            return Ok((out, Some(table)));
        }
    };
    Ok((adv, None))
}

/// Splits `n` items into `parts` contiguous ranges whose sizes differ by at most one.
fn partition(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    (0..parts).map(|i| i * n / parts..(i + 1) * n / parts).collect()
}

struct Recorder {
    rows: Vec<MetricRow>,
    evals: Vec<EvalRow>,
}

impl Recorder {
    fn push(&mut self, step: u64, key: &str, value: f64) {
        self.rows.push(MetricRow {
            step,
            key: key.to_string(),
            value,
        });
    }
}

fn evaluate(
    cfg: &RunConfig,
    task: &TaskSpec,
    questions: &[Question],
    params: &PolicyParams,
    step: u64,
    rec: &mut Recorder,
) -> Result<()> {
    let stats = eval_suite(params, task, questions, &cfg.eval_config())?;
    rec.push(step, "eval/greedy_acc", stats.greedy_acc);
    rec.evals.push(EvalRow {
        step,
        metric: "greedy_acc".into(),
        k: 0,
        value: stats.greedy_acc,
    });
    for (&k, &v) in &stats.pass_at_k {
        rec.push(step, &format!("eval/pass@{k}"), v);
        rec.evals.push(EvalRow {
            step,
            metric: "pass_at_k".into(),
            k,
            value: v,
        });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Fixed inputs shared by every step of a run.
struct RunEnv<'a> {
    cfg: &'a RunConfig,
    task: &'a TaskSpec,
    questions: &'a [Question],
    reference: &'a PolicyParams,
}

fn train_step(
    env: &RunEnv,
    params: &mut PolicyParams,
    cursor: &mut usize,
    step: u64,
    rec: &mut Recorder,
) -> Result<()> {
    let RunEnv {
        cfg,
        task,
        questions,
        reference,
    } = *env;
    let old = params.snapshot();
    let batch = dynamic_sample_batch(&old, task, questions, &cfg.sampling(), &cfg.batch_request(step), cursor)?;
    rec.push(step, "attempts", batch.attempts as f64);
    rec.push(
        step,
        "batch_q",
        mean(&batch.groups.iter().map(|g| g.q).collect::<Vec<_>>()),
    );

    let overlap_cfg = ThrConfig {
        tau_mode: cfg.tau_mode,
        ..ThrConfig::default()
    };
    let mut entropies = Vec::new();
    let mut overlaps = Vec::new();
    let mut taus = Vec::new();
    let mut dominant = Vec::new();
    let mut scored: Vec<Scored> = Vec::with_capacity(batch.groups.len());
    for group in batch.groups {
        let (adv, table) = scheme_advantages(cfg, &group)?;
        let table = table.unwrap_or_else(|| score_group(&group, &overlap_cfg));
        let ent = group.entropies();
        let n = table.dominant_count();
        if n > 0 {
            overlaps.push(entropy_thr_overlap(&table.thr, &ent, n));
        }
        taus.push(table.tau);
        dominant.push(n as f64 / ent.len().max(1) as f64);
        entropies.extend(ent);
        scored.push((group, adv));
    }
    rec.push(step, "entropy_mean", mean(&entropies));
    rec.push(step, "thr_tau", mean(&taus));
    rec.push(step, "thr_dominant_frac", mean(&dominant));
    if !overlaps.is_empty() {
        rec.push(step, "thr_entropy_overlap", mean(&overlaps));
    }

    let mut reports: Vec<LossReport> = Vec::with_capacity(cfg.updates_per_batch);
    for range in partition(scored.len(), cfg.updates_per_batch) {
        let mini = &scored[range];
        let (report, grads) = if cfg.scheme == SchemeName::Covkl {
            covkl_baseline(params, reference, mini, cfg.top_frac, &cfg.clip_config())?
        } else {
            total_loss_and_grad(params, reference, mini, cfg.objective, &cfg.clip_config())?
        };
        params.sgd_step(&grads, cfg.lr);
        reports.push(report);
    }
    let avg = |f: fn(&LossReport) -> f64| mean(&reports.iter().map(f).collect::<Vec<_>>());
    rec.push(step, "surrogate", avg(|r| r.surrogate));
    rec.push(step, "kl", avg(|r| r.kl));
    rec.push(step, "loss", avg(|r| r.total));
    rec.push(step, "clipped_fraction", avg(|r| r.clipped_fraction));
    rec.push(step, "grad_norm", avg(|r| r.grad_norm));
    Ok(())
}

/// Runs a full training job in memory. Steps are numbered from 1; step 0
/// is the evaluation of the initial policy.
pub fn train(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let task = cfg.task_spec()?;
    let questions = generate_dataset(&task);
    let mut params = PolicyParams::new(task.vocab, cfg.dim, cfg.sigma_h, cfg.seed)?;
    let reference = params.snapshot();
    let mut rec = Recorder {
        rows: Vec::new(),
        evals: Vec::new(),
    };
    let mut cursor = 0usize;
    let env = RunEnv {
        cfg,
        task: &task,
        questions: &questions,
        reference: &reference,
    };
    evaluate(cfg, &task, &questions, &params, 0, &mut rec)?;
    for step in 1..=cfg.steps {
        train_step(&env, &mut params, &mut cursor, step, &mut rec)
            .and_then(|_| {
                if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps {
                    evaluate(cfg, &task, &questions, &params, step, &mut rec)?;
                }
                Ok(())
            })
            .map_err(|e| Error::AtStep {
                step,
                source: Box::new(e),
            })?;
        log::debug!("step {step} done");
    }
    Ok(RunRecord {
        config: cfg.clone(),
        metrics: rec.rows,
        evals: rec.evals,
        params,
    })
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Writes `config.txt`, `metrics.jsonl`, `eval.csv` and `checkpoint.bin` into `dir`.
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), record.config.to_text())?;
    std::fs::write(dir.join(METRICS_FILE), metrics_jsonl(&record.metrics))?;
    std::fs::write(dir.join(EVAL_FILE), to_csv(&record.evals)?)?;
    checkpoint::save(&record.params, &dir.join(CHECKPOINT_FILE))?;
    Ok(())
}
