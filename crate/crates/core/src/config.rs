//! Run configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments and blank lines are ignored
//! scheme = thr_p
//! p = 0.2
//! eval_k = 1,4,16
//! ```

use std::fmt;
use std::str::FromStr;

use crate::advantage::PasskConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::objective::{ClipConfig, ObjectiveKind};
use crate::policy::Vocab;
use crate::rollout::{BatchRequest, SamplingConfig};
use crate::tasks::TaskSpec;
use crate::thr::{TauMode, ThrConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeName {
    Grpo,
    ThrOnly,
    ThrP,
    Passk,
    PasskMixed,
    StaticMixed,
    PosOnly,
    NegOnly,
    Covkl,
}

impl SchemeName {
    pub const ALL: [SchemeName; 9] = [
        SchemeName::Grpo,
        SchemeName::ThrOnly,
        SchemeName::ThrP,
        SchemeName::Passk,
        SchemeName::PasskMixed,
        SchemeName::StaticMixed,
        SchemeName::PosOnly,
        SchemeName::NegOnly,
        SchemeName::Covkl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Grpo => "grpo",
            SchemeName::ThrOnly => "thr_only",
            SchemeName::ThrP => "thr_p",
            SchemeName::Passk => "passk",
            SchemeName::PasskMixed => "passk_mixed",
            SchemeName::StaticMixed => "static_mixed",
            SchemeName::PosOnly => "pos_only",
            SchemeName::NegOnly => "neg_only",
            SchemeName::Covkl => "covkl",
        }
    }

    pub fn uses_thr(self) -> bool {
        matches!(self, SchemeName::ThrOnly | SchemeName::ThrP)
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Question-level advantages that THR reweighting is applied on top of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThrBase {
    Grpo,
    Passk,
    PasskMixed,
    StaticMixed,
}

impl ThrBase {
    fn as_str(self) -> &'static str {
        match self {
            ThrBase::Grpo => "grpo",
            ThrBase::Passk => "passk",
            ThrBase::PasskMixed => "passk_mixed",
            ThrBase::StaticMixed => "static_mixed",
        }
    }
}

impl FromStr for ThrBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ThrBase::Grpo, ThrBase::Passk, ThrBase::PasskMixed, ThrBase::StaticMixed]
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown THR base scheme {s:?}")))
    }
}

fn objective_str(o: ObjectiveKind) -> &'static str {
    match o {
        ObjectiveKind::Grpo => "grpo",
        ObjectiveKind::GspoToken => "gspo_token",
    }
}

fn tau_str(t: TauMode) -> &'static str {
    match t {
        TauMode::PositiveInfluence => "positive_influence",
        TauMode::AbsMean => "abs_mean",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // task and policy
    pub vocab: usize,
    pub dim: usize,
    pub sigma_h: f64,
    pub max_len: usize,
    pub modulus: u64,
    pub questions: usize,
    // training
    pub steps: u64,
    pub groups_per_batch: usize,
    pub updates_per_batch: usize,
    pub group_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub epsilon: f64,
    pub kl_coef: f64,
    pub max_attempts: usize,
    pub parallel: bool,
    // advantage shaping
    pub scheme: SchemeName,
    pub objective: ObjectiveKind,
    pub p: f64,
    pub k: usize,
    pub chi: f64,
    pub top_frac: f64,
    pub tau_mode: TauMode,
    pub entropy_aug: bool,
    pub entropy_top_frac: f64,
    pub thr_base: ThrBase,
    // evaluation
    pub eval_every: u64,
    pub eval_samples: usize,
    pub eval_k: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab: 12,
            dim: 8,
            sigma_h: 0.5,
            max_len: 5,
            modulus: 7,
            questions: 32,
            steps: 40,
            groups_per_batch: 8,
            updates_per_batch: 4,
            group_size: 8,
            lr: 2.0,
            temperature: 1.0,
            epsilon: 0.2,
            kl_coef: 1e-4,
            max_attempts: 0,
            parallel: true,
            scheme: SchemeName::Grpo,
            objective: ObjectiveKind::Grpo,
            p: 0.0,
            k: 4,
            chi: 0.2,
            top_frac: 0.2,
            tau_mode: TauMode::PositiveInfluence,
            entropy_aug: false,
            entropy_top_frac: 0.2,
            thr_base: ThrBase::Grpo,
            eval_every: 10,
            eval_samples: 64,
            eval_k: vec![1, 2, 4, 8, 16, 32, 64],
        }
    }
}

/// Every key accepted by [`RunConfig::set`], in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "vocab",
    "dim",
    "sigma_h",
    "max_len",
    "modulus",
    "questions",
    "steps",
    "groups_per_batch",
    "updates_per_batch",
    "group_size",
    "lr",
    "temperature",
    "epsilon",
    "kl_coef",
    "max_attempts",
    "parallel",
    "scheme",
    "objective",
    "p",
    "k",
    "chi",
    "top_frac",
    "tau_mode",
    "entropy_aug",
    "entropy_top_frac",
    "thr_base",
    "eval_every",
    "eval_samples",
    "eval_k",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "vocab" => self.vocab = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "sigma_h" => self.sigma_h = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "modulus" => self.modulus = parse(key, v)?,
            "questions" => self.questions = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "groups_per_batch" => self.groups_per_batch = parse(key, v)?,
            "updates_per_batch" => self.updates_per_batch = parse(key, v)?,
            "group_size" => self.group_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "kl_coef" => self.kl_coef = parse(key, v)?,
            "max_attempts" => self.max_attempts = parse(key, v)?,
            "parallel" => self.parallel = parse(key, v)?,
            "scheme" => self.scheme = v.parse()?,
            "objective" => {
                self.objective = match v {
                    "grpo" => ObjectiveKind::Grpo,
                    "gspo_token" => ObjectiveKind::GspoToken,
                    _ => return Err(Error::Config(format!("unknown objective {v:?}"))),
                }
            }
            "p" => self.p = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "chi" => self.chi = parse(key, v)?,
            "top_frac" => self.top_frac = parse(key, v)?,
            "tau_mode" => {
                self.tau_mode = match v {
                    "positive_influence" => TauMode::PositiveInfluence,
                    "abs_mean" => TauMode::AbsMean,
                    _ => return Err(Error::Config(format!("unknown tau_mode {v:?}"))),
                }
            }
            "entropy_aug" => self.entropy_aug = parse(key, v)?,
            "entropy_top_frac" => self.entropy_top_frac = parse(key, v)?,
            "thr_base" => self.thr_base = v.parse()?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_samples" => self.eval_samples = parse(key, v)?,
            "eval_k" => self.eval_k = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file's assignments on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Text form that [`from_text`](Self::from_text) reads back exactly.
    pub fn to_text(&self) -> String {
        let k: Vec<String> = self.eval_k.iter().map(|k| k.to_string()).collect();
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.vocab.to_string(),
            self.dim.to_string(),
            self.sigma_h.to_string(),
            self.max_len.to_string(),
            self.modulus.to_string(),
            self.questions.to_string(),
            self.steps.to_string(),
            self.groups_per_batch.to_string(),
            self.updates_per_batch.to_string(),
            self.group_size.to_string(),
            self.lr.to_string(),
            self.temperature.to_string(),
            self.epsilon.to_string(),
            self.kl_coef.to_string(),
            self.max_attempts.to_string(),
            self.parallel.to_string(),
            self.scheme.to_string(),
            objective_str(self.objective).to_string(),
            self.p.to_string(),
            self.k.to_string(),
            self.chi.to_string(),
            self.top_frac.to_string(),
            tau_str(self.tau_mode).to_string(),
            self.entropy_aug.to_string(),
            self.entropy_top_frac.to_string(),
            self.thr_base.as_str().to_string(),
            self.eval_every.to_string(),
            self.eval_samples.to_string(),
            k.join(","),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab < 3 {
            return bad(format!("vocab = {} must be at least 3", self.vocab));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if !(self.sigma_h.is_finite() && self.sigma_h >= 0.0) {
            return bad(format!("sigma_h = {} must be nonnegative", self.sigma_h));
        }
        self.task_spec()?.validate()?;
        if self.questions == 0 {
            return bad("questions must be positive".into());
        }
        if self.group_size < 2 {
            return bad(format!("group_size = {} must be at least 2", self.group_size));
        }
        if self.groups_per_batch == 0 {
            return bad("groups_per_batch must be positive".into());
        }
        if self.updates_per_batch == 0 || self.updates_per_batch > self.groups_per_batch {
            return bad(format!(
                "updates_per_batch = {} must lie in 1..={}",
                self.updates_per_batch, self.groups_per_batch
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr = {} must be nonnegative", self.lr));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature = {} must be positive", self.temperature));
        }
        self.clip_config().validate()?;
        self.thr_config().validate()?;
        if self.k == 0 || self.k > self.group_size {
            return bad(format!("k = {} must lie in 1..={}", self.k, self.group_size));
        }
        if !(0.0..=1.0).contains(&self.chi) {
            return bad(format!("chi = {} outside [0, 1]", self.chi));
        }
        if !(self.top_frac > 0.0 && self.top_frac <= 1.0) {
            return bad(format!("top_frac = {} outside (0, 1]", self.top_frac));
        }
        if self.scheme == SchemeName::Covkl && self.objective != ObjectiveKind::Grpo {
            return bad("covkl is defined on the grpo objective only".into());
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be positive".into());
        }
        if self.eval_k.is_empty() {
            return bad("eval_k must list at least one K".into());
        }
        if let Some(k) = self.eval_k.iter().find(|&&k| k == 0 || k > self.eval_samples) {
            return bad(format!("eval K = {k} must lie in 1..={}", self.eval_samples));
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        Ok(TaskSpec {
            vocab: Vocab::with_trailing_eos(self.vocab)?,
            modulus: self.modulus,
            max_len: self.max_len,
            n_questions: self.questions,
            seed: self.seed,
        })
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            group_size: self.group_size,
            temperature: self.temperature,
            max_len: self.max_len,
        }
    }

    pub fn clip_config(&self) -> ClipConfig {
        ClipConfig {
            epsilon: self.epsilon,
            kl_coef: self.kl_coef,
        }
    }

    /// THR settings; `thr_only` always reweights with `p = 0`.
    pub fn thr_config(&self) -> ThrConfig {
        ThrConfig {
            p: if self.scheme == SchemeName::ThrOnly {
                0.0
            } else {
                self.p
            },
            entropy_aug: self.entropy_aug,
            entropy_top_frac: self.entropy_top_frac,
            tau_mode: self.tau_mode,
        }
    }

    pub fn passk_config(&self) -> PasskConfig {
        PasskConfig {
            k: self.k,
            chi: self.chi,
        }
    }

    pub fn batch_request(&self, step: u64) -> BatchRequest {
        BatchRequest {
            batch_groups: self.groups_per_batch,
            max_attempts: if self.max_attempts == 0 {
                20 * self.groups_per_batch
            } else {
                self.max_attempts
            },
            seed: self.seed,
            step,
            parallel: self.parallel,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            samples: self.eval_samples,
            k_list: self.eval_k.clone(),
            temperature: self.temperature,
            max_len: self.max_len,
            seed: self.seed,
        }
    }
}
