//! Question-level advantages: standardized GRPO rewards and the Pass@K
//! rescalings built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::Group;

/// Which shaping produced a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    Grpo,
    PassK {
        k: usize,
    },
    PassKMixed {
        k: usize,
    },
    StaticMixed {
        k: usize,
        chi: f64,
    },
    PosOnly(Box<Scheme>),
    NegOnly(Box<Scheme>),
    /// THR dominance mask and sign reweighting applied on top of a base scheme.
    Thr {
        p: f64,
        base: Box<Scheme>,
    },
}

/// Per-token advantages aligned with [`Group::flat_stats`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageTable {
    pub values: Vec<f64>,
    pub scheme: Scheme,
    pub qplus: f64,
    pub qminus: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PasskConfig {
    pub k: usize,
    pub chi: f64,
}

impl Default for PasskConfig {
    fn default() -> Self {
        Self { k: 4, chi: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignMode {
    PosOnly,
    NegOnly,
}

/// Exact binomial coefficient; zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

fn check_mixed(group: &Group) -> Result<()> {
    if group.is_mixed() {
        Ok(())
    } else {
        Err(Error::GroupDegenerate { q: group.q })
    }
}

/// `(q⁺, q⁻) = (√((1−q)/q), √(q/(1−q)))`.
pub fn q_weights(q: f64) -> (f64, f64) {
    (((1.0 - q) / q).sqrt(), (q / (1.0 - q)).sqrt())
}

fn per_response(group: &Group, pos: f64, neg: f64) -> Vec<f64> {
    let mut values = vec![0.0; group.total_tokens()];
    for r in &group.responses {
        let a = if r.is_correct() { pos } else { neg };
        values[r.stats.clone()].iter_mut().for_each(|v| *v = a);
    }
    values
}

pub fn grpo_advantages(group: &Group) -> Result<AdvantageTable> {
    check_mixed(group)?;
    let (qplus, qminus) = q_weights(group.q);
    Ok(AdvantageTable {
        values: per_response(group, qplus, -qminus),
        scheme: Scheme::Grpo,
        qplus,
        qminus,
    })
}

/// `C(N⁻, K) / C(G, K)`: chance that a size-K draw from the group holds no
/// correct response.
pub fn all_wrong_probability(g: usize, n_neg: usize, k: usize) -> f64 {
    binomial(n_neg as u64, k as u64) as f64 / binomial(g as u64, k as u64) as f64
}

/// Factor multiplying GRPO advantages under Pass@K shaping:
/// `√(B/(1−B)) · √(q/(1−q))`.
pub fn passk_scale(group: &Group, k: usize) -> Result<f64> {
    check_mixed(group)?;
    let g = group.group_size();
    if k > g {
        return Err(Error::KTooLarge { k, g });
    }
    if k == 0 {
        return Err(Error::Config("K must be positive".into()));
    }
    let b = all_wrong_probability(g, group.n_neg, k);
    Ok((b / (1.0 - b)).sqrt() * (group.q / (1.0 - group.q)).sqrt())
}

pub fn passk_advantages(group: &Group, cfg: &PasskConfig) -> Result<AdvantageTable> {
    let scale = passk_scale(group, cfg.k)?;
    let base = grpo_advantages(group)?;
    Ok(AdvantageTable {
        values: base.values.iter().map(|a| scale * a).collect(),
        scheme: Scheme::PassK { k: cfg.k },
        ..base
    })
}

/// `q · Â + (1 − q) · Â@K`.
pub fn passk_mixed(group: &Group, cfg: &PasskConfig) -> Result<AdvantageTable> {
    let scale = passk_scale(group, cfg.k)?;
    let base = grpo_advantages(group)?;
    let q = group.q;
    Ok(AdvantageTable {
        values: base.values.iter().map(|a| q * a + (1.0 - q) * scale * a).collect(),
        scheme: Scheme::PassKMixed { k: cfg.k },
        ..base
    })
}

/// `χ · Â@K + (1 − χ) · Â` with a question-independent `χ`.
pub fn static_mixed(group: &Group, cfg: &PasskConfig) -> Result<AdvantageTable> {
    if !(0.0..=1.0).contains(&cfg.chi) {
        return Err(Error::Config(format!("chi {} outside [0, 1]", cfg.chi)));
    }
    let scale = passk_scale(group, cfg.k)?;
    let base = grpo_advantages(group)?;
    let chi = cfg.chi;
    let values = if chi == 0.0 {
        base.values.clone()
    } else if chi == 1.0 {
        base.values.iter().map(|a| scale * a).collect()
    } else {
        base.values.iter().map(|a| chi * scale * a + (1.0 - chi) * a).collect()
    };
    Ok(AdvantageTable {
        values,
        scheme: Scheme::StaticMixed { k: cfg.k, chi },
        ..base
    })
}

/// Zeroes negative entries (`PosOnly`) or positive entries (`NegOnly`).
pub fn sign_mask(table: &AdvantageTable, mode: SignMode) -> AdvantageTable {
    let keep = |a: f64| match mode {
        SignMode::PosOnly => a >= 0.0,
        SignMode::NegOnly => a <= 0.0,
    };
    let scheme = Box::new(table.scheme.clone());
    AdvantageTable {
        values: table.values.iter().map(|&a| if keep(a) { a } else { 0.0 }).collect(),
        scheme: match mode {
            SignMode::PosOnly => Scheme::PosOnly(scheme),
            SignMode::NegOnly => Scheme::NegOnly(scheme),
        },
        ..table.clone()
    }
}
