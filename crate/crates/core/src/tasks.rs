//! Synthetic verifiable task: emit tokens whose sum is congruent to the
//! question's target modulo `M`, then stop with `eos`.
//!
//! Any permutation of a correct answer's content tokens is also correct, so
//! every question has many distinct solutions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{TokenId, Vocab};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub vocab: Vocab,
    pub modulus: u64,
    pub max_len: usize,
    pub n_questions: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modulus == 0 {
            return Err(Error::Config("modulus must be positive".into()));
        }
        if self.modulus > self.vocab.size() as u64 - 1 {
            return Err(Error::Config(format!(
                "modulus {} exceeds V - 1 = {}",
                self.modulus,
                self.vocab.size() - 1
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    pub target: u64,
}

pub fn generate_dataset(spec: &TaskSpec) -> Vec<Question> {
    let mut rng = rng::substream(&[tag::DATASET, spec.seed, spec.modulus]);
    (0..spec.n_questions as u64)
        .map(|id| Question {
            id,
            target: rng.random_range(0..spec.modulus),
        })
        .collect()
}

/// 1 iff the sequence ends in `eos`, fits in `max_len`, and its content
/// tokens sum to the target modulo `M`.
pub fn reward(spec: &TaskSpec, q: &Question, tokens: &[TokenId]) -> u8 {
    let eos = spec.vocab.eos();
    match tokens.split_last() {
        Some((&last, body)) if last == eos && tokens.len() <= spec.max_len => {
            let sum: u64 = body.iter().filter(|&&t| t != eos).map(|&t| t as u64).sum();
            u8::from(sum % spec.modulus == q.target % spec.modulus)
        }
        _ => 0,
    }
}

/// One JSON object per line: `{"id":..,"target":..}`.
pub fn dump_dataset(questions: &[Question]) -> String {
    let mut out = String::new();
    for q in questions {
        out.push_str(&serde_json::to_string(q).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

/// Parses a dataset dump, checking every target against `modulus`.
pub fn parse_dataset(text: &str, modulus: u64) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(line).map_err(|e| Error::Record {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if q.target >= modulus {
            return Err(Error::Record {
                line: i + 1,
                reason: format!("target {} outside [0, {modulus})", q.target),
            });
        }
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(v: usize, m: u64, l: usize, n: usize) -> TaskSpec {
        TaskSpec {
            vocab: Vocab::with_trailing_eos(v).unwrap(),
            modulus: m,
            max_len: l,
            n_questions: n,
            seed: 7,
        }
    }

    #[test]
    fn validation() {
        assert!(spec(12, 7, 5, 4).validate().is_ok());
        assert!(spec(6, 6, 5, 4).validate().is_err());
        assert!(spec(6, 3, 1, 4).validate().is_err());
        assert!(spec(6, 0, 3, 4).validate().is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let s = spec(12, 7, 5, 50);
        assert_eq!(generate_dataset(&s), generate_dataset(&s));
        assert!(generate_dataset(&spec(12, 7, 5, 0)).is_empty());
    }

    #[test]
    fn targets_pass_chi_square() {
        let s = spec(12, 7, 5, 10_000);
        let mut counts = [0f64; 7];
        for q in generate_dataset(&s) {
            counts[q.target as usize] += 1.0;
        }
        let expected = 10_000.0 / 7.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 6 degrees of freedom.
        assert!(chi2 < 22.458, "chi2 = {chi2}");
    }

    #[test]
    fn reward_cases() {
        let s = spec(12, 5, 5, 1);
        let eos = s.vocab.eos();
        let q = Question { id: 0, target: 3 };
        assert_eq!(reward(&s, &q, &[1, 2, eos]), 1);
        assert_eq!(reward(&s, &q, &[]), 0);
        assert_eq!(reward(&s, &q, &[1, 2]), 0);
        assert_eq!(reward(&s, &q, &[1, 1, 1, 5, eos]), 1);
        assert_eq!(reward(&s, &q, &[1, 1, 1, 0, 5, eos]), 0, "too long");
        assert_eq!(reward(&s, &q, &[eos]), 0, "empty sum is 0, not 3");
        assert_eq!(reward(&s, &Question { id: 0, target: 0 }, &[eos]), 1);
    }

    #[test]
    fn correct_answer_multiplicity() {
        // Count correct answers of each length by enumeration on a small vocabulary.
        let s = spec(5, 3, 4, 1);
        let eos = s.vocab.eos();
        let content: Vec<TokenId> = (0..s.vocab.size() as TokenId).filter(|&t| t != eos).collect();
        for target in 0..s.modulus {
            let q = Question { id: 0, target };
            let mut correct = 0usize;
            let mut stack: Vec<Vec<TokenId>> = vec![vec![]];
            while let Some(body) = stack.pop() {
                let mut full = body.clone();
                full.push(eos);
                correct += reward(&s, &q, &full) as usize;
                if body.len() + 1 < s.max_len {
                    for &t in &content {
                        let mut b = body.clone();
                        b.push(t);
                        stack.push(b);
                    }
                }
            }
            let bound = ((s.vocab.size() - 1) as f64).powi(s.max_len as i32 - 2) / s.modulus as f64;
            assert!(correct as f64 >= bound.ceil(), "target {target}: {correct}");
        }
    }

    #[test]
    fn dump_parse_roundtrip_and_errors() {
        let qs = generate_dataset(&spec(12, 7, 5, 5));
        assert_eq!(parse_dataset(&dump_dataset(&qs), 7).unwrap(), qs);
        assert!(parse_dataset("{\"id\":0,\"target\":9}\n", 7).is_err());
        assert!(parse_dataset("not json", 7).is_err());
    }

    proptest! {
        #[test]
        fn reward_is_permutation_invariant(
            body in proptest::collection::vec(0u32..11, 0..4),
            target in 0u64..7,
            rot in 0usize..4,
        ) {
            let s = spec(12, 7, 5, 1);
            let q = Question { id: 0, target };
            let mut a = body.clone();
            a.push(11);
            let mut b = body.clone();
            if !b.is_empty() {
                let r = rot % b.len();
                b.rotate_left(r);
                b.reverse();
            }
            b.push(11);
            prop_assert_eq!(reward(&s, &q, &a), reward(&s, &q, &b));
        }
    }
}
