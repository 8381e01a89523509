//! Metric records.
//!
//! `metrics.jsonl` holds one `{"step":..,"key":..,"value":..}` object per
//! line; `eval.csv` has columns `step,metric,K,value` with `K = 0` for
//! metrics that take no K.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub key: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub value: f64,
}

pub fn metrics_jsonl(rows: &[MetricRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_metrics_jsonl(text: &str) -> Result<Vec<MetricRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Serializes rows with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let rows = vec![
            MetricRow {
                step: 3,
                key: "loss".into(),
                value: -0.125,
            },
            MetricRow {
                step: 4,
                key: "pass@16".into(),
                value: 0.1 + 0.2,
            },
        ];
        let text = metrics_jsonl(&rows);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"step":3,"key":"loss","value":-0.125}"#
        );
        assert_eq!(parse_metrics_jsonl(&text).unwrap(), rows);
        assert!(parse_metrics_jsonl("{\"step\":1}").is_err());
    }

    proptest::proptest! {
        #[test]
        fn jsonl_floats_roundtrip_exactly(bits in proptest::num::u64::ANY, step in 0u64..1000) {
            let value = f64::from_bits(bits);
            proptest::prop_assume!(value.is_finite());
            let rows = vec![MetricRow { step, key: "x".into(), value }];
            proptest::prop_assert_eq!(parse_metrics_jsonl(&metrics_jsonl(&rows)).unwrap(), rows);
        }
    }

    #[test]
    fn eval_csv_header() {
        let rows = vec![EvalRow {
            step: 10,
            metric: "pass_at_k".into(),
            k: 4,
            value: 0.5,
        }];
        assert_eq!(to_csv(&rows).unwrap(), "step,metric,K,value\n10,pass_at_k,4,0.5\n");
    }
}
