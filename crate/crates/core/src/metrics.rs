//! Evaluation records, written one JSON object per line.
//!
//! Schema version 1 fields:
//!
//! | field | meaning |
//! |---|---|
//! | `schema_version` | always 1 |
//! | `step` | env steps taken when the record was made; strictly increasing |
//! | `policy_returns` | mean noiseless return of each sub-policy |
//! | `ensemble_mean_return` | mean of `policy_returns` |
//! | `estimation_bias` | mean over evaluated `(s, a)` of ensemble-mean Q minus the discounted Monte-Carlo return |
//! | `knn_state_entropy` | nearest-neighbor entropy (k = 3) of the distinct states the behavior ensemble visited in the last `min(eval_period, 10000)` training steps; null when too few |
//! | `discriminator_nll` | cross-entropy of the discriminator on evaluated `(s, a, z)` |
//! | `discriminator_accuracy` | argmax accuracy on the same pairs |
//! | `selected_index` | sub-policy currently receiving actor updates |
//! | `behavior_histogram` | training episodes started per sub-policy since the previous record |

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub step: u64,
    pub policy_returns: Vec<f64>,
    pub ensemble_mean_return: f64,
    pub estimation_bias: f64,
    pub knn_state_entropy: Option<f64>,
    pub discriminator_nll: f64,
    pub discriminator_accuracy: f64,
    pub selected_index: usize,
    pub behavior_histogram: Vec<u64>,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("record serializes");
        s.push('\n');
        s
    }
}

/// Appends one record and flushes.
pub fn append_record<W: Write>(out: &mut W, rec: &MetricsRecord) -> Result<()> {
    out.write_all(rec.to_json_line().as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Parses a metrics file, skipping blank lines.
pub fn read_records(text: &str) -> std::result::Result<Vec<MetricsRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_round_trip() {
        let rec = MetricsRecord {
            schema_version: SCHEMA_VERSION,
            step: 10,
            policy_returns: vec![1.0, 0.5],
            ensemble_mean_return: 0.75,
            estimation_bias: -0.1,
            knn_state_entropy: None,
            discriminator_nll: 0.69,
            discriminator_accuracy: 0.5,
            selected_index: 1,
            behavior_histogram: vec![3, 4],
        };
        let mut buf = Vec::new();
        append_record(&mut buf, &rec).unwrap();
        append_record(&mut buf, &rec).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"knn_state_entropy\":null"));
        assert_eq!(read_records(&text).unwrap(), vec![rec.clone(), rec]);
    }
}
