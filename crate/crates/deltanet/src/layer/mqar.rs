//! Multi-query associative recall: bind key tokens to value tokens early in a
//! sequence, query some of the keys later, score the model on the answers.
//!
//! Token layout of one instance:
//!
//! ```text
//! [k1 v1 k2 v2 ... kP vP | filler and queries, shuffled positions]
//! ```
//!
//! Keys, values, and the filler token come from disjoint vocabulary ranges:
//! keys are `0..n_keys`, values `n_keys..n_keys+n_values`, and the single
//! filler token sits at the end. Keys are drawn with replacement, so a key
//! may be re-bound; the answer to a query is always the value most recently
//! bound to that key before the query position. The model is supervised only
//! at query positions.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Task shape: how instances are generated.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MqarTask {
    pub seq_len: usize,
    pub n_pairs: usize,
    pub n_queries: usize,
    pub n_keys: usize,
    pub n_values: usize,
}

impl MqarTask {
    pub fn vocab_size(&self) -> usize {
        self.n_keys + self.n_values + 1
    }

    pub fn filler_token(&self) -> u32 {
        (self.n_keys + self.n_values) as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.n_queries == 0 || self.n_keys == 0 || self.n_values == 0 {
            return Err(Error::Config {
                field: "n_pairs/n_queries/n_keys/n_values".into(),
                msg: "must be positive".into(),
            });
        }
        if 2 * self.n_pairs + self.n_queries > self.seq_len {
            return Err(Error::Capacity(format!(
                "{} pairs + {} queries do not fit in {} positions",
                self.n_pairs, self.n_queries, self.seq_len
            )));
        }
        Ok(())
    }
}

/// One generated sequence with its supervision.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MqarInstance {
    pub tokens: Vec<u32>,
    pub query_positions: Vec<usize>,
    pub answers: Vec<u32>,
}

/// Generates one instance; deterministic in the generator state.
pub fn mqar_generate(task: &MqarTask, rng: &mut Rng) -> Result<MqarInstance> {
    task.validate()?;
    let mut tokens = vec![task.filler_token(); task.seq_len];

    // bindings occupy the first 2*n_pairs positions as (key, value) pairs;
    // keys drawn with replacement, so re-binding happens and recency matters
    let mut keys = Vec::with_capacity(task.n_pairs);
    for i in 0..task.n_pairs {
        let key = rng.range(task.n_keys) as u32;
        let value = (task.n_keys + rng.range(task.n_values)) as u32;
        tokens[2 * i] = key;
        tokens[2 * i + 1] = value;
        keys.push(key);
    }

    // distinct query positions after the binding segment
    let mut candidates: Vec<usize> = (2 * task.n_pairs..task.seq_len).collect();
    rng.shuffle(&mut candidates);
    let mut query_positions: Vec<usize> = candidates[..task.n_queries].to_vec();
    query_positions.sort_unstable();

    let mut answers = Vec::with_capacity(task.n_queries);
    for &pos in &query_positions {
        let key = keys[rng.range(task.n_pairs)];
        tokens[pos] = key;
        // most recent binding of this key
        let answer = (0..task.n_pairs)
            .rev()
            .find(|&i| keys[i] == key)
            .map(|i| tokens[2 * i + 1])
            .expect("queried key is always bound");
        answers.push(answer);
    }
    Ok(MqarInstance {
        tokens,
        query_positions,
        answers,
    })
}

/// Writes instances as JSON lines.
pub fn save_instances_jsonl(path: impl AsRef<Path>, instances: &[MqarInstance]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads instances from JSON lines.
pub fn load_instances_jsonl(path: impl AsRef<Path>) -> Result<Vec<MqarInstance>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Independent validator: rescans the raw token stream and checks that every
/// recorded answer equals the value of the most recent binding of the queried
/// key. A binding is a key token immediately followed by a value token.
pub fn mqar_validate(task: &MqarTask, inst: &MqarInstance) -> bool {
    if inst.tokens.len() != task.seq_len
        || inst.query_positions.len() != inst.answers.len()
        || inst.query_positions.is_empty()
    {
        return false;
    }
    let is_key = |t: u32| (t as usize) < task.n_keys;
    let is_value =
        |t: u32| (t as usize) >= task.n_keys && (t as usize) < task.n_keys + task.n_values;
    for (&pos, &answer) in inst.query_positions.iter().zip(&inst.answers) {
        if pos >= inst.tokens.len() || !is_key(inst.tokens[pos]) {
            return false;
        }
        let key = inst.tokens[pos];
        let mut found = None;
        for j in (0..pos.saturating_sub(1)).rev() {
            if inst.tokens[j] == key && is_value(inst.tokens[j + 1]) {
                found = Some(inst.tokens[j + 1]);
                break;
            }
        }
        if found != Some(answer) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task() -> MqarTask {
        MqarTask {
            seq_len: 32,
            n_pairs: 4,
            n_queries: 4,
            n_keys: 8,
            n_values: 8,
        }
    }

    #[test]
    fn single_pair_single_query_answers_the_bound_value() {
        let task = MqarTask {
            seq_len: 8,
            n_pairs: 1,
            n_queries: 1,
            n_keys: 4,
            n_values: 4,
        };
        let mut rng = Rng::new(100);
        let inst = mqar_generate(&task, &mut rng).unwrap();
        assert_eq!(inst.answers.len(), 1);
        assert_eq!(inst.answers[0], inst.tokens[1]);
        assert_eq!(inst.tokens[inst.query_positions[0]], inst.tokens[0]);
    }

    #[test]
    fn rebinding_takes_the_later_value() {
        // one key forces both pairs onto the same key
        let task = MqarTask {
            seq_len: 12,
            n_pairs: 2,
            n_queries: 2,
            n_keys: 1,
            n_values: 6,
        };
        let mut rng = Rng::new(101);
        let inst = mqar_generate(&task, &mut rng).unwrap();
        for &a in &inst.answers {
            assert_eq!(a, inst.tokens[3], "answer must be the second binding");
        }
        assert!(mqar_validate(&task, &inst));
    }

    #[test]
    fn thousand_instances_pass_the_independent_validator() {
        let task = small_task();
        let mut rng = Rng::new(102);
        for _ in 0..1000 {
            let inst = mqar_generate(&task, &mut rng).unwrap();
            assert!(mqar_validate(&task, &inst));
        }
    }

    #[test]
    fn capacity_error_when_pairs_do_not_fit() {
        let task = MqarTask {
            seq_len: 8,
            n_pairs: 3,
            n_queries: 3,
            n_keys: 4,
            n_values: 4,
        };
        let mut rng = Rng::new(103);
        assert!(matches!(
            mqar_generate(&task, &mut rng),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let task = small_task();
        let a = mqar_generate(&task, &mut Rng::new(7)).unwrap();
        let b = mqar_generate(&task, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jsonl_round_trip() {
        let task = small_task();
        let mut rng = Rng::new(104);
        let instances: Vec<MqarInstance> = (0..5)
            .map(|_| mqar_generate(&task, &mut rng).unwrap())
            .collect();
        let dir = std::env::temp_dir().join("deltanet_mqar_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.jsonl");
        save_instances_jsonl(&path, &instances).unwrap();
        let back = load_instances_jsonl(&path).unwrap();
        assert_eq!(instances, back);
    }

    #[test]
    fn validator_rejects_corrupted_answers() {
        let task = small_task();
        let mut rng = Rng::new(105);
        let mut inst = mqar_generate(&task, &mut rng).unwrap();
        let wrong = (task.n_keys as u32) + ((inst.answers[0] - task.n_keys as u32 + 1) % task.n_values as u32);
        inst.answers[0] = wrong;
        assert!(!mqar_validate(&task, &inst));
    }
}
