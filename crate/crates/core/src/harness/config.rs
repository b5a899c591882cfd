use serde::{Deserialize, Serialize};

use crate::agents::{Architecture, ControlConfig, TrainConfig};
use crate::corridor::{BEHAVIOR_EPSILON, VALID_ACTION_COUNTS};
use crate::dueling::AggregatorKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PolicyEval,
    Control,
}

/// Default policy-evaluation learning rate.
pub const POLICY_EVAL_LEARNING_RATE: f64 = 0.2;
/// Default policy-evaluation run length, in updates.
pub const POLICY_EVAL_UPDATES: usize = 100_000;

/// A grid of runs: every combination of architecture, action count and seed.
///
/// Read from JSON; unknown keys are rejected and omitted keys take the
/// defaults below, which describe the single vs. dueling policy-evaluation
/// comparison on 5, 10 and 20 actions over five seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub architectures: Vec<Architecture>,
    pub aggregator: AggregatorKind,
    pub n_actions: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Exploration rate of the evaluated behavior policy (policy-eval mode).
    pub behavior_epsilon: f64,
    /// Optimizer settings for policy evaluation. `seed` is overridden per run.
    pub train: TrainConfig,
    /// Settings for control mode. `train.seed` is overridden per run.
    pub control: ControlConfig,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::PolicyEval,
            architectures: Architecture::ALL.to_vec(),
            aggregator: AggregatorKind::Mean,
            n_actions: VALID_ACTION_COUNTS.to_vec(),
            seeds: (1..=5).collect(),
            behavior_epsilon: BEHAVIOR_EPSILON,
            train: TrainConfig {
                learning_rate: POLICY_EVAL_LEARNING_RATE,
                updates: POLICY_EVAL_UPDATES,
                batch_size: 1,
                ..TrainConfig::default()
            },
            control: ControlConfig::default(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config. Error messages carry the line of
    /// the offending key where one can be located.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate().map_err(|e| match e {
            Error::Config(msg) => {
                let key = msg.split(':').next().unwrap_or_default().trim().to_string();
                match line_of_key(text, &key) {
                    Some(line) => Error::Config(format!("{msg} at line {line}")),
                    None => Error::Config(msg),
                }
            }
            other => other,
        })?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field; messages start with the offending key.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.architectures.is_empty() {
            return fail("architectures: at least one architecture is required".into());
        }
        if self.n_actions.is_empty() {
            return fail("n_actions: at least one action count is required".into());
        }
        if let Some(n) = self.n_actions.iter().find(|n| !VALID_ACTION_COUNTS.contains(n)) {
            return fail(format!("n_actions: {n} is not one of 5, 10, 20"));
        }
        if self.seeds.is_empty() {
            return fail("seeds: at least one seed is required".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return fail("seeds: duplicate seed".into());
        }
        if has_duplicates(&self.architectures) || has_duplicates(&self.n_actions) {
            return fail("architectures: duplicate entries in the run grid".into());
        }
        if !(0.0..=1.0).contains(&self.behavior_epsilon) {
            return fail(format!("behavior_epsilon: {} outside [0, 1]", self.behavior_epsilon));
        }
        if self.output_dir.is_empty() {
            return fail("output_dir: must not be empty".into());
        }
        let prefix = |key: &'static str| move |e: Error| match e {
            Error::Config(msg) => Error::Config(format!("{key}: {msg}")),
            other => other,
        };
        match self.mode {
            Mode::PolicyEval => {
                self.train.validate().map_err(prefix("train"))?;
                if self.train.batch_size != 1 {
                    return fail("train: policy evaluation uses batch_size 1".into());
                }
            }
            Mode::Control => self.control.validate().map_err(prefix("control"))?,
        }
        Ok(())
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

/// 1-based line of the first `"key"` occurrence in `text`.
pub fn line_of_key(text: &str, key: &str) -> Option<usize> {
    if key.is_empty() {
        return None;
    }
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}
