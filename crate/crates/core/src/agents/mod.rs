//! Bootstrap targets and the two training loops: TD policy evaluation on a
//! fixed behavior policy and epsilon-greedy Double DQN control.

mod control;
mod overestimation;
mod policy_eval;
mod targets;

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dueling::{build_dueling_with, build_single_stream, AggregatorKind};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, DEFAULT_CLIP_NORM};

pub use control::{
    epsilon_at, greedy_policy, greedy_return, train_ddqn, AgentState, ControlConfig, ControlStats,
    Replay, ReplayKind,
};
pub use overestimation::{bootstrap_mean_lower_bound, overestimation_trial, OverestimationTrial};
pub use policy_eval::{log_schedule, train_policy_eval};
pub use targets::{ddqn_target, dqn_target, expected_sarsa_target};

/// Optimizer and schedule settings shared by both training loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Steps between target-network syncs (control only).
    pub sync_period: usize,
    pub seed: u64,
    /// Gradient updates for policy evaluation, environment steps for control.
    pub updates: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            clip_norm: DEFAULT_CLIP_NORM,
            sync_period: 500,
            seed: 0,
            updates: 100_000,
            batch_size: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.sync_period == 0 {
            return fail("sync_period must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// Network architecture used for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Single,
    Duel,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::Single, Architecture::Duel];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Single => "single",
            Architecture::Duel => "duel",
        }
    }

    pub fn build(
        self,
        input_dim: usize,
        n_actions: usize,
        aggregator: AggregatorKind,
        seed: u64,
    ) -> Result<DenseNet> {
        match self {
            Architecture::Single => build_single_stream(input_dim, n_actions, seed),
            Architecture::Duel => build_dueling_with(input_dim, n_actions, aggregator, seed),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Architecture::Single),
            "duel" => Ok(Architecture::Duel),
            _ => Err(Error::InvalidArgument(format!("unknown architecture {s:?}"))),
        }
    }
}

/// Squared error of the learned Q-values over training.
#[derive(Debug, Clone, PartialEq)]
pub struct SeCurve {
    pub arch: Architecture,
    pub n_actions: usize,
    pub seed: u64,
    /// `(update index, SE)` with strictly increasing indices.
    pub points: Vec<(usize, f64)>,
}

pub const SE_CURVE_HEADER: &str = "update,se,arch,n_actions,seed";

impl SeCurve {
    pub fn final_se(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn se_at(&self, update: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == update).map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SE_CURVE_HEADER);
        out.push('\n');
        for (u, se) in &self.points {
            let _ = writeln!(out, "{u},{se:?},{},{},{}", self.arch, self.n_actions, self.seed);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SE_CURVE_HEADER) {
            return Err(Error::Domain(format!("missing header {SE_CURVE_HEADER:?}")));
        }
        let mut meta: Option<(Architecture, usize, u64)> = None;
        let mut points = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = n + 2;
            let bad = |what: &str| Error::Domain(format!("line {row}: bad {what}"));
            let fields: Vec<&str> = line.trim().split(',').collect();
            let [u, se, arch, n_actions, seed] = fields.as_slice() else {
                return Err(bad("field count"));
            };
            let u: usize = u.parse().map_err(|_| bad("update"))?;
            let se: f64 = se.parse().map_err(|_| bad("se"))?;
            let this = (
                arch.parse::<Architecture>().map_err(|_| bad("arch"))?,
                n_actions.parse().map_err(|_| bad("n_actions"))?,
                seed.parse().map_err(|_| bad("seed"))?,
            );
            if *meta.get_or_insert(this) != this {
                return Err(bad("metadata (differs from first row)"));
            }
            if points.last().is_some_and(|&(prev, _): &(usize, f64)| prev >= u) {
                return Err(bad("update order"));
            }
            if !(se >= 0.0) {
                return Err(bad("se (negative)"));
            }
            points.push((u, se));
        }
        let (arch, n_actions, seed) = meta.ok_or_else(|| Error::Domain("curve has no rows".into()))?;
        Ok(SeCurve {
            arch,
            n_actions,
            seed,
            points,
        })
    }
}
