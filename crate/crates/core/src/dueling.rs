//! The dueling head: stream aggregation, its gradient, the junction rescale
//! and input saliency, plus builders for the corridor architectures.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::argmax;
use crate::error::{Error, Result};
use crate::nn::{init_net, BackwardOptions, DenseNet, GradientSet, Topology};

/// Hidden width of both single-stream hidden layers and the dueling trunk.
pub const HIDDEN_UNITS: usize = 50;
/// Hidden width of each dueling stream.
pub const STREAM_UNITS: usize = 25;
/// Factor applied to the gradient entering the shared trunk.
pub const JUNCTION_SCALE: f64 = FRAC_1_SQRT_2;

/// How value and advantage streams are combined into Q-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    /// `q = v + adv - mean(adv)`
    #[default]
    Mean,
    /// `q = v + adv - max(adv)`
    Max,
    /// `q = v + adv`; not identifiable, kept for comparison only.
    Naive,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Max => "max",
            AggregatorKind::Naive => "naive",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mean" => Some(AggregatorKind::Mean),
            "max" => Some(AggregatorKind::Max),
            "naive" => Some(AggregatorKind::Naive),
            _ => None,
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregatorKind::from_name(s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown aggregator {s:?}")))
    }
}

/// Stream outputs of a dueling network for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingOutputs {
    pub v: f64,
    pub adv: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn aggregate(kind: AggregatorKind, v: f64, adv: &[f64]) -> Result<Vec<f64>> {
    if adv.is_empty() {
        return Err(Error::InvalidArgument("empty advantage vector".into()));
    }
    let offset = match kind {
        AggregatorKind::Mean => adv.iter().sum::<f64>() / adv.len() as f64,
        AggregatorKind::Max => adv[argmax(adv)],
        AggregatorKind::Naive => 0.0,
    };
    Ok(adv.iter().map(|a| v + (a - offset)).collect())
}

/// Gradient of the aggregate map. `adv` is the advantage vector of the
/// forward pass (only the max variant depends on it); the max term's
/// subgradient is routed to the lowest-index argmax.
pub fn aggregate_backward(kind: AggregatorKind, adv: &[f64], dq: &[f64]) -> Result<(f64, Vec<f64>)> {
    if dq.len() != adv.len() {
        return Err(Error::Shape(format!(
            "q gradient has length {}, advantages {}",
            dq.len(),
            adv.len()
        )));
    }
    let total: f64 = dq.iter().sum();
    let dadv = match kind {
        AggregatorKind::Mean => {
            let mean = total / dq.len() as f64;
            dq.iter().map(|g| g - mean).collect()
        }
        AggregatorKind::Max => {
            let mut d = dq.to_vec();
            d[argmax(adv)] -= total;
            d
        }
        AggregatorKind::Naive => dq.to_vec(),
    };
    Ok((total, dadv))
}

/// Multiplies the gradient at the stream junction by 1/sqrt(2).
pub fn junction_rescale(grad: &mut [f64]) {
    for g in grad {
        *g *= JUNCTION_SCALE;
    }
}

/// `input -> 50 -> 50 -> n_actions`.
pub fn build_single_stream(input_dim: usize, n_actions: usize, seed: u64) -> Result<DenseNet> {
    check_dims(input_dim, n_actions)?;
    init_net(
        &[input_dim, HIDDEN_UNITS, HIDDEN_UNITS, n_actions],
        Topology::SingleStream,
        seed,
    )
}

/// Shared `input -> 50`, then value `50 -> 25 -> 1` and advantage
/// `50 -> 25 -> n_actions`, combined with the mean aggregator.
pub fn build_dueling(input_dim: usize, n_actions: usize, seed: u64) -> Result<DenseNet> {
    build_dueling_with(input_dim, n_actions, AggregatorKind::Mean, seed)
}

pub fn build_dueling_with(
    input_dim: usize,
    n_actions: usize,
    aggregator: AggregatorKind,
    seed: u64,
) -> Result<DenseNet> {
    check_dims(input_dim, n_actions)?;
    init_net(
        &[input_dim, HIDDEN_UNITS, STREAM_UNITS, n_actions],
        Topology::Dueling {
            shared_layers: 1,
            aggregator,
        },
        seed,
    )
}

fn check_dims(input_dim: usize, n_actions: usize) -> Result<()> {
    if input_dim == 0 || n_actions == 0 {
        return Err(Error::InvalidSpec(format!(
            "input width {input_dim} and action count {n_actions} must be positive"
        )));
    }
    Ok(())
}

/// Absolute input Jacobians of the value stream and of the advantage stream
/// at its greedy action.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub value: Vec<f64>,
    pub advantage: Vec<f64>,
    pub greedy_action: usize,
}

pub fn saliency(net: &DenseNet, input: &[f64]) -> Result<Saliency> {
    if !net.topology().is_dueling() {
        return Err(Error::UnsupportedTopology(
            "saliency needs a dueling network".into(),
        ));
    }
    let (_, trace) = net.forward(input)?;
    let adv = &trace.dueling_outputs().expect("dueling trace").adv;
    let greedy_action = argmax(adv);
    let mut onehot = vec![0.0; adv.len()];
    onehot[greedy_action] = 1.0;

    let mut scratch = GradientSet::zeros_like(net);
    let (dv_dx, _) =
        net.streams_backward(&trace, 1.0, &vec![0.0; adv.len()], BackwardOptions::exact(), &mut scratch)?;
    let (da_dx, _) = net.streams_backward(&trace, 0.0, &onehot, BackwardOptions::exact(), &mut scratch)?;
    Ok(Saliency {
        value: dv_dx.iter().map(|g| g.abs()).collect(),
        advantage: da_dx.iter().map(|g| g.abs()).collect(),
        greedy_action,
    })
}
