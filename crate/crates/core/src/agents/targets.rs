//! Bootstrap targets. A terminal transition's target is its reward.

use crate::argmax;
use crate::corridor::{CorridorSpec, PolicyTable};
use crate::error::Result;
use crate::nn::DenseNet;
use crate::replay::Transition;

fn next_q(spec: &CorridorSpec, net: &DenseNet, next: usize) -> Result<Vec<f64>> {
    net.q_values(&spec.encode_state(next)?)
}

/// `r + gamma * sum_a' pi(a'|s') Q(s', a')`, evaluated with the online net.
pub fn expected_sarsa_target(
    spec: &CorridorSpec,
    t: &Transition,
    policy: &PolicyTable,
    net: &DenseNet,
    gamma: f64,
) -> Result<f64> {
    match t.next {
        None => Ok(t.reward),
        Some(next) => {
            let q = next_q(spec, net, next)?;
            Ok(t.reward + gamma * policy.expectation(next, &q))
        }
    }
}

/// `r + gamma * max_a' Q(s', a'; target)`.
pub fn dqn_target(spec: &CorridorSpec, t: &Transition, target: &DenseNet, gamma: f64) -> Result<f64> {
    match t.next {
        None => Ok(t.reward),
        Some(next) => {
            let q = next_q(spec, target, next)?;
            Ok(t.reward + gamma * q[argmax(&q)])
        }
    }
}

/// `r + gamma * Q(s', argmax_a' Q(s', a'; online); target)`.
pub fn ddqn_target(
    spec: &CorridorSpec,
    t: &Transition,
    online: &DenseNet,
    target: &DenseNet,
    gamma: f64,
) -> Result<f64> {
    match t.next {
        None => Ok(t.reward),
        Some(next) => {
            let selector = next_q(spec, online, next)?;
            let evaluator = next_q(spec, target, next)?;
            Ok(t.reward + gamma * evaluator[argmax(&selector)])
        }
    }
}
