use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::targets::expected_sarsa_target;
use super::{Architecture, SeCurve, TrainConfig};
use crate::corridor::{se_metric, CorridorSpec, ExactQ, PolicyTable, LAYOUT_STATES};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, BackwardOptions, DenseNet, GradientSet};
use crate::replay::Transition;

/// Update indices at which SE is recorded: every update up to 100, then
/// geometric growth by 1.25, always ending at `total`.
pub fn log_schedule(total: usize) -> Vec<usize> {
    let mut points: Vec<usize> = (0..=total.min(100)).collect();
    let mut next = 100usize;
    while next < total {
        next = ((next as f64) * 1.25).ceil() as usize;
        points.push(next.min(total));
    }
    points.dedup();
    points
}

/// TD(0) evaluation of `policy` with Expected-SARSA targets from the online
/// network. States are visited by rolling out `policy` from the start state,
/// restarting at termination; each transition drives one semi-gradient step
/// on `0.5 * (y - Q(s, a))^2`.
pub fn train_policy_eval(
    spec: &CorridorSpec,
    policy: &PolicyTable,
    net: &mut DenseNet,
    config: &TrainConfig,
    oracle: &ExactQ,
) -> Result<SeCurve> {
    config.validate()?;
    if config.batch_size != 1 {
        return Err(Error::Config(format!(
            "policy evaluation updates online with batch size 1, got {}",
            config.batch_size
        )));
    }
    if net.input_dim() != LAYOUT_STATES || net.output_dim() != spec.n_actions() {
        return Err(Error::Shape(format!(
            "network maps {} -> {}, corridor needs {LAYOUT_STATES} -> {}",
            net.input_dim(),
            net.output_dim(),
            spec.n_actions()
        )));
    }
    let arch = if net.topology().is_dueling() {
        Architecture::Duel
    } else {
        Architecture::Single
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let gamma = spec.discount();
    let opts = BackwardOptions::training();

    let schedule = log_schedule(config.updates);
    let mut log_at = schedule.iter().copied().peekable();
    let mut points = Vec::with_capacity(schedule.len());
    if log_at.next_if_eq(&0).is_some() {
        points.push((0, se_metric(net, spec, oracle)?));
    }

    let mut grads = GradientSet::zeros_like(net);
    let mut dq = vec![0.0; spec.n_actions()];
    let mut state = spec.start();
    for update in 1..=config.updates {
        let action = policy.sample(state, &mut rng);
        let out = spec.step(state, action)?;
        let t = Transition {
            state,
            action,
            reward: out.reward,
            next: (!out.done).then_some(out.next),
        };
        let y = expected_sarsa_target(spec, &t, policy, net, gamma)?;

        let (q, trace) = net.forward(&spec.encode_state(state)?)?;
        dq.iter_mut().for_each(|g| *g = 0.0);
        dq[action] = q[action] - y;
        grads.set_zero();
        net.accumulate_backward(&trace, &dq, opts, &mut grads)?;
        clip_grad_norm(&mut grads, config.clip_norm)?;
        net.sgd_step(&grads, config.learning_rate)?;

        state = if out.done { spec.start() } else { out.next };
        if log_at.next_if_eq(&update).is_some() {
            points.push((update, se_metric(net, spec, oracle)?));
        }
    }
    Ok(SeCurve {
        arch,
        n_actions: spec.n_actions(),
        seed: config.seed,
        points,
    })
}
