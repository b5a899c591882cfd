//! The three-corridor MDP and exact dynamic-programming oracles.
//!
//! Layout (x to the right, y up):
//!
//! ```text
//!                                              G      (49,21)
//!                                              #      right corridor,
//!                                              #      x = 49, y = 11..=20
//!  ##################################################  horizontal corridor,
//!  #                                                   x = 0..=49, y = 10
//!  #   left corridor, x = 0, y = 0..=9
//! D*   start at (0,0), distractor D at (-1,0)
//! ```
//!
//! State ids: left corridor `0..10` (bottom to top), horizontal corridor
//! `10..60` (left to right), right corridor `60..70` (bottom to top), then the
//! goal terminal `70` and the distractor terminal `71`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::argmax;
use crate::error::{Error, Result};
use crate::nn::DenseNet;

pub const LAYOUT_STATES: usize = 70;
pub const GOAL: usize = 70;
pub const DISTRACTOR: usize = 71;
pub const N_STATES: usize = 72;
pub const START: usize = 0;
pub const PRIMITIVE_ACTIONS: usize = 5;
pub const VALID_ACTION_COUNTS: [usize; 3] = [5, 10, 20];

/// Behavior-policy exploration rate for policy evaluation.
pub const BEHAVIOR_EPSILON: f64 = 0.001;

const VERTICAL_LEN: i32 = 10;
const HORIZONTAL_LEN: i32 = 50;

/// Primitive moves. Action indices at or above [`PRIMITIVE_ACTIONS`] behave
/// like [`Action::NoOp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    NoOp = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::NoOp];

    pub fn from_index(index: usize) -> Action {
        Action::ALL.get(index).copied().unwrap_or(Action::NoOp)
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::NoOp => (0, 0),
        }
    }
}

/// Reward magnitudes and discount of the corridor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorParams {
    pub goal_reward: f64,
    pub distractor_reward: f64,
    pub discount: f64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        CorridorParams {
            goal_reward: 1.0,
            distractor_reward: 0.25,
            discount: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorridorSpec {
    n_actions: usize,
    params: CorridorParams,
    coords: Vec<(i32, i32)>,
    successors: Vec<[usize; PRIMITIVE_ACTIONS]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: usize,
    pub reward: f64,
    pub done: bool,
}

pub fn build_corridor(n_actions: usize) -> Result<CorridorSpec> {
    build_corridor_with(n_actions, CorridorParams::default())
}

pub fn build_corridor_with(n_actions: usize, params: CorridorParams) -> Result<CorridorSpec> {
    if !VALID_ACTION_COUNTS.contains(&n_actions) {
        return Err(Error::InvalidArgument(format!(
            "corridor supports 5, 10 or 20 actions, not {n_actions}"
        )));
    }
    if !(0.0..1.0).contains(&params.discount) {
        return Err(Error::InvalidArgument(format!(
            "discount {} outside [0, 1)",
            params.discount
        )));
    }
    let mut coords = Vec::with_capacity(N_STATES);
    coords.extend((0..VERTICAL_LEN).map(|y| (0, y)));
    coords.extend((0..HORIZONTAL_LEN).map(|x| (x, VERTICAL_LEN)));
    coords.extend((0..VERTICAL_LEN).map(|y| (HORIZONTAL_LEN - 1, VERTICAL_LEN + 1 + y)));
    coords.push((HORIZONTAL_LEN - 1, 2 * VERTICAL_LEN + 1));
    coords.push((-1, 0));
    debug_assert_eq!(coords.len(), N_STATES);

    let index: HashMap<(i32, i32), usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let successors = coords
        .iter()
        .enumerate()
        .map(|(s, &(x, y))| {
            Action::ALL.map(|a| {
                let (dx, dy) = a.delta();
                index.get(&(x + dx, y + dy)).copied().unwrap_or(s)
            })
        })
        .collect();
    Ok(CorridorSpec {
        n_actions,
        params,
        coords,
        successors,
    })
}

impl CorridorSpec {
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        N_STATES
    }

    pub fn discount(&self) -> f64 {
        self.params.discount
    }

    pub fn params(&self) -> CorridorParams {
        self.params
    }

    pub fn start(&self) -> usize {
        START
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        state == GOAL || state == DISTRACTOR
    }

    pub fn coords(&self, state: usize) -> (i32, i32) {
        self.coords[state]
    }

    /// Reward collected on arrival at `state`.
    pub fn arrival_reward(&self, state: usize) -> f64 {
        match state {
            GOAL => self.params.goal_reward,
            DISTRACTOR => self.params.distractor_reward,
            _ => 0.0,
        }
    }

    /// Deterministic successor of (state, action), ignoring termination.
    pub fn successor(&self, state: usize, action: usize) -> usize {
        self.successors[state][Action::from_index(action) as usize]
    }

    pub fn step(&self, state: usize, action: usize) -> Result<StepOutcome> {
        if state >= N_STATES {
            return Err(Error::InvalidArgument(format!("unknown state {state}")));
        }
        if self.is_terminal(state) {
            return Err(Error::Contract(format!("step from terminal state {state}")));
        }
        if action >= self.n_actions {
            return Err(Error::InvalidArgument(format!(
                "action {action} outside 0..{}",
                self.n_actions
            )));
        }
        let next = self.successor(state, action);
        Ok(StepOutcome {
            next,
            reward: self.arrival_reward(next),
            done: self.is_terminal(next),
        })
    }

    /// One-hot over the 70 layout states; terminal states encode as zeros.
    pub fn encode_state(&self, state: usize) -> Result<Vec<f64>> {
        if state >= N_STATES {
            return Err(Error::InvalidArgument(format!("unknown state {state}")));
        }
        let mut x = vec![0.0; LAYOUT_STATES];
        if !self.is_terminal(state) {
            x[state] = 1.0;
        }
        Ok(x)
    }
}

/// Row-stochastic action distribution per state (terminal rows included, as
/// uniform rows).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy table of {} entries for {n_states}x{n_actions}",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(PolicyTable { n_actions, probs })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.n_actions + action]
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let row = self.row(state);
        let mut acc = 0.0;
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// `sum_a pi(a|s) * values[a]`.
    pub fn expectation(&self, state: usize, values: &[f64]) -> f64 {
        self.row(state).iter().zip(values).map(|(p, q)| p * q).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Optimal,
    Policy(PolicyTable),
}

/// Exact action values for every state (terminal rows are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactQ {
    n_actions: usize,
    q: Vec<f64>,
    discount: f64,
    provenance: Provenance,
}

impl ExactQ {
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.n_actions + action]
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// `max_a Q(s, a)`.
    pub fn state_value(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_action(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    /// Infinity-norm Bellman residual of the table against `spec`, in the
    /// optimality or expectation form matching its provenance.
    pub fn bellman_residual(&self, spec: &CorridorSpec) -> f64 {
        let backed_up = match &self.provenance {
            Provenance::Optimal => optimality_backup(spec, &self.q),
            Provenance::Policy(pi) => expectation_backup(spec, pi, &self.q),
        };
        max_abs_diff(&backed_up, &self.q)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn backup(spec: &CorridorSpec, q: &[f64], next_value: impl Fn(usize, &[f64]) -> f64) -> Vec<f64> {
    let n = spec.n_actions;
    let mut out = vec![0.0; q.len()];
    for s in (0..N_STATES).filter(|&s| !spec.is_terminal(s)) {
        for a in 0..n {
            let next = spec.successor(s, a);
            let boot = if spec.is_terminal(next) {
                0.0
            } else {
                next_value(next, &q[next * n..(next + 1) * n])
            };
            out[s * n + a] = spec.arrival_reward(next) + spec.discount() * boot;
        }
    }
    out
}

fn optimality_backup(spec: &CorridorSpec, q: &[f64]) -> Vec<f64> {
    backup(spec, q, |_, row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

fn expectation_backup(spec: &CorridorSpec, pi: &PolicyTable, q: &[f64]) -> Vec<f64> {
    backup(spec, q, |s, row| pi.expectation(s, row))
}

fn iterate(mut q: Vec<f64>, tol: f64, step: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    loop {
        let next = step(&q);
        let delta = max_abs_diff(&next, &q);
        q = next;
        if delta < tol {
            return q;
        }
    }
}

/// Value iteration on the Bellman optimality equation.
pub fn solve_q_star(spec: &CorridorSpec, tol: f64) -> Result<ExactQ> {
    check_tol(tol)?;
    let q = iterate(vec![0.0; N_STATES * spec.n_actions], tol, |q| optimality_backup(spec, q));
    Ok(ExactQ {
        n_actions: spec.n_actions,
        q,
        discount: spec.discount(),
        provenance: Provenance::Optimal,
    })
}

/// Iterative policy evaluation of `policy`.
pub fn solve_q_pi(spec: &CorridorSpec, policy: &PolicyTable, tol: f64) -> Result<ExactQ> {
    check_tol(tol)?;
    if policy.n_actions() != spec.n_actions || policy.n_states() != N_STATES {
        return Err(Error::Shape("policy does not match the corridor".into()));
    }
    let q = iterate(vec![0.0; N_STATES * spec.n_actions], tol, |q| {
        expectation_backup(spec, policy, q)
    });
    Ok(ExactQ {
        n_actions: spec.n_actions,
        q,
        discount: spec.discount(),
        provenance: Provenance::Policy(policy.clone()),
    })
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// `pi(a|s) = eps/|A| + (1 - eps) [a = argmax_a' Q(s, a')]`, ties to the
/// lowest action index.
pub fn epsilon_greedy_policy(q: &ExactQ, epsilon: f64) -> Result<PolicyTable> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let n = q.n_actions;
    let n_states = q.q.len() / n;
    let mut probs = vec![epsilon / n as f64; n_states * n];
    for s in 0..n_states {
        probs[s * n + q.greedy_action(s)] += 1.0 - epsilon;
    }
    PolicyTable::new(n_states, n, probs)
}

/// Deterministic policy taking `actions[s]` in each state.
pub fn deterministic_policy(n_actions: usize, actions: &[usize]) -> Result<PolicyTable> {
    let mut probs = vec![0.0; actions.len() * n_actions];
    for (s, &a) in actions.iter().enumerate() {
        if a >= n_actions {
            return Err(Error::InvalidArgument(format!("action {a} in state {s}")));
        }
        probs[s * n_actions + a] = 1.0;
    }
    PolicyTable::new(actions.len(), n_actions, probs)
}

/// State values and advantages of a policy's exact Q table.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    n_actions: usize,
}

impl Advantages {
    pub fn row(&self, state: usize) -> &[f64] {
        &self.a[state * self.n_actions..(state + 1) * self.n_actions]
    }
}

pub fn advantage_of(q_pi: &ExactQ, policy: &PolicyTable) -> Result<Advantages> {
    match &q_pi.provenance {
        Provenance::Policy(p) if p == policy => {}
        _ => {
            return Err(Error::InvalidArgument(
                "Q table was not computed for this policy".into(),
            ))
        }
    }
    let n = q_pi.n_actions;
    let n_states = q_pi.q.len() / n;
    let v: Vec<f64> = (0..n_states).map(|s| policy.expectation(s, q_pi.row(s))).collect();
    let a = (0..n_states)
        .flat_map(|s| q_pi.row(s).iter().map(|q| q - v[s]).collect::<Vec<_>>())
        .collect();
    Ok(Advantages { v, a, n_actions: n })
}

/// `sum over non-terminal s and all a of (Q(s, a; net) - Q_pi(s, a))^2`.
pub fn se_metric(net: &DenseNet, spec: &CorridorSpec, q_pi: &ExactQ) -> Result<f64> {
    if net.output_dim() != q_pi.n_actions || q_pi.n_actions != spec.n_actions {
        return Err(Error::Shape(format!(
            "network emits {} values, oracle has {} actions",
            net.output_dim(),
            q_pi.n_actions
        )));
    }
    let mut total = 0.0;
    for s in 0..LAYOUT_STATES {
        let q = net.q_values(&spec.encode_state(s)?)?;
        total += q
            .iter()
            .zip(q_pi.row(s))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

/// Discounted return of one episode started with action `action` in `state`
/// and continued under `policy`. Episodes are cut after `max_steps`.
pub fn rollout_return<R: Rng + ?Sized>(
    spec: &CorridorSpec,
    policy: &PolicyTable,
    state: usize,
    action: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut ret = 0.0;
    let mut scale = 1.0;
    let (mut s, mut a) = (state, action);
    for _ in 0..max_steps {
        let out = spec.step(s, a)?;
        ret += scale * out.reward;
        if out.done {
            break;
        }
        scale *= spec.discount();
        s = out.next;
        a = policy.sample(s, rng);
    }
    Ok(ret)
}

/// CSV with one row per non-terminal (state, action).
pub fn oracle_csv(q_star: &ExactQ, q_pi: &ExactQ, policy: &PolicyTable) -> Result<String> {
    let adv = advantage_of(q_pi, policy)?;
    let mut out = String::from("state,action,q_star,q_pi,v_pi,a_pi\n");
    for s in 0..LAYOUT_STATES {
        for a in 0..q_pi.n_actions {
            let _ = writeln!(
                out,
                "{s},{a},{:?},{:?},{:?},{:?}",
                q_star.get(s, a),
                q_pi.get(s, a),
                adv.v[s],
                adv.row(s)[a]
            );
        }
    }
    Ok(out)
}
