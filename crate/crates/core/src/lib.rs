//! Dueling Q-networks on an exactly solvable corridor MDP.
//!
//! - [`nn`]: dense networks, exact backpropagation, SGD, gradient clipping
//! - [`dueling`]: value/advantage aggregation and the corridor architectures
//! - [`corridor`]: the environment and its dynamic-programming oracles
//! - [`replay`]: uniform and rank-based prioritized experience replay
//! - [`agents`]: Expected-SARSA, DQN and DDQN targets and training loops
//! - [`harness`]: experiment configs, curve aggregation, CSV dumps

pub mod agents;
pub mod corridor;
pub mod dueling;
pub mod error;
pub mod harness;
pub mod io;
pub mod nn;
pub mod replay;

pub use error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
