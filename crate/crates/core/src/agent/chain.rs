//! Three-state deterministic chain used to check that the learner recovers
//! known action values.
//!
//! States `S0 → S1 → S2`, with `S2` terminal. Action 0 advances one state,
//! action 1 stays put. Entering `S2` pays 1, every other transition pays 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{select_action, DqnAgent, OptimConfig, ReplayBuffer, Transition};
use crate::error::Result;

pub const N_STATES: usize = 3;
pub const N_ACTIONS: usize = 2;
pub const ADVANCE: usize = 0;
pub const STAY: usize = 1;

/// `(next state, reward, terminal)`.
pub fn step(state: usize, action: usize) -> (usize, f64, bool) {
    let next = if action == ADVANCE { (state + 1).min(2) } else { state };
    let reward = if next == 2 && state != 2 { 1.0 } else { 0.0 };
    (next, reward, next == 2)
}

pub fn one_hot(state: usize) -> Vec<f64> {
    let mut v = vec![0.0; N_STATES];
    v[state] = 1.0;
    v
}

/// Optimal action values of the non-terminal states, `q[s][a]`.
pub fn value_iteration(gamma: f64, sweeps: usize) -> [[f64; N_ACTIONS]; 2] {
    let mut v = [0.0; N_STATES];
    let mut q = [[0.0; N_ACTIONS]; 2];
    for _ in 0..sweeps {
        for (s, row) in q.iter_mut().enumerate() {
            for (a, slot) in row.iter_mut().enumerate() {
                let (next, r, done) = step(s, a);
                *slot = r + if done { 0.0 } else { gamma * v[next] };
            }
        }
        for s in 0..2 {
            v[s] = q[s][0].max(q[s][1]);
        }
    }
    q
}

#[derive(Clone, Debug)]
pub struct ChainRun {
    pub q: [[f64; N_ACTIONS]; 2],
    pub updates: u64,
}

/// Trains a small DQN on the chain with ε-greedy exploration, one update per
/// environment step, and returns the learned values.
pub fn train_chain(gamma: f64, updates: u64, seed: u64) -> Result<ChainRun> {
    let optim = OptimConfig {
        lr: 5e-3,
        lr_min: 1e-4,
        clip_norm: 5.0,
    };
    let mut agent = DqnAgent::new(N_STATES, &[16], N_ACTIONS, gamma, 32, &optim, updates, 100, seed)?;
    let mut buffer = ReplayBuffer::new(10_000)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut state = 0;
    let mut episode_len = 0;
    while agent.learner.updates() < updates {
        let q = agent.q_values(&one_hot(state))?;
        let action = select_action(&q, 0.5, &mut rng)?;
        let (next, reward, done) = step(state, action);
        buffer.push(Transition {
            state: one_hot(state),
            action,
            reward,
            next_state: one_hot(next),
            done,
        });
        episode_len += 1;
        if done || episode_len >= 10 || rng.random::<f64>() < 0.1 {
            state = rng.random_range(0..2);
            episode_len = 0;
        } else {
            state = next;
        }
        agent.train_step(&buffer, &mut rng)?;
    }
    let mut q = [[0.0; N_ACTIONS]; 2];
    for (s, row) in q.iter_mut().enumerate() {
        row.copy_from_slice(&agent.q_values(&one_hot(s))?);
    }
    Ok(ChainRun {
        q,
        updates: agent.learner.updates(),
    })
}
