//! Deep Q-learning: Q-network, ε-greedy control, composite reward, replay,
//! TD loss against a periodically synced target network, and the optimizer
//! step.

pub mod chain;
mod dqn;
mod learner;
mod qnet;
mod replay;
mod reward;

use serde::{Deserialize, Serialize};

pub use dqn::DqnAgent;
pub use learner::{td_loss, td_targets, Learner, OptimConfig, UpdateInfo};
pub use qnet::{argmax, select_action, EpsilonSchedule, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use reward::{compute_reward, reward_breakdown, ImmediateRewards, RewardBreakdown, RewardWeights};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    /// Optimizer updates between hard target copies.
    pub target_sync: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between optimizer updates.
    pub train_every: usize,
    pub dropout: f64,
    pub reward: RewardWeights,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![32, 32, 16],
            gamma: 0.95,
            epsilon: EpsilonSchedule::default(),
            target_sync: 1000,
            buffer_capacity: 100_000,
            batch_size: 32,
            train_every: 4,
            dropout: 0.2,
            reward: RewardWeights::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("agent.hidden needs positive layer widths".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("agent.gamma = {} outside [0, 1]", self.gamma)));
        }
        if self.target_sync == 0 || self.buffer_capacity == 0 || self.batch_size == 0 || self.train_every == 0 {
            return Err(Error::Config(
                "agent.target_sync, buffer_capacity, batch_size and train_every must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("agent.dropout = {} outside [0, 1)", self.dropout)));
        }
        self.epsilon.validate()?;
        self.reward.validate()
    }
}
