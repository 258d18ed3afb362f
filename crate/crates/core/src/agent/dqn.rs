use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::qnet::stack_rows;
use crate::agent::{argmax, td_loss, td_targets, Learner, OptimConfig, QNetwork, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::numerics::{Dropout, ParamStore, Tape, Var};

/// DQN over fixed-width vector states and a discrete action set.
#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub net: QNetwork,
    pub learner: Learner,
    pub gamma: f64,
    pub batch_size: usize,
}

impl DqnAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        hidden: &[usize],
        n_actions: usize,
        gamma: f64,
        batch_size: usize,
        optim: &OptimConfig,
        total_updates: u64,
        sync_every: u64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1]")));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::new(state_dim, hidden, n_actions, &mut store, "q", &mut rng)?;
        Ok(DqnAgent {
            net,
            learner: Learner::new(store, optim, total_updates, sync_every)?,
            gamma,
            batch_size,
        })
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.q_values(&self.learner.online, state)
    }

    pub fn target_q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.q_values(&self.learner.target, state)
    }

    /// Recorded loss over `batch` with θ bound on `tape`; targets come from θ⁻
    /// and carry no gradient.
    pub fn td_loss<'t>(
        &self,
        tape: &'t Tape,
        bound: &crate::numerics::Bound<'t>,
        batch: &[&Transition<Vec<f64>>],
    ) -> Result<Var<'t>> {
        if batch.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        let n_actions = self.net.out_dim();
        if let Some(t) = batch.iter().find(|t| t.action >= n_actions) {
            return Err(Error::Contract(format!("action {} outside {n_actions} actions", t.action)));
        }
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let next_q = self.net.q_values_batch(&self.learner.target, &next)?;
        let next_max: Vec<f64> = next_q.iter().map(|q| q[argmax(q).expect("nonempty")]).collect();
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let y = td_targets(&rewards, &dones, &next_max, self.gamma)?;

        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let x = tape.constant(stack_rows(&states)?)?;
        let q = self.net.forward(bound, x, &mut Dropout::disabled())?;
        let picks: Vec<usize> = batch.iter().enumerate().map(|(i, t)| i * n_actions + t.action).collect();
        let q_taken = q
            .reshape(&[batch.len() * n_actions, 1])?
            .gather_rows(&picks)?
            .reshape(&[batch.len()])?;
        td_loss(q_taken, &y)
    }

    /// One update on a given batch; returns the loss before the update.
    pub fn train_on_batch(&mut self, batch: &[&Transition<Vec<f64>>]) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.learner.online.bind(&tape)?;
        let loss = self.td_loss(&tape, &bound, batch)?;
        let value = loss.item()?;
        let grads = tape.backward(loss)?;
        let grads = self.learner.online.collect_grads(&bound, &grads);
        self.learner.apply(grads)?;
        Ok(value)
    }

    /// Samples a batch and trains on it; `None` while the buffer is underfull.
    pub fn train_step(&mut self, buffer: &ReplayBuffer<Transition<Vec<f64>>>, rng: &mut impl Rng) -> Result<Option<f64>> {
        let Some(batch) = buffer.sample(self.batch_size, rng) else {
            return Ok(None);
        };
        self.train_on_batch(&batch).map(Some)
    }
}
