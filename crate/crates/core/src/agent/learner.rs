use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{adam_step, clip_gradients, AdamState, CosineSchedule, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            lr_min: 1e-5,
            clip_norm: 5.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr) {
            return Err(Error::Config("need 0 < optim.lr_min ≤ optim.lr".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("optim.clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// What one optimizer update did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateInfo {
    pub grad_norm: f64,
    pub lr: f64,
    pub synced: bool,
}

/// Online parameters θ, target parameters θ⁻ and the optimizer around them.
#[derive(Clone, Debug)]
pub struct Learner {
    pub online: ParamStore,
    pub target: ParamStore,
    pub adam: AdamState,
    pub schedule: CosineSchedule,
    pub clip_norm: f64,
    pub sync_every: u64,
    updates: u64,
}

impl Learner {
    /// θ⁻ starts as a copy of θ.
    pub fn new(online: ParamStore, optim: &OptimConfig, total_updates: u64, sync_every: u64) -> Result<Self> {
        optim.validate()?;
        if sync_every == 0 {
            return Err(Error::Config("target sync interval must be positive".into()));
        }
        Ok(Learner {
            target: online.clone(),
            adam: AdamState::new(online.tensors()),
            online,
            schedule: CosineSchedule::new(optim.lr, optim.lr_min, total_updates),
            clip_norm: optim.clip_norm,
            sync_every,
            updates: 0,
        })
    }

    /// Number of optimizer updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn set_updates(&mut self, updates: u64) {
        self.updates = updates;
    }

    /// Clip, Adam step at the scheduled rate, then a hard target copy every
    /// `sync_every` updates.
    pub fn apply(&mut self, grads: Vec<Tensor>) -> Result<UpdateInfo> {
        let lr = self.schedule.lr(self.updates);
        self.apply_with_lr(grads, lr)
    }

    /// Same as [`Learner::apply`] with an explicit learning rate in place of
    /// the schedule.
    pub fn apply_with_lr(&mut self, mut grads: Vec<Tensor>, lr: f64) -> Result<UpdateInfo> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let grad_norm = clip_gradients(&mut grads, self.clip_norm);
        adam_step(self.online.tensors_mut(), &grads, &mut self.adam, lr)?;
        self.updates += 1;
        let synced = self.updates.is_multiple_of(self.sync_every);
        if synced {
            self.sync_target()?;
        }
        Ok(UpdateInfo { grad_norm, lr, synced })
    }

    /// θ⁻ := θ.
    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)
    }
}

/// Bellman targets `y = r` for terminal transitions, else `r + γ·max_a' Q⁻(s', a')`.
pub fn td_targets(rewards: &[f64], dones: &[bool], next_max_q: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != dones.len() || rewards.len() != next_max_q.len() {
        return Err(Error::dim(
            "td_targets",
            format!("{} rewards, {} flags, {} next values", rewards.len(), dones.len(), next_max_q.len()),
        ));
    }
    Ok(rewards
        .iter()
        .zip(dones)
        .zip(next_max_q)
        .map(|((&r, &d), &q)| if d { r } else { r + gamma * q })
        .collect())
}

/// Mean squared difference between the chosen Q-values (length `B`) and
/// constant targets.
pub fn td_loss<'t>(q_taken: Var<'t>, targets: &[f64]) -> Result<Var<'t>> {
    if q_taken.shape() != [targets.len()] {
        return Err(Error::dim("td_loss", format!("Q {:?} vs {} targets", q_taken.shape(), targets.len())));
    }
    if targets.is_empty() {
        return Err(Error::Degenerate("td_loss on an empty batch".into()));
    }
    let y = q_taken.tape().constant(Tensor::vector(targets.to_vec()))?;
    q_taken.sub(y)?.square()?.mean(0)
}
