use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::agent::{select_action, td_loss, Learner, ReplayBuffer};
use crate::env::{generate_world, SessionRecord, World};
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{stream_rng, stream_seed, ExperimentConfig, Head, Variant};
use crate::harness::eval::{evaluate, EvalMetrics};
use crate::harness::model::{Context, FrozenCache, RecModel, Scorer, TapeEncoder};
use crate::harness::rollout::{play_round, Driver, Observation, RandomDriver};
use crate::numerics::{CosineSchedule, Dropout, ParamStore, Tape, Tensor, Var};

/// One stored recommendation step.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub user: usize,
    pub round: i64,
    pub video: usize,
    pub reward: f64,
    pub engaged: bool,
    /// Empty when the session ended after this step.
    pub next_slate: Vec<usize>,
    pub done: bool,
}

impl Experience {
    fn from_observation(obs: &Observation<'_>) -> Self {
        Experience {
            user: obs.user,
            round: obs.round,
            video: obs.step.video,
            reward: obs.reward,
            engaged: obs.step.outcome.behavior.is_engaged(),
            next_slate: obs.next_slate.map(<[usize]>::to_vec).unwrap_or_default(),
            done: obs.next_slate.is_none(),
        }
    }
}

/// Outcome of one training run, evaluated on held-out users.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub updates: u64,
    /// Loss of every optimizer update, in order.
    pub loss_curve: Vec<f64>,
    /// Mean loss of the updates made during each epoch.
    pub epoch_loss: Vec<f64>,
    pub metrics: EvalMetrics,
}

/// Everything `train` produces.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub result: RunResult,
    pub checkpoint: Checkpoint,
    /// Sessions of the training world: warm-up rounds, then one round per epoch.
    pub sessions: Vec<SessionRecord>,
    pub elapsed: Duration,
}

/// Rounds of random play every world starts with, so that each graph window
/// a session looks back on has been lived through.
pub(crate) fn warm_up(world: &mut World, ctx: &mut Context, config: &ExperimentConfig, env_rng: &mut ChaCha8Rng, mut on_session: impl FnMut(i64, &SessionRecord)) -> Result<Vec<SessionRecord>> {
    let users: Vec<usize> = (0..world.n_users()).collect();
    let mut driver = RandomDriver {
        rng: stream_rng(config.seed, "warmup"),
    };
    let mut all = Vec::new();
    for round in 0..config.graph.windows as i64 {
        let records = play_round(world, ctx, &config.agent.reward, &users, round, env_rng, &mut driver)?;
        for r in &records {
            on_session(round, r);
        }
        all.extend(records);
    }
    Ok(all)
}

/// Fresh model and parameters for a config.
pub fn init_model(config: &ExperimentConfig) -> Result<(RecModel, ParamStore)> {
    let mut store = ParamStore::new();
    let model = RecModel::new(config, &mut store, &mut stream_rng(config.seed, "init"))?;
    Ok((model, store))
}

/// Converts a finished session into stored steps.
fn experiences(round: i64, record: &SessionRecord) -> Vec<Experience> {
    let n = record.steps.len();
    (0..n)
        .map(|i| {
            let done = i + 1 == n;
            Experience {
                user: record.user,
                round,
                video: record.steps[i].video,
                reward: record.rewards[i],
                engaged: record.steps[i].outcome.behavior.is_engaged(),
                next_slate: if done { Vec::new() } else { record.slates[i + 1].clone() },
                done,
            }
        })
        .collect()
}

struct Trainer<'a> {
    config: &'a ExperimentConfig,
    model: &'a RecModel,
    learner: Learner,
    buffer: ReplayBuffer<Experience>,
    online_cache: FrozenCache,
    target_cache: FrozenCache,
    dropout: Dropout,
    explore: ChaCha8Rng,
    replay: ChaCha8Rng,
    lr: CosineSchedule,
    sessions_done: u64,
    total_sessions: u64,
    steps: u64,
    losses: Vec<f64>,
}

impl Trainer<'_> {
    fn epsilon(&self) -> f64 {
        self.config.agent.epsilon.value(self.sessions_done, self.total_sessions)
    }

    fn update(&mut self, ctx: &mut Context) -> Result<()> {
        let Some(indices) = self.buffer.sample_indices(self.config.agent.batch_size, &mut self.replay) else {
            return Ok(());
        };
        let batch: Vec<Experience> = indices.iter().map(|&i| self.buffer.get(i).expect("sampled index").clone()).collect();
        let targets = match self.model.variant().head() {
            Head::Supervised => batch.iter().map(|e| if e.engaged { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
            Head::QLearning => {
                let mut scorer = Scorer {
                    model: self.model,
                    store: &self.learner.target,
                    cache: &mut self.target_cache,
                };
                let gamma = self.config.agent.gamma;
                let mut y = Vec::with_capacity(batch.len());
                for e in &batch {
                    if e.done {
                        y.push(e.reward);
                    } else {
                        let q = scorer.scores(ctx, e.user, e.round, &e.next_slate)?;
                        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        y.push(e.reward + gamma * best);
                    }
                }
                y
            }
        };
        let tape = Tape::new();
        let bound = self.learner.online.bind(&tape)?;
        let items: Vec<(usize, i64, usize)> = batch.iter().map(|e| (e.user, e.round, e.video)).collect();
        let mut encoder = TapeEncoder::new(self.model, &tape, &bound);
        let scores = encoder.scores(ctx, &items, &mut self.dropout)?;
        let loss = match self.model.variant().head() {
            Head::QLearning => td_loss(scores, &targets)?,
            Head::Supervised => bce_with_logits(scores, &targets)?,
        };
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {value} at update {} (seed {}, {})",
                self.learner.updates() + 1,
                self.config.seed,
                self.config.variant.label()
            )));
        }
        let grads = tape.backward(loss)?;
        let grads = self.learner.online.collect_grads(&bound, &grads);
        drop(encoder);
        let lr = self.lr.lr(self.sessions_done);
        let info = self.learner.apply_with_lr(grads, lr)?;
        self.online_cache.clear();
        if info.synced {
            self.target_cache.clear();
        }
        self.losses.push(value);
        Ok(())
    }
}

impl Driver for Trainer<'_> {
    fn choose(&mut self, _world: &World, ctx: &mut Context, user: usize, round: i64, slate: &[usize]) -> Result<usize> {
        let eps = self.epsilon();
        let mut scorer = Scorer {
            model: self.model,
            store: &self.learner.online,
            cache: &mut self.online_cache,
        };
        let q = scorer.scores(ctx, user, round, slate)?;
        select_action(&q, eps, &mut self.explore)
    }

    fn observe(&mut self, ctx: &mut Context, obs: &Observation<'_>) -> Result<()> {
        self.buffer.push(Experience::from_observation(obs));
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.agent.train_every as u64) {
            self.update(ctx)?;
        }
        Ok(())
    }

    fn session_end(&mut self, _round: i64, _record: &SessionRecord) -> Result<()> {
        self.sessions_done += 1;
        Ok(())
    }
}

/// Mean of `softplus(x) − y·x`, the logistic loss on logits `x`.
pub fn bce_with_logits<'t>(logits: Var<'t>, labels: &[f64]) -> Result<Var<'t>> {
    if logits.shape() != [labels.len()] {
        return Err(Error::dim("bce", format!("logits {:?} vs {} labels", logits.shape(), labels.len())));
    }
    let y = logits.tape().constant(Tensor::vector(labels.to_vec()))?;
    logits.softplus()?.sub(logits.mul(y)?)?.mean(0)
}

/// Trains one variant on one seed, then evaluates it.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutput> {
    config.validate()?;
    let started = Instant::now();
    let split = config.user_split();
    let train_users: BTreeSet<usize> = split.train.iter().copied().collect();

    let mut world = generate_world(&config.world_config())?;
    let mut ctx = Context::new(&world, config)?;
    let mut env_rng = stream_rng(config.seed, "env");
    let (model, store) = init_model(config)?;

    let mut buffer = ReplayBuffer::new(config.agent.buffer_capacity)?;
    let mut sessions = warm_up(&mut world, &mut ctx, config, &mut env_rng, |round, record| {
        if train_users.contains(&record.user) {
            for e in experiences(round, record) {
                buffer.push(e);
            }
        }
    })?;

    let total_sessions = (config.epochs * split.train.len()) as u64;
    // Expected number of updates only sizes the learner's own schedule, which
    // is unused: the rate follows session progress instead.
    let learner = Learner::new(store, &config.optim, total_sessions, config.agent.target_sync)?;
    let mut trainer = Trainer {
        config,
        model: &model,
        learner,
        buffer,
        online_cache: FrozenCache::default(),
        target_cache: FrozenCache::default(),
        dropout: Dropout::new(config.agent.dropout, stream_seed(config.seed, "dropout")),
        explore: stream_rng(config.seed, "explore"),
        replay: stream_rng(config.seed, "replay"),
        lr: CosineSchedule::new(config.optim.lr, config.optim.lr_min, total_sessions),
        sessions_done: 0,
        total_sessions,
        steps: 0,
        losses: Vec::new(),
    };
    let mut order_rng = stream_rng(config.seed, "order");
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut users = split.train.clone();
        users.shuffle(&mut order_rng);
        let round = (config.graph.windows + epoch) as i64;
        let before = trainer.losses.len();
        let records = play_round(&mut world, &mut ctx, &config.agent.reward, &users, round, &mut env_rng, &mut trainer)?;
        sessions.extend(records);
        let fresh = &trainer.losses[before..];
        epoch_loss.push(if fresh.is_empty() {
            f64::NAN
        } else {
            fresh.iter().sum::<f64>() / fresh.len() as f64
        });
    }

    let Trainer { learner, losses, .. } = trainer;
    let checkpoint = Checkpoint {
        config: config.clone(),
        updates: learner.updates(),
        online: learner.online,
        target: learner.target,
        adam: learner.adam,
    };
    let metrics = evaluate(&checkpoint)?;
    let result = RunResult {
        variant: config.variant,
        seed: config.seed,
        config_hash: config.hash(),
        updates: checkpoint.updates,
        loss_curve: losses,
        epoch_loss,
        metrics,
    };
    Ok(TrainOutput {
        result,
        checkpoint,
        sessions,
        elapsed: started.elapsed(),
    })
}

/// Event-log generation only: warm-up plus evaluation-length random play.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<SessionRecord>> {
    config.validate()?;
    let mut world = generate_world(&config.world_config())?;
    let mut ctx = Context::new(&world, config)?;
    let mut env_rng = stream_rng(config.seed, "env");
    let mut sessions = warm_up(&mut world, &mut ctx, config, &mut env_rng, |_, _| {})?;
    let users: Vec<usize> = (0..world.n_users()).collect();
    let mut driver = RandomDriver {
        rng: stream_rng(config.seed, "simulate"),
    };
    let first = config.graph.windows as i64;
    for round in first..first + config.eval_rounds as i64 {
        sessions.extend(play_round(&mut world, &mut ctx, &config.agent.reward, &users, round, &mut env_rng, &mut driver)?);
    }
    Ok(sessions)
}
