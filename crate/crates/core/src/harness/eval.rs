use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::argmax;
use crate::env::{generate_world, SessionRecord, World};
use crate::error::{Error, Result};
use crate::fusion::{AttentionTrace, FusionMode};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{stream_rng, ExperimentConfig, Head};
use crate::harness::model::{Context, FrozenCache, RecModel, Scorer};
use crate::harness::rollout::{play_round, Driver, Observation};
use crate::harness::train::warm_up;
use crate::metrics::{
    hit_rate_at_k, intra_list_similarity, mae, mse, ndcg_at_k, precision_recall_f1, ConfusionCounts,
};
use crate::numerics::Tensor;

/// Rank cutoff for NDCG and hit rate.
pub const RANK_K: usize = 5;

/// Held-out metrics of one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Score cutoff chosen on validation users.
    pub threshold: f64,
    pub ndcg5: f64,
    /// Against discounted returns; `None` for heads without Q-values.
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub hit_rate: f64,
    pub hit_positions: Vec<f64>,
    /// Mean intra-list similarity of each session's watched videos.
    pub ils: Option<f64>,
    pub mean_return: f64,
    pub test_sessions: usize,
    pub test_steps: usize,
}

impl EvalMetrics {
    pub fn diversity(&self) -> Option<f64> {
        self.ils.map(|s| 1.0 - s)
    }
}

/// Scores the candidates of a slate; the greedy choice is the argmax.
pub trait EvalPolicy {
    fn scores(&mut self, world: &World, ctx: &mut Context, user: usize, round: i64, slate: &[usize]) -> Result<Vec<f64>>;

    /// Whether scores estimate discounted returns.
    fn has_q_values(&self) -> bool;
}

/// A trained model under frozen parameters.
pub struct ModelPolicy<'a> {
    pub model: &'a RecModel,
    pub store: &'a crate::numerics::ParamStore,
    pub cache: FrozenCache,
}

impl EvalPolicy for ModelPolicy<'_> {
    fn scores(&mut self, _world: &World, ctx: &mut Context, user: usize, round: i64, slate: &[usize]) -> Result<Vec<f64>> {
        Scorer {
            model: self.model,
            store: self.store,
            cache: &mut self.cache,
        }
        .scores(ctx, user, round, slate)
    }

    fn has_q_values(&self) -> bool {
        self.model.variant().head() == Head::QLearning
    }
}

/// Ranks by the simulator's true alignment.
pub struct OraclePolicy;

impl EvalPolicy for OraclePolicy {
    fn scores(&mut self, world: &World, _ctx: &mut Context, user: usize, _round: i64, slate: &[usize]) -> Result<Vec<f64>> {
        Ok(slate.iter().map(|&v| world.alignment(user, v)).collect())
    }

    fn has_q_values(&self) -> bool {
        false
    }
}

/// Uniform random scores.
pub struct RandomPolicy(pub ChaCha8Rng);

impl EvalPolicy for RandomPolicy {
    fn scores(&mut self, _world: &World, _ctx: &mut Context, _user: usize, _round: i64, slate: &[usize]) -> Result<Vec<f64>> {
        Ok(slate.iter().map(|_| self.0.random::<f64>()).collect())
    }

    fn has_q_values(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
struct StepLog {
    scores: Vec<f64>,
    grades: Vec<f64>,
    chosen: usize,
    video: usize,
}

#[derive(Clone, Debug)]
struct SessionLog {
    user: usize,
    steps: Vec<StepLog>,
    rewards: Vec<f64>,
}

struct EvalDriver<'p, P> {
    policy: &'p mut P,
    tracked: BTreeSet<usize>,
    grades: ChaCha8Rng,
    pending: Option<StepLog>,
    current: Vec<StepLog>,
    sessions: Vec<SessionLog>,
}

impl<P: EvalPolicy> Driver for EvalDriver<'_, P> {
    fn choose(&mut self, world: &World, ctx: &mut Context, user: usize, round: i64, slate: &[usize]) -> Result<usize> {
        let scores = self.policy.scores(world, ctx, user, round, slate)?;
        if scores.len() != slate.len() || scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("scores for user {user} in round {round}")));
        }
        let chosen = argmax(&scores).ok_or_else(|| Error::Contract("empty slate".into()))?;
        if self.tracked.contains(&user) {
            // Counterfactual reactions to every candidate, drawn before the
            // step changes the user.
            let grades = slate
                .iter()
                .map(|&v| world.sample_behavior(user, v, &mut self.grades).grade() as f64)
                .collect();
            self.pending = Some(StepLog {
                scores,
                grades,
                chosen,
                video: slate[chosen],
            });
        }
        Ok(chosen)
    }

    fn observe(&mut self, _ctx: &mut Context, obs: &Observation<'_>) -> Result<()> {
        if let Some(mut log) = self.pending.take() {
            log.grades[obs.index] = obs.step.outcome.behavior.grade() as f64;
            self.current.push(log);
        }
        Ok(())
    }

    fn session_end(&mut self, _round: i64, record: &SessionRecord) -> Result<()> {
        if self.tracked.contains(&record.user) {
            self.sessions.push(SessionLog {
                user: record.user,
                steps: std::mem::take(&mut self.current),
                rewards: record.rewards.clone(),
            });
        }
        Ok(())
    }
}

/// Threshold maximizing F1 when predicting positive for `score ≥ threshold`;
/// the highest such threshold on ties. `+∞` when there are no positives.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return f64::INFINITY;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (positives - tp)) as f64;
        if f1 > best.0 {
            best = (f1, s);
        }
    }
    best.1
}

/// Candidate indices by descending score; ties keep slate order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// `G_t = r_t + γ·G_{t+1}`, truncated at the end of the session.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Regenerates the seeded world, replays the warm-up, then runs greedy
/// sessions for every user. Metrics come from test users; validation users
/// only calibrate the F1 threshold.
pub fn evaluate_policy(config: &ExperimentConfig, policy: &mut impl EvalPolicy) -> Result<EvalMetrics> {
    config.validate()?;
    let split = config.user_split();
    let mut world = generate_world(&config.world_config())?;
    let mut ctx = Context::new(&world, config)?;
    let mut env_rng = stream_rng(config.seed, "env");
    warm_up(&mut world, &mut ctx, config, &mut env_rng, |_, _| {})?;

    let q_values = policy.has_q_values();
    let mut driver = EvalDriver {
        policy,
        tracked: split.validation.iter().chain(&split.test).copied().collect(),
        grades: stream_rng(config.seed, "grades"),
        pending: None,
        current: Vec::new(),
        sessions: Vec::new(),
    };
    let users: Vec<usize> = (0..world.n_users()).collect();
    let first = config.graph.windows as i64;
    for round in first..first + config.eval_rounds as i64 {
        play_round(&mut world, &mut ctx, &config.agent.reward, &users, round, &mut env_rng, &mut driver)?;
    }

    let test: BTreeSet<usize> = split.test.iter().copied().collect();
    let (test_sessions, val_sessions): (Vec<&SessionLog>, Vec<&SessionLog>) =
        driver.sessions.iter().partition(|s| test.contains(&s.user));

    let (mut val_scores, mut val_labels) = (Vec::new(), Vec::new());
    for step in val_sessions.iter().flat_map(|s| &s.steps) {
        val_scores.extend_from_slice(&step.scores);
        val_labels.extend(step.grades.iter().map(|&g| g > 0.0));
    }
    let threshold = calibrate_threshold(&val_scores, &val_labels);

    let (mut predicted, mut actual) = (Vec::new(), Vec::new());
    let mut ndcg_sum = 0.0;
    let (mut lists, mut positives) = (Vec::new(), Vec::new());
    let (mut returns, mut q_taken) = (Vec::new(), Vec::new());
    let mut ils = Vec::new();
    let mut total_return = 0.0;
    let mut steps = 0usize;
    for s in &test_sessions {
        total_return += s.rewards.iter().sum::<f64>();
        let g = discounted_returns(&s.rewards, config.agent.gamma);
        for (t, step) in s.steps.iter().enumerate() {
            steps += 1;
            predicted.extend(step.scores.iter().map(|&x| x >= threshold));
            actual.extend(step.grades.iter().map(|&x| x > 0.0));
            let order = ranking(&step.scores);
            let rel: Vec<f64> = order.iter().map(|&i| step.grades[i]).collect();
            ndcg_sum += ndcg_at_k(&rel, RANK_K)?;
            positives.push((0..step.grades.len()).filter(|&i| step.grades[i] > 0.0).collect::<Vec<_>>());
            lists.push(order);
            returns.push(g[t]);
            q_taken.push(step.scores[step.chosen]);
        }
        if s.steps.len() >= 2 {
            let items: Vec<&[f64]> = s.steps.iter().map(|st| ctx.flat(st.video)).collect();
            ils.push(intra_list_similarity(&items)?);
        }
    }
    if steps == 0 {
        return Err(Error::Degenerate("evaluation produced no test steps".into()));
    }
    let f1 = precision_recall_f1(ConfusionCounts::from_predictions(&predicted, &actual)?);
    let hits = hit_rate_at_k(&lists, &positives, RANK_K)?;
    let (mse_v, mae_v) = if q_values {
        (Some(mse(&returns, &q_taken)?), Some(mae(&returns, &q_taken)?))
    } else {
        (None, None)
    };
    Ok(EvalMetrics {
        precision: f1.precision,
        recall: f1.recall,
        f1: f1.f1,
        threshold,
        ndcg5: ndcg_sum / steps as f64,
        mse: mse_v,
        mae: mae_v,
        hit_rate: hits.rate,
        hit_positions: hits.per_position,
        ils: (!ils.is_empty()).then(|| ils.iter().sum::<f64>() / ils.len() as f64),
        mean_return: total_return / test_sessions.len() as f64,
        test_sessions: test_sessions.len(),
        test_steps: steps,
    })
}

/// Evaluates the online parameters of a checkpoint.
pub fn evaluate(checkpoint: &Checkpoint) -> Result<EvalMetrics> {
    let model = checkpoint.model()?;
    let mut policy = ModelPolicy {
        model: &model,
        store: &checkpoint.online,
        cache: FrozenCache::default(),
    };
    evaluate_policy(&checkpoint.config, &mut policy)
}

/// Attention weights averaged over every video of the world; `None` unless
/// the model uses the gated encoder.
pub fn mean_attention(checkpoint: &Checkpoint) -> Result<Option<AttentionTrace>> {
    let model = checkpoint.model()?;
    if model.fusion().mode() != FusionMode::Gated {
        return Ok(None);
    }
    let world = generate_world(&checkpoint.config.world_config())?;
    let mut sum: Option<Vec<Vec<Vec<f64>>>> = None;
    let mut shapes = Vec::new();
    for v in &world.videos {
        let (_, trace) = model.fusion().infer(&checkpoint.online, &v.features)?;
        let layers: Vec<Vec<Vec<f64>>> = trace
            .layers
            .iter()
            .map(|heads| heads.iter().map(|t| t.data().to_vec()).collect())
            .collect();
        match &mut sum {
            None => {
                shapes = trace
                    .layers
                    .iter()
                    .map(|heads| heads.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>())
                    .collect::<Vec<_>>();
                sum = Some(layers);
            }
            Some(acc) => {
                for (a, l) in acc.iter_mut().flatten().zip(layers.iter().flatten()) {
                    for (x, y) in a.iter_mut().zip(l) {
                        *x += y;
                    }
                }
            }
        }
    }
    let n = world.videos.len() as f64;
    let Some(sum) = sum else { return Ok(None) };
    let layers = sum
        .into_iter()
        .zip(shapes)
        .map(|(heads, hs)| {
            heads
                .into_iter()
                .zip(hs)
                .map(|(data, shape)| Tensor::new(shape, data.into_iter().map(|x| x / n).collect()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(AttentionTrace { layers }))
}
