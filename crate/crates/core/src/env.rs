//! Seeded short-video platform simulator.
//!
//! Videos have a unit-norm latent topic `z`; the three modality views each
//! expose a different part of it (visual: first half, text: second half,
//! audio: a fixed rotation of the whole vector) through fixed random linear
//! maps plus Gaussian noise. Users hold a unit-norm preference `p`; the
//! alignment `pᵀz` drives a logistic behavior model.
//!
//! Two optional video attributes shape the decision problem:
//!
//! - a *hook* (clickbait) flag, visible only in the visual view, that raises
//!   the chance of a full watch while lowering likes, comments, shares and the
//!   probability that the user keeps watching;
//! - a *missing modality*: with probability `missing_modality_rate` one view
//!   of a video is absent and emitted as zeros.
//!
//! Time is measured in steps; a session started at time `t0` places its
//! follow events in `[t0, t0 + 0.25)`, the watch of step `j` at
//! `t0 + j + 0.25` and any like, comment or share at `t0 + j + 0.5`.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agent::{compute_reward, RewardWeights};
use crate::error::{Error, Result};
use crate::fusion::{Modality, RawModalFeatures};
use crate::graph::{write_events_jsonl, Behavior, InteractionEvent};

/// Parameters of the logistic behavior model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorModel {
    /// Slope of the logistic map from alignment to engagement propensity.
    pub slope: f64,
    /// Alignment bonus per unit fraction of neighbors who engaged with a video.
    pub social_boost: f64,
    /// Continuation probability at zero and full propensity.
    pub continue_min: f64,
    pub continue_max: f64,
    /// Share of the like/comment/share mass a hook converts into full watches.
    pub hook_engagement_loss: f64,
    /// Share of the early-exit mass a hook converts into full watches.
    pub hook_exit_loss: f64,
    /// Drop in continuation probability after a hooked video.
    pub hook_continue_penalty: f64,
}

impl Default for BehaviorModel {
    fn default() -> Self {
        BehaviorModel {
            slope: 4.0,
            social_boost: 0.1,
            continue_min: 0.75,
            continue_max: 0.97,
            hook_engagement_loss: 0.7,
            hook_exit_loss: 0.8,
            hook_continue_penalty: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_videos: usize,
    pub latent_dim: usize,
    pub d_visual: usize,
    pub d_text: usize,
    pub d_audio: usize,
    pub noise_visual: f64,
    pub noise_text: f64,
    pub noise_audio: f64,
    pub social_prob: f64,
    pub drift_rate: f64,
    pub session_length: usize,
    pub slate_size: usize,
    pub hook_fraction: f64,
    pub missing_modality_rate: f64,
    pub behavior: BehaviorModel,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_users: 50,
            n_videos: 200,
            latent_dim: 8,
            d_visual: 12,
            d_text: 12,
            d_audio: 12,
            noise_visual: 0.2,
            noise_text: 0.2,
            noise_audio: 0.2,
            social_prob: 0.1,
            drift_rate: 0.05,
            session_length: 30,
            slate_size: 5,
            hook_fraction: 0.2,
            missing_modality_rate: 0.2,
            behavior: BehaviorModel::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_users == 0 || self.n_videos == 0 || self.session_length == 0 {
            return bad("world counts must be at least 1".into());
        }
        if self.latent_dim < 2 {
            return bad("world.latent_dim must be at least 2".into());
        }
        if self.d_visual == 0 || self.d_text == 0 || self.d_audio == 0 {
            return bad("modality dimensions must be positive".into());
        }
        if self.slate_size < 2 || self.slate_size > self.n_videos {
            return bad(format!(
                "world.slate_size = {} must lie in [2, n_videos = {}]",
                self.slate_size, self.n_videos
            ));
        }
        for (name, v) in [
            ("noise_visual", self.noise_visual),
            ("noise_text", self.noise_text),
            ("noise_audio", self.noise_audio),
            ("drift_rate", self.drift_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("world.{name} = {v} must be finite and nonnegative"));
            }
        }
        for (name, v) in [
            ("social_prob", self.social_prob),
            ("hook_fraction", self.hook_fraction),
            ("missing_modality_rate", self.missing_modality_rate),
            ("drift_rate", self.drift_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("world.{name} = {v} outside [0, 1]"));
            }
        }
        let b = &self.behavior;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(b.slope.is_finite() && b.social_boost.is_finite())
            || !unit(b.continue_min)
            || !unit(b.continue_max)
            || b.continue_min > b.continue_max
            || !unit(b.hook_engagement_loss)
            || !unit(b.hook_exit_loss)
            || !unit(b.hook_continue_penalty)
        {
            return bad("world.behavior constants out of range".into());
        }
        Ok(())
    }

    /// Latent components carried by the visual view; text carries the rest.
    pub fn visual_half(&self) -> usize {
        self.latent_dim / 2
    }

    pub fn noise(&self, m: Modality) -> f64 {
        match m {
            Modality::Visual => self.noise_visual,
            Modality::Text => self.noise_text,
            Modality::Audio => self.noise_audio,
        }
    }
}

/// Realized reaction to one recommendation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engagement {
    Like,
    Comment,
    Share,
    FullWatch,
    EarlyExit,
    NoInteraction,
}

impl Engagement {
    /// Order used by [`BehaviorModel::probabilities`].
    pub const ALL: [Engagement; 6] = [
        Engagement::Like,
        Engagement::Comment,
        Engagement::Share,
        Engagement::FullWatch,
        Engagement::EarlyExit,
        Engagement::NoInteraction,
    ];

    /// Relevance grade: share 3, comment or like 2, full watch 1, else 0.
    pub fn grade(self) -> u8 {
        match self {
            Engagement::Share => 3,
            Engagement::Comment | Engagement::Like => 2,
            Engagement::FullWatch => 1,
            Engagement::EarlyExit | Engagement::NoInteraction => 0,
        }
    }

    pub fn is_engaged(self) -> bool {
        self.grade() > 0
    }

    fn logged_behavior(self) -> Option<Behavior> {
        match self {
            Engagement::Like => Some(Behavior::Like),
            Engagement::Comment => Some(Behavior::Comment),
            Engagement::Share => Some(Behavior::Share),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub behavior: Engagement,
    pub watch_fraction: f64,
    /// Whether the user stays for another step.
    pub continued: bool,
    pub interest_before: Vec<f64>,
    pub interest_after: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl BehaviorModel {
    /// Engagement propensity `σ(slope·alignment)`.
    pub fn propensity(&self, alignment: f64) -> f64 {
        sigmoid(self.slope * alignment)
    }

    /// Distribution over [`Engagement::ALL`].
    pub fn probabilities(&self, alignment: f64, hook: bool) -> [f64; 6] {
        let s = self.propensity(alignment);
        let mut like = 0.30 * s;
        let mut comment = 0.10 * s;
        let mut share = 0.10 * s;
        let mut full = 0.30 * s + 0.10 * (1.0 - s);
        let mut exit = 0.60 * (1.0 - s);
        let none = 0.20 * s + 0.30 * (1.0 - s);
        if hook {
            let k = self.hook_engagement_loss;
            full += k * (like + comment + share) + self.hook_exit_loss * exit;
            like *= 1.0 - k;
            comment *= 1.0 - k;
            share *= 1.0 - k;
            exit *= 1.0 - self.hook_exit_loss;
        }
        [like, comment, share, full, exit, none]
    }

    pub fn continue_probability(&self, alignment: f64, hook: bool) -> f64 {
        let s = self.propensity(alignment);
        let c = self.continue_min + (self.continue_max - self.continue_min) * s;
        if hook {
            (c - self.hook_continue_penalty).max(0.0)
        } else {
            c
        }
    }
}

/// Fixed linear maps from latent parts to the three modality views.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalMaps {
    /// `d_visual × (visual_half + 1)`; the extra column reads the hook flag.
    pub visual: Vec<Vec<f64>>,
    /// `d_text × (latent_dim − visual_half)`.
    pub text: Vec<Vec<f64>>,
    /// `d_audio × latent_dim`, applied to `rotation·z`.
    pub audio: Vec<Vec<f64>>,
    /// Orthogonal `latent_dim × latent_dim`.
    pub rotation: Vec<Vec<f64>>,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| { let e: f64 = StandardNormal.sample(rng); scale * e }).collect::<Vec<f64>>())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            normalize(&mut v);
            return v;
        }
    }
}

/// Gram–Schmidt on a Gaussian matrix.
fn random_rotation(dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-8 {
            normalize(&mut v);
            rows.push(v);
        }
    }
    rows
}

impl ModalMaps {
    pub fn generate(config: &WorldConfig, rng: &mut impl Rng) -> Self {
        let h = config.visual_half();
        let kz = config.latent_dim;
        ModalMaps {
            visual: gaussian_matrix(config.d_visual, h + 1, 1.0 / ((h + 1) as f64).sqrt(), rng),
            text: gaussian_matrix(config.d_text, kz - h, 1.0 / ((kz - h) as f64).sqrt(), rng),
            audio: gaussian_matrix(config.d_audio, kz, 1.0 / (kz as f64).sqrt(), rng),
            rotation: random_rotation(kz, rng),
        }
    }
}

/// Noise-free views of a topic: `(visual, text, audio)`.
pub fn modal_images(z: &[f64], hook: bool, maps: &ModalMaps, config: &WorldConfig) -> RawModalFeatures {
    let h = config.visual_half();
    let mut vin = z[..h].to_vec();
    vin.push(if hook { 1.0 } else { 0.0 });
    RawModalFeatures {
        visual: mat_vec(&maps.visual, &vin),
        text: mat_vec(&maps.text, &z[h..]),
        audio: mat_vec(&maps.audio, &mat_vec(&maps.rotation, z)),
    }
}

/// Linear images of `z` plus per-modality Gaussian noise; a `missing`
/// modality is emitted as zeros.
pub fn emit_modal_features(
    z: &[f64],
    hook: bool,
    missing: Option<Modality>,
    maps: &ModalMaps,
    config: &WorldConfig,
    rng: &mut impl Rng,
) -> Result<RawModalFeatures> {
    if z.len() != config.latent_dim {
        return Err(Error::dim("emit_modal_features", format!("topic of length {}, expected {}", z.len(), config.latent_dim)));
    }
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("topic norm {norm} is not 1")));
    }
    let mut raw = modal_images(z, hook, maps, config);
    for m in Modality::ALL {
        let sigma = config.noise(m);
        let v = match m {
            Modality::Visual => &mut raw.visual,
            Modality::Text => &mut raw.text,
            Modality::Audio => &mut raw.audio,
        };
        for x in v.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *x += sigma * e;
        }
        if missing == Some(m) {
            v.fill(0.0);
        }
    }
    Ok(raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoItem {
    pub id: usize,
    pub topic: Vec<f64>,
    pub hook: bool,
    pub missing: Option<Modality>,
    pub features: RawModalFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    pub id: usize,
    pub preference: Vec<f64>,
    pub interest: Vec<f64>,
    pub neighbors: Vec<usize>,
    /// Steps taken in the current session.
    pub position: usize,
    /// True while a session is running.
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub maps: ModalMaps,
    pub videos: Vec<VideoItem>,
    pub users: Vec<UserState>,
    /// `engaged[video][user]`: the user has engaged with the video.
    engaged: Vec<Vec<bool>>,
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let maps = ModalMaps::generate(config, &mut rng);
    let mut videos = Vec::with_capacity(config.n_videos);
    for id in 0..config.n_videos {
        let topic = random_unit(config.latent_dim, &mut rng);
        let hook = rng.random::<f64>() < config.hook_fraction;
        let missing = (rng.random::<f64>() < config.missing_modality_rate)
            .then(|| Modality::ALL[rng.random_range(0..3)]);
        let features = emit_modal_features(&topic, hook, missing, &maps, config, &mut rng)?;
        videos.push(VideoItem {
            id,
            topic,
            hook,
            missing,
            features,
        });
    }
    let mut users: Vec<UserState> = (0..config.n_users)
        .map(|id| {
            let p = random_unit(config.latent_dim, &mut rng);
            UserState {
                id,
                interest: p.clone(),
                preference: p,
                neighbors: Vec::new(),
                position: 0,
                alive: false,
            }
        })
        .collect();
    for a in 0..config.n_users {
        for b in a + 1..config.n_users {
            if rng.random::<f64>() < config.social_prob {
                users[a].neighbors.push(b);
                users[b].neighbors.push(a);
            }
        }
    }
    for u in users.iter_mut() {
        u.neighbors.sort_unstable();
    }
    Ok(World {
        engaged: vec![vec![false; config.n_users]; config.n_videos],
        config: config.clone(),
        maps,
        videos,
        users,
    })
}

/// An ongoing session of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub user: usize,
    pub start_time: f64,
    pub step: usize,
    /// Candidate videos on offer at the current step.
    pub slate: Vec<usize>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub video: usize,
    pub outcome: StepOutcome,
    pub events: Vec<InteractionEvent>,
}

impl World {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn social_edge_count(&self) -> usize {
        self.users.iter().map(|u| u.neighbors.len()).sum::<usize>() / 2
    }

    /// Fraction of the user's neighbors who engaged with the video.
    pub fn social_fraction(&self, user: usize, video: usize) -> f64 {
        let n = &self.users[user].neighbors;
        if n.is_empty() {
            return 0.0;
        }
        n.iter().filter(|&&v| self.engaged[video][v]).count() as f64 / n.len() as f64
    }

    /// `pᵀz` plus the social boost.
    pub fn alignment(&self, user: usize, video: usize) -> f64 {
        let p = &self.users[user].preference;
        let z = &self.videos[video].topic;
        let dot: f64 = p.iter().zip(z).map(|(a, b)| a * b).sum();
        dot + self.config.behavior.social_boost * self.social_fraction(user, video)
    }

    pub fn behavior_probabilities(&self, user: usize, video: usize) -> [f64; 6] {
        self.config
            .behavior
            .probabilities(self.alignment(user, video), self.videos[video].hook)
    }

    /// Expected relevance grade of a video for a user.
    pub fn expected_grade(&self, user: usize, video: usize) -> f64 {
        self.behavior_probabilities(user, video)
            .iter()
            .zip(Engagement::ALL)
            .map(|(p, e)| p * e.grade() as f64)
            .sum()
    }

    /// A behavior the user would show for `video` right now, without changing
    /// any state.
    pub fn sample_behavior(&self, user: usize, video: usize, rng: &mut impl Rng) -> Engagement {
        let probs = self.behavior_probabilities(user, video);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (p, e) in probs.iter().zip(Engagement::ALL) {
            acc += p;
            if u < acc {
                return e;
            }
        }
        Engagement::NoInteraction
    }

    fn draw_slate(&self, rng: &mut impl Rng) -> Vec<usize> {
        sample_indices(rng, self.config.n_videos, self.config.slate_size).into_vec()
    }

    /// Opens a session: the preference takes a random-walk drift step, the
    /// social links are logged as follow events and a first slate is drawn.
    pub fn start_session(&mut self, user: usize, start_time: f64, rng: &mut impl Rng) -> Result<(Session, Vec<InteractionEvent>)> {
        if user >= self.users.len() {
            return Err(Error::Validation(format!("user {user} outside [0, {})", self.users.len())));
        }
        if self.users[user].alive {
            return Err(Error::State(format!("user {user} already has an open session")));
        }
        let drift = self.config.drift_rate;
        let kz = self.config.latent_dim;
        let u = &mut self.users[user];
        if drift > 0.0 {
            let scale = drift / (kz as f64).sqrt();
            for x in u.preference.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *x += scale * e;
            }
            normalize(&mut u.preference);
        }
        u.alive = true;
        u.position = 0;
        let deg = u.neighbors.len();
        let events = u
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, &v)| InteractionEvent::follow(user, v, start_time + 0.2 * (i + 1) as f64 / (deg + 1) as f64))
            .collect();
        let session = Session {
            user,
            start_time,
            step: 0,
            slate: self.draw_slate(rng),
            done: false,
        };
        Ok((session, events))
    }

    /// Realizes the user's reaction to `video` and updates the interest
    /// vector and the social engagement record.
    pub fn user_respond(&mut self, user: usize, video: usize, rng: &mut impl Rng) -> Result<StepOutcome> {
        if !self.users.get(user).is_some_and(|u| u.alive) {
            return Err(Error::State(format!("user {user} has no open session")));
        }
        let alignment = self.alignment(user, video);
        let hook = self.videos[video].hook;
        let behavior = self.sample_behavior(user, video, rng);
        let watch_fraction = match behavior {
            Engagement::EarlyExit => rng.random_range(0.0..0.2),
            Engagement::NoInteraction => rng.random_range(0.2..0.7),
            Engagement::FullWatch => 1.0,
            _ => rng.random_range(0.7..=1.0),
        };
        let continued = rng.random::<f64>() < self.config.behavior.continue_probability(alignment, hook);
        let drift = self.config.drift_rate;
        let z = &self.videos[video].topic;
        let u = &mut self.users[user];
        let before = u.interest.clone();
        if drift > 0.0 {
            for (x, zi) in u.interest.iter_mut().zip(z) {
                *x = (1.0 - drift) * *x + drift * zi;
            }
            normalize(&mut u.interest);
        }
        let after = u.interest.clone();
        if behavior.is_engaged() {
            self.engaged[video][user] = true;
        }
        Ok(StepOutcome {
            behavior,
            watch_fraction,
            continued,
            interest_before: before,
            interest_after: after,
        })
    }

    /// Shows `video` (which must be on the slate), logs the resulting events
    /// and draws the next slate. The session ends when the user leaves or the
    /// session length is reached.
    pub fn env_step(&mut self, session: &mut Session, video: usize, rng: &mut impl Rng) -> Result<StepResult> {
        if session.done {
            return Err(Error::State("session already finished".into()));
        }
        if !session.slate.contains(&video) {
            return Err(Error::Contract(format!("video {video} is not on the slate {:?}", session.slate)));
        }
        let outcome = self.user_respond(session.user, video, rng)?;
        let t = session.start_time + session.step as f64;
        let mut events = vec![InteractionEvent::watch(session.user, video, t + 0.25, outcome.watch_fraction)];
        if let Some(b) = outcome.behavior.logged_behavior() {
            events.push(InteractionEvent::engage(session.user, video, b, t + 0.5));
        }
        session.step += 1;
        self.users[session.user].position = session.step;
        if !outcome.continued || session.step >= self.config.session_length {
            session.done = true;
            self.users[session.user].alive = false;
        } else {
            session.slate = self.draw_slate(rng);
        }
        Ok(StepResult { video, outcome, events })
    }

    /// Closes a session early (e.g. when a step budget runs out).
    pub fn end_session(&mut self, session: &mut Session) {
        session.done = true;
        self.users[session.user].alive = false;
    }
}

/// Everything that happened in one session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionRecord {
    pub user: usize,
    pub slates: Vec<Vec<usize>>,
    pub steps: Vec<StepResult>,
    pub rewards: Vec<f64>,
    pub events: Vec<InteractionEvent>,
    pub total_reward: f64,
}

/// Runs one session, asking `policy` for a slate index at every step.
pub fn run_session(
    world: &mut World,
    user: usize,
    start_time: f64,
    max_steps: usize,
    weights: &RewardWeights,
    rng: &mut impl Rng,
    mut policy: impl FnMut(&World, &Session) -> Result<usize>,
) -> Result<SessionRecord> {
    let mut record = SessionRecord {
        user,
        ..SessionRecord::default()
    };
    if max_steps == 0 {
        return Ok(record);
    }
    let (mut session, follows) = world.start_session(user, start_time, rng)?;
    record.events.extend(follows);
    while !session.done {
        if record.steps.len() >= max_steps {
            world.end_session(&mut session);
            break;
        }
        let index = policy(world, &session)?;
        let video = *session
            .slate
            .get(index)
            .ok_or_else(|| Error::Contract(format!("slate index {index} outside {}", session.slate.len())))?;
        record.slates.push(session.slate.clone());
        let step = world.env_step(&mut session, video, rng)?;
        let r = compute_reward(&step.outcome, weights);
        record.rewards.push(r);
        record.total_reward += r;
        record.events.extend(step.events.iter().cloned());
        record.steps.push(step);
    }
    Ok(record)
}

/// Writes the events of all sessions as JSONL.
pub fn export_events(sessions: &[SessionRecord], writer: impl Write) -> std::io::Result<()> {
    let all: Vec<InteractionEvent> = sessions.iter().flat_map(|s| s.events.iter().cloned()).collect();
    write_events_jsonl(&all, writer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_users: 3,
            n_videos: 5,
            seed: 4,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn cardinality_and_determinism() {
        let w = generate_world(&small()).unwrap();
        assert_eq!((w.n_users(), w.n_videos()), (3, 5));
        assert_eq!(w, generate_world(&small()).unwrap());
        for v in &w.videos {
            let n: f64 = v.topic.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = WorldConfig {
            n_users: 0,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn probability_maps_are_distributions_and_monotone() {
        let b = BehaviorModel::default();
        for i in -20..=20 {
            let a = i as f64 / 10.0;
            for hook in [false, true] {
                let p = b.probabilities(a, hook);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&x| x >= 0.0));
            }
        }
        let (hi, lo) = (b.probabilities(1.0, false), b.probabilities(-1.0, false));
        assert!(hi[0] > lo[0] && hi[4] < lo[4]);
        assert!(b.continue_probability(1.0, false) > b.continue_probability(-1.0, false));
        assert!(b.continue_probability(0.5, true) < b.continue_probability(0.5, false));
    }

    #[test]
    fn zero_noise_emission_is_exact_image() {
        let cfg = WorldConfig {
            noise_visual: 0.0,
            noise_text: 0.0,
            noise_audio: 0.0,
            ..WorldConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let maps = ModalMaps::generate(&cfg, &mut rng);
        let z = random_unit(cfg.latent_dim, &mut rng);
        let raw = emit_modal_features(&z, false, None, &maps, &cfg, &mut rng).unwrap();
        assert_eq!(raw, modal_images(&z, false, &maps, &cfg));
        let missing = emit_modal_features(&z, false, Some(Modality::Text), &maps, &cfg, &mut rng).unwrap();
        assert!(missing.text.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn session_bookkeeping() {
        let mut w = generate_world(&WorldConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weights = RewardWeights::default();
        for s in 0..20 {
            let rec = run_session(&mut w, s % 50, 30.0 * s as f64, 30, &weights, &mut rng, |_, sess| {
                Ok(sess.step % sess.slate.len())
            })
            .unwrap();
            assert!(!rec.steps.is_empty() && rec.steps.len() <= 30);
            let ts: Vec<f64> = rec.events.iter().map(|e| e.timestamp).collect();
            assert!(ts.windows(2).all(|p| p[0] < p[1]));
            let engaged = rec
                .steps
                .iter()
                .filter(|s| matches!(s.outcome.behavior, Engagement::Like | Engagement::Comment | Engagement::Share))
                .count();
            let logged = rec
                .events
                .iter()
                .filter(|e| matches!(e.behavior, Behavior::Like | Behavior::Comment | Behavior::Share))
                .count();
            assert_eq!(engaged, logged);
            let sum: f64 = rec.rewards.iter().sum();
            assert!((sum - rec.total_reward).abs() < 1e-12);
        }
    }

    #[test]
    fn off_slate_video_rejected() {
        let mut w = generate_world(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut s, _) = w.start_session(0, 0.0, &mut rng).unwrap();
        let off = (0..5).find(|v| !s.slate.contains(v)).unwrap_or(99);
        assert!(matches!(w.env_step(&mut s, off, &mut rng), Err(Error::Contract(_))));
        assert!(matches!(w.user_respond(1, 0, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn zero_steps_is_empty() {
        let mut w = generate_world(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = run_session(&mut w, 0, 0.0, 0, &RewardWeights::default(), &mut rng, |_, _| Ok(0)).unwrap();
        assert!(rec.steps.is_empty() && rec.events.is_empty());
    }
}
