use rand::Rng;

use crate::agent::{compute_reward, RewardWeights};
use crate::env::{SessionRecord, StepResult, World};
use crate::error::{Error, Result};
use crate::harness::model::Context;

/// One executed recommendation as seen by a [`Driver`].
pub(crate) struct Observation<'a> {
    pub user: usize,
    pub round: i64,
    pub index: usize,
    pub step: &'a StepResult,
    pub reward: f64,
    /// Slate offered next, `None` once the session is over.
    pub next_slate: Option<&'a [usize]>,
}

/// Policy plus bookkeeping for [`play_round`].
pub(crate) trait Driver {
    fn choose(&mut self, world: &World, ctx: &mut Context, user: usize, round: i64, slate: &[usize]) -> Result<usize>;

    fn observe(&mut self, _ctx: &mut Context, _obs: &Observation<'_>) -> Result<()> {
        Ok(())
    }

    fn session_end(&mut self, _round: i64, _record: &SessionRecord) -> Result<()> {
        Ok(())
    }
}

/// Runs one session per user, all starting at the round's start time, then
/// adds the round's events to the context.
pub(crate) fn play_round(
    world: &mut World,
    ctx: &mut Context,
    weights: &RewardWeights,
    users: &[usize],
    round: i64,
    rng: &mut impl Rng,
    driver: &mut impl Driver,
) -> Result<Vec<SessionRecord>> {
    let t0 = ctx.round_start(round);
    let mut records = Vec::with_capacity(users.len());
    for &user in users {
        let (mut session, follows) = world.start_session(user, t0, rng)?;
        let mut record = SessionRecord {
            user,
            events: follows,
            ..SessionRecord::default()
        };
        while !session.done {
            let slate = session.slate.clone();
            let index = driver.choose(world, ctx, user, round, &slate)?;
            let video = *slate
                .get(index)
                .ok_or_else(|| Error::Contract(format!("slate index {index} outside {}", slate.len())))?;
            let step = world.env_step(&mut session, video, rng)?;
            let reward = compute_reward(&step.outcome, weights);
            let next = (!session.done).then(|| session.slate.clone());
            driver.observe(
                ctx,
                &Observation {
                    user,
                    round,
                    index,
                    step: &step,
                    reward,
                    next_slate: next.as_deref(),
                },
            )?;
            record.slates.push(slate);
            record.rewards.push(reward);
            record.total_reward += reward;
            record.events.extend(step.events.iter().cloned());
            record.steps.push(step);
        }
        driver.session_end(round, &record)?;
        records.push(record);
    }
    let events: Vec<_> = records.iter().flat_map(|r| r.events.iter().cloned()).collect();
    ctx.record(&events)?;
    Ok(records)
}

/// Uniformly random slate choices.
pub(crate) struct RandomDriver<R> {
    pub rng: R,
}

impl<R: Rng> Driver for RandomDriver<R> {
    fn choose(&mut self, _world: &World, _ctx: &mut Context, _user: usize, _round: i64, slate: &[usize]) -> Result<usize> {
        Ok(self.rng.random_range(0..slate.len()))
    }
}
