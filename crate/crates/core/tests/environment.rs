use mtdqn::agent::RewardWeights;
use mtdqn::env::{generate_world, run_session, BehaviorModel, Engagement, WorldConfig};
use mtdqn::graph::{build_graph, TargetKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> WorldConfig {
    WorldConfig { n_users: 8, n_videos: 25, session_length: 12, seed, ..WorldConfig::default() }
}

proptest! {
    #[test]
    fn behavior_probabilities_are_distributions(a in -3.0..3.0f64, hook in any::<bool>(), slope in 0.0..10.0f64) {
        let b = BehaviorModel { slope, ..BehaviorModel::default() };
        let p = b.probabilities(a, hook);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = b.continue_probability(a, hook);
        prop_assert!((0.0..=1.0).contains(&c));
        let engaged: f64 = p.iter().zip(Engagement::ALL).filter(|(_, e)| e.is_engaged()).map(|(x, _)| x).sum();
        // a hook never makes engagement less likely, only shallower
        let plain = b.probabilities(a, false);
        let plain_engaged: f64 = plain.iter().zip(Engagement::ALL).filter(|(_, e)| e.is_engaged()).map(|(x, _)| x).sum();
        prop_assert!(engaged >= plain_engaged - 1e-12);
    }

    #[test]
    fn propensity_increases_with_alignment(a in -2.0..2.0f64, d in 0.001..1.0f64) {
        let b = BehaviorModel::default();
        prop_assert!(b.propensity(a + d) > b.propensity(a));
        prop_assert!(b.continue_probability(a + d, false) > b.continue_probability(a, false));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn worlds_are_reproducible(seed in any::<u64>()) {
        let a = generate_world(&small(seed))?;
        let b = generate_world(&small(seed))?;
        prop_assert_eq!(&a, &b);
        for v in &a.videos {
            let n = v.topic.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
            if let Some(m) = v.missing {
                prop_assert!(v.features.get(m).iter().all(|&x| x == 0.0));
            }
        }
        for u in &a.users {
            for &n in &u.neighbors {
                prop_assert!(a.users[n].neighbors.contains(&u.id));
            }
        }
    }

    #[test]
    fn sessions_log_consistent_events(seed in any::<u64>(), user in 0..8usize) {
        let config = small(seed);
        let mut world = generate_world(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let start = 40.0;
        let r = run_session(&mut world, user, start, 100, &RewardWeights::default(), &mut rng, |_, s| {
            Ok(pick.random_range(0..s.slate.len()))
        })?;
        prop_assert!(!r.steps.is_empty() && r.steps.len() <= config.session_length);
        prop_assert!((r.total_reward - r.rewards.iter().sum::<f64>()).abs() < 1e-12);
        for (slate, step) in r.slates.iter().zip(&r.steps) {
            prop_assert!(slate.contains(&step.video));
            let mut s = slate.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), config.slate_size);
        }
        // only the last step may end the session
        for step in &r.steps[..r.steps.len() - 1] {
            prop_assert!(step.outcome.continued);
        }
        let watches = r.events.iter().filter(|e| e.target_kind == TargetKind::Video && e.behavior == mtdqn::graph::Behavior::Watch).count();
        prop_assert_eq!(watches, r.steps.len());
        prop_assert!(r.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        prop_assert!(r.events.iter().all(|e| e.timestamp >= start && e.timestamp < start + r.steps.len() as f64));
        prop_assert!(r.events.iter().all(|e| e.actor == user));
        build_graph(&r.events, config.n_users, config.n_videos)?;
        prop_assert!(!world.users[user].alive);
    }
}

#[test]
fn invalid_worlds_are_rejected() {
    for bad in [
        WorldConfig { n_users: 0, ..WorldConfig::default() },
        WorldConfig { slate_size: 500, ..WorldConfig::default() },
        WorldConfig { hook_fraction: 1.5, ..WorldConfig::default() },
        WorldConfig { noise_text: -1.0, ..WorldConfig::default() },
    ] {
        assert!(generate_world(&bad).is_err(), "{bad:?}");
    }
}

#[test]
fn a_session_cannot_be_opened_twice() {
    let mut world = generate_world(&small(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut s, _) = world.start_session(2, 0.0, &mut rng).unwrap();
    assert!(world.start_session(2, 0.0, &mut rng).is_err());
    let off_slate = (0..25).find(|v| !s.slate.contains(v)).unwrap();
    assert!(world.env_step(&mut s, off_slate, &mut rng).is_err());
    world.end_session(&mut s);
    let first = s.slate[0];
    assert!(world.env_step(&mut s, first, &mut rng).is_err());
}
