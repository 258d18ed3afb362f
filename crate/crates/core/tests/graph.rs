use std::sync::Arc;

use mtdqn::graph::{
    build_graph, read_events_jsonl, snapshot, tgcn_layer, write_events_jsonl, Behavior, InteractionEvent,
    SnapshotOptions,
};
use mtdqn::numerics::{Tape, Tensor};
use proptest::prelude::*;

const N_USERS: usize = 4;
const N_VIDEOS: usize = 5;

fn event() -> impl Strategy<Value = InteractionEvent> {
    let time = 0.0..100.0f64;
    prop_oneof![
        (0..N_USERS, 0..N_VIDEOS, time.clone(), 0.0..1.0f64).prop_map(|(u, v, t, f)| InteractionEvent::watch(u, v, t, f)),
        (0..N_USERS, 0..N_VIDEOS, time.clone(), 0..3usize).prop_map(|(u, v, t, b)| {
            InteractionEvent::engage(u, v, [Behavior::Like, Behavior::Comment, Behavior::Share][b], t)
        }),
        (0..N_USERS, 0..N_USERS, time).prop_map(|(u, o, t)| InteractionEvent::follow(u, o, t)),
    ]
}

fn events() -> impl Strategy<Value = Vec<InteractionEvent>> {
    prop::collection::vec(event(), 0..40)
}

proptest! {
    #[test]
    fn graph_ignores_event_order(evs in events(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = evs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = build_graph(&evs, N_USERS, N_VIDEOS)?;
        let b = build_graph(&shuffled, N_USERS, N_VIDEOS)?;
        prop_assert_eq!(a.edges(), b.edges());
        let sa = snapshot(&a, 10.0, 60.0, SnapshotOptions::default())?;
        let sb = snapshot(&b, 10.0, 60.0, SnapshotOptions::default())?;
        prop_assert_eq!(sa.propagation().to_dense(), sb.propagation().to_dense());
    }

    #[test]
    fn reversed_snapshots_are_symmetric(evs in events(), t0 in 0.0..50.0f64, len in 1.0..60.0f64) {
        let g = build_graph(&evs, N_USERS, N_VIDEOS)?;
        let s = snapshot(&g, t0, t0 + len, SnapshotOptions::default())?;
        let n = g.num_nodes();
        let a = s.adjacency().to_dense();
        let p = s.propagation().to_dense();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((a.at(i, j) - a.at(j, i)).abs() < 1e-12);
                prop_assert!((p.at(i, j) - p.at(j, i)).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&p.at(i, j)));
            }
        }
    }

    #[test]
    fn adjacent_windows_add_up(evs in events(), split in 1.0..99.0f64) {
        let g = build_graph(&evs, N_USERS, N_VIDEOS)?;
        let opts = SnapshotOptions::directed();
        let whole = snapshot(&g, 0.0, 100.0, opts)?.adjacency().to_dense();
        let left = snapshot(&g, 0.0, split, opts)?.adjacency().to_dense();
        let right = snapshot(&g, split, 100.0, opts)?.adjacency().to_dense();
        for ((w, l), r) in whole.data().iter().zip(left.data()).zip(right.data()) {
            prop_assert!((w - l - r).abs() < 1e-9);
        }
        let total: f64 = evs.iter().map(|e| e.weight).sum();
        prop_assert!((whole.data().iter().sum::<f64>() - total).abs() < 1e-9);
    }

    #[test]
    fn dropping_follows_keeps_only_video_edges(evs in events()) {
        let g = build_graph(&evs, N_USERS, N_VIDEOS)?;
        let opts = SnapshotOptions { include_follow: false, reverse_edges: false };
        let a = snapshot(&g, 0.0, 100.0, opts)?.adjacency().to_dense();
        for u in 0..N_USERS {
            for v in 0..N_USERS {
                prop_assert_eq!(a.at(u, v), 0.0);
            }
        }
    }

    #[test]
    fn tgcn_is_equivariant_under_relabeling(evs in events(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = N_USERS + N_VIDEOS;
        let g = build_graph(&evs, N_USERS, N_VIDEOS)?;
        let p = Arc::new(snapshot(&g, 0.0, 100.0, SnapshotOptions::default())?.propagation());
        let h: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w = Tensor::matrix(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::vector(vec![0.1, -0.2]);

        // swap two users in both the events and the features
        let swap = |x: usize| match x { 0 => 1, 1 => 0, x => x };
        let swapped: Vec<InteractionEvent> = evs
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.actor = swap(e.actor);
                if e.behavior == Behavior::Follow {
                    e.target = swap(e.target);
                }
                e
            })
            .collect();
        let g2 = build_graph(&swapped, N_USERS, N_VIDEOS)?;
        let p2 = Arc::new(snapshot(&g2, 0.0, 100.0, SnapshotOptions::default())?.propagation());
        let h2: Vec<Vec<f64>> = (0..n).map(|i| h[swap(i)].clone()).collect();

        let run = |p: &Arc<_>, h: &[Vec<f64>]| {
            let tape = Tape::new();
            let hv = tape.constant(Tensor::from_rows(h).unwrap()).unwrap();
            let wv = tape.constant(w.clone()).unwrap();
            let bv = tape.constant(b.clone()).unwrap();
            tgcn_layer(p, hv, wv, bv).unwrap().value()
        };
        let out = run(&p, &h);
        let out2 = run(&p2, &h2);
        for i in 0..n {
            for (x, y) in out.row(i).iter().zip(out2.row(swap(i))) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn event_log_round_trips(evs in events()) {
        let mut buf = Vec::new();
        write_events_jsonl(&evs, &mut buf).unwrap();
        prop_assert_eq!(read_events_jsonl(buf.as_slice())?, evs);
    }
}

#[test]
fn invalid_events_are_rejected() {
    let bad = [
        InteractionEvent::watch(N_USERS, 0, 1.0, 0.5),
        InteractionEvent::watch(0, N_VIDEOS, 1.0, 0.5),
        InteractionEvent::watch(0, 0, f64::NAN, 0.5),
        InteractionEvent::watch(0, 0, 1.0, -0.5),
        InteractionEvent::follow(0, N_USERS, 1.0),
    ];
    for e in bad {
        assert!(build_graph(std::slice::from_ref(&e), N_USERS, N_VIDEOS).is_err(), "{e:?}");
    }
    let g = build_graph(&[], N_USERS, N_VIDEOS).unwrap();
    assert!(snapshot(&g, 5.0, 5.0, SnapshotOptions::default()).is_err());
}
