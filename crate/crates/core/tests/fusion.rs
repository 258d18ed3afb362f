use mtdqn::fusion::{gated_fuse, modality_gates, FusionConfig, FusionMode, FusionModel, RawModalFeatures};
use mtdqn::numerics::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONFIG: FusionConfig = FusionConfig { d_visual: 5, d_text: 4, d_audio: 3, d_model: 6, heads: 3, layers: 2 };

fn raw() -> impl Strategy<Value = RawModalFeatures> {
    let v = |n| prop::collection::vec(-3.0..3.0f64, n);
    (v(5), v(4), v(3)).prop_map(|(visual, text, audio)| RawModalFeatures { visual, text, audio })
}

fn model(mode: FusionMode, seed: u64) -> (FusionModel, ParamStore) {
    let mut store = ParamStore::new();
    let m = FusionModel::new(&CONFIG, mode, &mut store, "f", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (m, store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_distributions(x in raw(), seed in any::<u64>()) {
        let (m, store) = model(FusionMode::Gated, seed);
        let (f, trace) = m.infer(&store, &x)?;
        prop_assert_eq!(f.len(), CONFIG.d_model);
        prop_assert!(f.iter().all(|v| v.is_finite()));
        prop_assert_eq!(trace.layers.len(), CONFIG.layers);
        for heads in &trace.layers {
            prop_assert_eq!(heads.len(), CONFIG.heads);
            for w in heads {
                for r in 0..3 {
                    prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gates_partition_unity(tokens in prop::collection::vec(-4.0..4.0f64, 12), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let t = tape.constant(Tensor::matrix(3, 4, tokens.clone()).unwrap())?;
        let w = tape.constant(Tensor::matrix(12, 12, (0..144).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())?;
        let b = tape.constant(Tensor::zeros(vec![12]))?;
        let g = modality_gates(t, w, b)?;
        let gv = g.value();
        for j in 0..4 {
            let s: f64 = (0..3).map(|m| gv.at(m, j)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        // the fused value is a convex combination of the tokens
        let f = gated_fuse(g, t)?.data();
        for j in 0..4 {
            let col = [tokens[j], tokens[4 + j], tokens[8 + j]];
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(f[j] >= lo - 1e-12 && f[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn concat_mode_is_affine(a in raw(), b in raw(), seed in any::<u64>()) {
        let (m, store) = model(FusionMode::Concat, seed);
        let mid = RawModalFeatures {
            visual: a.visual.iter().zip(&b.visual).map(|(x, y)| 0.5 * (x + y)).collect(),
            text: a.text.iter().zip(&b.text).map(|(x, y)| 0.5 * (x + y)).collect(),
            audio: a.audio.iter().zip(&b.audio).map(|(x, y)| 0.5 * (x + y)).collect(),
        };
        let (fa, _) = m.infer(&store, &a)?;
        let (fb, _) = m.infer(&store, &b)?;
        let (fm, _) = m.infer(&store, &mid)?;
        for ((x, y), z) in fa.iter().zip(&fb).zip(&fm) {
            prop_assert!((0.5 * (x + y) - z).abs() < 1e-10);
        }
    }
}

#[test]
fn wrong_lengths_and_non_finite_inputs_are_rejected() {
    let (m, store) = model(FusionMode::Gated, 0);
    let short = RawModalFeatures { visual: vec![0.0; 4], text: vec![0.0; 4], audio: vec![0.0; 3] };
    assert!(m.infer(&store, &short).is_err());
    let nan = RawModalFeatures { visual: vec![f64::NAN; 5], text: vec![0.0; 4], audio: vec![0.0; 3] };
    assert!(m.infer(&store, &nan).is_err());
    let bad = FusionConfig { d_model: 7, ..CONFIG };
    assert!(FusionModel::new(&bad, FusionMode::Gated, &mut ParamStore::new(), "f", &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
