//! Multimodal content encoder.
//!
//! Each video arrives as three post-extraction feature vectors (visual, text,
//! audio). They are linearly projected to a shared width `D`, stacked into a
//! three-token sequence, passed through pre-norm attention-only encoder blocks
//! and finally mixed by per-dimension gates that form a convex combination of
//! the three contextualized tokens.
//!
//! All weights use the row-vector convention `y = x·W + b` with `W` shaped
//! `[in, out]`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Bound, Dropout, ParamId, ParamStore, Tape, Tensor, Var};

/// Tolerance used to decide whether gates form a partition of unity.
pub const GATE_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Text,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Text, Modality::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
            Modality::Audio => "audio",
        }
    }
}

/// Post-extraction feature vectors of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawModalFeatures {
    pub visual: Vec<f64>,
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
}

impl RawModalFeatures {
    pub fn get(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Visual => &self.visual,
            Modality::Text => &self.text,
            Modality::Audio => &self.audio,
        }
    }

    /// Visual, text and audio values back to back.
    pub fn concatenated(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.visual.len() + self.text.len() + self.audio.len());
        out.extend_from_slice(&self.visual);
        out.extend_from_slice(&self.text);
        out.extend_from_slice(&self.audio);
        out
    }

    pub fn is_finite(&self) -> bool {
        Modality::ALL
            .iter()
            .all(|&m| self.get(m).iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub d_visual: usize,
    pub d_text: usize,
    pub d_audio: usize,
    /// Shared width `D` of the projected tokens and the fused vector.
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d_visual: 12,
            d_text: 12,
            d_audio: 12,
            d_model: 16,
            heads: 2,
            layers: 2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 {
            return Err(Error::Config("fusion.d_model and fusion.heads must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "fusion.d_model = {} is not divisible by fusion.heads = {}",
                self.d_model, self.heads
            )));
        }
        if self.d_visual == 0 || self.d_text == 0 || self.d_audio == 0 {
            return Err(Error::Config("modality dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn raw_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.d_visual,
            Modality::Text => self.d_text,
            Modality::Audio => self.d_audio,
        }
    }

    pub fn raw_total(&self) -> usize {
        self.d_visual + self.d_text + self.d_audio
    }
}

/// How the content vector of a video is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Projection, attention encoder and gated fusion.
    Gated,
    /// Projection, then a linear map of the concatenated projections.
    Concat,
    /// The concatenated raw features, untouched.
    Raw,
}

#[derive(Clone, Debug)]
struct Projection {
    weight: ParamId,
    bias: ParamId,
}

/// Parameter handles of one encoder block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub w_out: ParamId,
}

/// Per-layer, per-head attention weights over the (visual, text, audio) tokens.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    /// `layers[l][h]` is the `3×3` weight matrix of head `h` in layer `l`;
    /// row = attending modality, column = attended modality.
    pub layers: Vec<Vec<Tensor>>,
}

impl AttentionTrace {
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }
}

/// Projections, encoder blocks and gates of the content encoder.
#[derive(Clone, Debug)]
pub struct FusionModel {
    config: FusionConfig,
    mode: FusionMode,
    projections: Vec<Projection>,
    layers: Vec<EncoderLayer>,
    gate_weight: Option<ParamId>,
    gate_bias: Option<ParamId>,
    concat_weight: Option<ParamId>,
    concat_bias: Option<ParamId>,
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl FusionModel {
    /// Registers all parameters under `prefix` in `store`.
    pub fn new(
        config: &FusionConfig,
        mode: FusionMode,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut model = FusionModel {
            config: config.clone(),
            mode,
            projections: Vec::new(),
            layers: Vec::new(),
            gate_weight: None,
            gate_bias: None,
            concat_weight: None,
            concat_bias: None,
        };
        if mode == FusionMode::Raw {
            return Ok(model);
        }
        for m in Modality::ALL {
            let fan_in = config.raw_dim(m);
            let weight = store.add_uniform(
                format!("{prefix}.proj.{}.weight", m.name()),
                &[fan_in, d],
                fan_in_bound(fan_in),
                rng,
            );
            let bias = store.add(format!("{prefix}.proj.{}.bias", m.name()), Tensor::zeros(vec![d]));
            model.projections.push(Projection { weight, bias });
        }
        match mode {
            FusionMode::Gated => {
                for l in 0..config.layers {
                    let p = |n: &str| format!("{prefix}.layer{l}.{n}");
                    let b = fan_in_bound(d);
                    model.layers.push(EncoderLayer {
                        ln_gain: store.add(p("ln.gain"), Tensor::ones(vec![d])),
                        ln_bias: store.add(p("ln.bias"), Tensor::zeros(vec![d])),
                        w_query: store.add_uniform(p("w_query"), &[d, d], b, rng),
                        w_key: store.add_uniform(p("w_key"), &[d, d], b, rng),
                        w_value: store.add_uniform(p("w_value"), &[d, d], b, rng),
                        w_out: store.add_uniform(p("w_out"), &[d, d], b, rng),
                    });
                }
                model.gate_weight = Some(store.add_uniform(
                    format!("{prefix}.gate.weight"),
                    &[3 * d, 3 * d],
                    fan_in_bound(3 * d),
                    rng,
                ));
                model.gate_bias = Some(store.add(format!("{prefix}.gate.bias"), Tensor::zeros(vec![3 * d])));
            }
            FusionMode::Concat => {
                model.concat_weight = Some(store.add_uniform(
                    format!("{prefix}.concat.weight"),
                    &[3 * d, d],
                    fan_in_bound(3 * d),
                    rng,
                ));
                model.concat_bias = Some(store.add(format!("{prefix}.concat.bias"), Tensor::zeros(vec![d])));
            }
            FusionMode::Raw => unreachable!(),
        }
        Ok(model)
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    /// Width of the content vector this model emits.
    pub fn output_dim(&self) -> usize {
        match self.mode {
            FusionMode::Raw => self.config.raw_total(),
            _ => self.config.d_model,
        }
    }

    pub fn gate_params(&self) -> Option<(ParamId, ParamId)> {
        self.gate_weight.zip(self.gate_bias)
    }

    fn check_raw(&self, raw: &RawModalFeatures) -> Result<()> {
        for m in Modality::ALL {
            let (got, want) = (raw.get(m).len(), self.config.raw_dim(m));
            if got != want {
                return Err(Error::dim(
                    "project_modalities",
                    format!("{} features have length {got}, expected {want}", m.name()),
                ));
            }
        }
        if !raw.is_finite() {
            return Err(Error::NonFinite("raw modal features".into()));
        }
        Ok(())
    }

    /// `x' = x·W_x + b_x` for each modality, as `1×D` rows.
    pub fn project_modalities<'t>(
        &self,
        bound: &Bound<'t>,
        raw: &RawModalFeatures,
        tape: &'t Tape,
    ) -> Result<[Var<'t>; 3]> {
        self.check_raw(raw)?;
        if self.projections.is_empty() {
            return Err(Error::State("raw fusion mode has no projections".into()));
        }
        let mut out = Vec::with_capacity(3);
        for (m, p) in Modality::ALL.iter().zip(&self.projections) {
            let x = tape.constant(Tensor::matrix(1, self.config.raw_dim(*m), raw.get(*m).to_vec())?)?;
            out.push(x.matmul(bound[p.weight])?.add_bias(bound[p.bias])?);
        }
        Ok([out[0], out[1], out[2]])
    }

    /// Content vector as a `1×output_dim` row, plus the attention trace
    /// (empty unless the gated encoder ran).
    pub fn forward<'t>(
        &self,
        bound: &Bound<'t>,
        raw: &RawModalFeatures,
        tape: &'t Tape,
        dropout: &mut Dropout,
    ) -> Result<(Var<'t>, AttentionTrace)> {
        if self.mode == FusionMode::Raw {
            self.check_raw(raw)?;
            let all = raw.concatenated();
            let n = all.len();
            return Ok((tape.constant(Tensor::matrix(1, n, all)?)?, AttentionTrace::default()));
        }
        let [v, t, a] = self.project_modalities(bound, raw, tape)?;
        match self.mode {
            FusionMode::Concat => {
                let joined = Var::concat(&[v, t, a], 1)?;
                let w = self.concat_weight.expect("concat mode");
                let b = self.concat_bias.expect("concat mode");
                Ok((joined.matmul(bound[w])?.add_bias(bound[b])?, AttentionTrace::default()))
            }
            FusionMode::Gated => {
                let mut tokens = Var::concat(&[v, t, a], 0)?;
                let mut trace = AttentionTrace::default();
                for layer in &self.layers {
                    let normed = tokens.layer_norm(bound[layer.ln_gain], bound[layer.ln_bias])?;
                    let (mixed, weights) = multi_head(normed, layer, bound, self.config.heads)?;
                    let mixed = dropout.apply(mixed)?;
                    tokens = tokens.add(mixed)?;
                    trace.layers.push(weights);
                }
                let (gw, gb) = self.gate_params().expect("gated mode");
                let gates = modality_gates(tokens, bound[gw], bound[gb])?;
                Ok((gated_fuse(gates, tokens)?, trace))
            }
            FusionMode::Raw => unreachable!(),
        }
    }

    /// Forward pass with frozen parameters, returning plain values.
    pub fn infer(&self, store: &ParamStore, raw: &RawModalFeatures) -> Result<(Vec<f64>, AttentionTrace)> {
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape)?;
        let (f, trace) = self.forward(&bound, raw, &tape, &mut Dropout::disabled())?;
        Ok((f.data(), trace))
    }
}

/// `softmax(Q·Kᵀ/√d_k)·V`; returns the output and the attention weights.
pub fn scaled_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::dim(
            "scaled_attention",
            format!("Q {qs:?}, K {ks:?}, V {vs:?}"),
        ));
    }
    if qs[0] == 0 || ks[0] == 0 {
        return Err(Error::Degenerate("attention over zero tokens".into()));
    }
    let d_k = qs[1] as f64;
    let scores = q.matmul(k.transpose()?)?.scale(1.0 / d_k.sqrt())?;
    let weights = scores.softmax()?;
    Ok((weights.matmul(v)?, weights))
}

/// Multi-head self-attention sublayer: per-head scaled attention on column
/// slices of the Q/K/V projections, concatenated and mixed by `W_O`.
pub fn multi_head<'t>(
    tokens: Var<'t>,
    layer: &EncoderLayer,
    bound: &Bound<'t>,
    heads: usize,
) -> Result<(Var<'t>, Vec<Tensor>)> {
    let d = tokens.shape()[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let q = tokens.matmul(bound[layer.w_query])?;
    let k = tokens.matmul(bound[layer.w_key])?;
    let v = tokens.matmul(bound[layer.w_value])?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let (out, w) = scaled_attention(q.slice_cols(lo, hi)?, k.slice_cols(lo, hi)?, v.slice_cols(lo, hi)?)?;
        outs.push(out);
        weights.push(w.value());
    }
    let joined = if heads == 1 { outs[0] } else { Var::concat(&outs, 1)? };
    Ok((joined.matmul(bound[layer.w_out])?, weights))
}

/// Gate matrix `G` (`3×D`) from contextualized tokens (`3×D`).
///
/// Row `m` holds the logits `z_m = Σ_j x_j·W_{m,j} + b_m` (one linear gate head
/// per modality reading all three tokens); each column is then normalized by
/// a softmax across the three modalities.
pub fn modality_gates<'t>(tokens: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let shape = tokens.shape();
    if shape.len() != 2 || shape[0] != 3 {
        return Err(Error::dim("modality_gates", format!("tokens {shape:?}, expected 3×D")));
    }
    let d = shape[1];
    if weight.shape() != [3 * d, 3 * d] || bias.shape() != [3 * d] {
        return Err(Error::dim(
            "modality_gates",
            format!("gate weight {:?}, bias {:?} for D = {d}", weight.shape(), bias.shape()),
        ));
    }
    let logits = tokens
        .reshape(&[1, 3 * d])?
        .matmul(weight)?
        .add_bias(bias)?
        .reshape(&[3, d])?;
    logits.transpose()?.softmax()?.transpose()
}

/// `f = g_v ⊙ v' + g_t ⊙ t' + g_a ⊙ a'`, returned as a `1×D` row.
pub fn gated_fuse<'t>(gates: Var<'t>, tokens: Var<'t>) -> Result<Var<'t>> {
    let (gs, ts) = (gates.shape(), tokens.shape());
    if gs != ts || gs.len() != 2 || gs[0] != 3 {
        return Err(Error::dim("gated_fuse", format!("gates {gs:?}, tokens {ts:?}")));
    }
    let d = gs[1];
    let g = gates.data();
    for j in 0..d {
        let s = g[j] + g[d + j] + g[2 * d + j];
        if (s - 1.0).abs() > GATE_SUM_TOLERANCE {
            return Err(Error::Contract(format!(
                "gates at dimension {j} sum to {s}, expected 1"
            )));
        }
    }
    let ones = gates.tape().constant(Tensor::ones(vec![1, 3]))?;
    ones.matmul(gates.mul(tokens)?)
}

/// One row of the attention dump: weights from one modality to all three.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub layer: usize,
    pub head: usize,
    pub from: Modality,
    pub weights: [f64; 3],
}

/// Flattens a trace into one row per `(layer, head, from)`.
pub fn attention_rows(trace: &AttentionTrace) -> Result<Vec<AttentionRow>> {
    if trace.is_empty() {
        return Err(Error::State("no attention trace recorded; run a gated forward pass first".into()));
    }
    let mut rows = Vec::new();
    for (l, heads) in trace.layers.iter().enumerate() {
        for (h, w) in heads.iter().enumerate() {
            for (i, from) in Modality::ALL.iter().enumerate() {
                rows.push(AttentionRow {
                    layer: l,
                    head: h,
                    from: *from,
                    weights: [w.at(i, 0), w.at(i, 1), w.at(i, 2)],
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with header `layer,head,from_modality,to_modality,weight`, one line per
/// weight.
pub fn export_attention(trace: &AttentionTrace) -> Result<String> {
    let rows = attention_rows(trace)?;
    let mut out = String::from("layer,head,from_modality,to_modality,weight\n");
    for r in rows {
        for (to, w) in Modality::ALL.iter().zip(r.weights) {
            writeln!(out, "{},{},{},{},{}", r.layer, r.head, r.from.name(), to.name(), w)
                .expect("writing to a String");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows<'t>(t: &'t Tape, r: &[&[f64]]) -> Var<'t> {
        t.constant(Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap())
            .unwrap()
    }

    fn random_raw(cfg: &FusionConfig, rng: &mut ChaCha8Rng) -> RawModalFeatures {
        let mut gen = |n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        RawModalFeatures {
            visual: gen(cfg.d_visual),
            text: gen(cfg.d_text),
            audio: gen(cfg.d_audio),
        }
    }

    #[test]
    fn identity_projection_passes_through() {
        let cfg = FusionConfig {
            d_visual: 2,
            d_text: 2,
            d_audio: 2,
            d_model: 2,
            heads: 1,
            layers: 0,
        };
        let mut store = ParamStore::new();
        let model = FusionModel::new(&cfg, FusionMode::Gated, &mut store, "f", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = store.find("f.proj.visual.weight").unwrap();
        store.get_mut(w).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 2.0]);
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape).unwrap();
        let raw = RawModalFeatures {
            visual: vec![1.0, 1.0],
            text: vec![0.0, 0.0],
            audio: vec![0.0, 0.0],
        };
        let [v, t, a] = model.project_modalities(&bound, &raw, &tape).unwrap();
        assert_eq!(v.data(), vec![1.0, 2.0]);
        assert_eq!(t.shape(), vec![1, 2]);
        assert_eq!(a.shape(), vec![1, 2]);

        store.get_mut(w).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape).unwrap();
        let raw = RawModalFeatures {
            visual: vec![0.3, -0.7],
            ..raw
        };
        let [v, _, _] = model.project_modalities(&bound, &raw, &tape).unwrap();
        assert_eq!(v.data(), vec![0.3, -0.7]);
    }

    #[test]
    fn wrong_modality_length_names_modality() {
        let cfg = FusionConfig::default();
        let mut store = ParamStore::new();
        let model = FusionModel::new(&cfg, FusionMode::Gated, &mut store, "f", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut raw = random_raw(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        raw.audio.pop();
        let err = model.infer(&store, &raw).unwrap_err().to_string();
        assert!(err.contains("audio"), "{err}");
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = FusionConfig {
            d_model: 10,
            heads: 3,
            ..FusionConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn attention_single_token_returns_value_row() {
        let tape = Tape::new();
        let q = rows(&tape, &[&[0.3, -1.0]]);
        let k = rows(&tape, &[&[2.0, 0.5]]);
        let v = rows(&tape, &[&[7.0, -3.0]]);
        let (out, _) = scaled_attention(q, k, v).unwrap();
        assert_eq!(out.data(), vec![7.0, -3.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let tape = Tape::new();
        let q = rows(&tape, &[&[0.9, -0.4]]);
        let k = rows(&tape, &[&[1.0, 2.0], &[1.0, 2.0]]);
        let v = rows(&tape, &[&[1.0, 3.0], &[5.0, -1.0]]);
        let (out, _) = scaled_attention(q, k, v).unwrap();
        let d = out.data();
        assert!((d[0] - 3.0).abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_token_hand_case() {
        // scores q·k/√2: row0 = [1/√2, 0], row1 = [0, 2/√2]
        let tape = Tape::new();
        let q = rows(&tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let k = rows(&tape, &[&[1.0, 0.0], &[0.0, 2.0]]);
        let v = rows(&tape, &[&[1.0, 2.0], &[3.0, 4.0]]);
        let (out, _) = scaled_attention(q, k, v).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w0 = s.exp() / (s.exp() + 1.0);
        let w1 = 1.0 / (1.0 + (2.0 * s).exp());
        let expected = [
            w0 * 1.0 + (1.0 - w0) * 3.0,
            w0 * 2.0 + (1.0 - w0) * 4.0,
            w1 * 1.0 + (1.0 - w1) * 3.0,
            w1 * 2.0 + (1.0 - w1) * 4.0,
        ];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_width_mismatch() {
        let tape = Tape::new();
        let q = rows(&tape, &[&[1.0, 0.0]]);
        let k = rows(&tape, &[&[1.0, 0.0, 1.0]]);
        let v = rows(&tape, &[&[1.0, 0.0]]);
        assert!(matches!(scaled_attention(q, k, v), Err(Error::Dimension { .. })));
    }

    fn gated_model(layers: usize, heads: usize, d: usize, seed: u64) -> (FusionModel, ParamStore) {
        let cfg = FusionConfig {
            d_visual: 5,
            d_text: 4,
            d_audio: 6,
            d_model: d,
            heads,
            layers,
        };
        let mut store = ParamStore::new();
        let model = FusionModel::new(&cfg, FusionMode::Gated, &mut store, "f", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (model, store)
    }

    #[test]
    fn single_head_identity_output_is_plain_attention() {
        let (model, mut store) = gated_model(1, 1, 4, 3);
        let wo = model.layers()[0].w_out;
        *store.get_mut(wo) = Tensor::identity(4);
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tokens = tape.constant(Tensor::matrix(3, 4, x).unwrap()).unwrap();
        let layer = &model.layers()[0];
        let (mh, _) = multi_head(tokens, layer, &bound, 1).unwrap();
        let q = tokens.matmul(bound[layer.w_query]).unwrap();
        let k = tokens.matmul(bound[layer.w_key]).unwrap();
        let v = tokens.matmul(bound[layer.w_value]).unwrap();
        let (direct, _) = scaled_attention(q, k, v).unwrap();
        assert_eq!(mh.value(), direct.value());
        assert_eq!(mh.shape(), vec![3, 4]);
    }

    #[test]
    fn multi_head_is_permutation_equivariant() {
        let (model, store) = gated_model(1, 2, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let perm = [2usize, 0, 1];
            let px: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
            let tape = Tape::new();
            let bound = store.bind_frozen(&tape).unwrap();
            let a = tape.constant(Tensor::from_rows(&x).unwrap()).unwrap();
            let b = tape.constant(Tensor::from_rows(&px).unwrap()).unwrap();
            let (ya, _) = multi_head(a, &model.layers()[0], &bound, 2).unwrap();
            let (yb, _) = multi_head(b, &model.layers()[0], &bound, 2).unwrap();
            let (ya, yb) = (ya.value(), yb.value());
            for (r, &src) in perm.iter().enumerate() {
                for (p, q) in yb.row(r).iter().zip(ya.row(src)) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn equal_gate_logits_give_thirds() {
        let tape = Tape::new();
        let tokens = rows(&tape, &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let w = tape.constant(Tensor::zeros(vec![6, 6])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![6])).unwrap();
        let g = modality_gates(tokens, w, b).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn saturated_gate_dominates() {
        let tape = Tape::new();
        let tokens = rows(&tape, &[&[0.0], &[0.0], &[0.0]]);
        let w = tape.constant(Tensor::zeros(vec![3, 3])).unwrap();
        let b = tape.constant(Tensor::vector(vec![0.0, 20.0, 0.0])).unwrap();
        let g = modality_gates(tokens, w, b).unwrap().data();
        assert!(g[1] > 0.999);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gated_fuse_examples() {
        let tape = Tape::new();
        let tokens = rows(&tape, &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 9.0]]);
        let pass = rows(&tape, &[&[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(gated_fuse(pass, tokens).unwrap().data(), vec![1.0, 2.0]);
        let third = 1.0 / 3.0;
        let uniform = rows(&tape, &[&[third, third], &[third, third], &[third, third]]);
        let f = gated_fuse(uniform, tokens).unwrap().data();
        assert!((f[0] - 3.0).abs() < 1e-14 && (f[1] - 5.0).abs() < 1e-14);

        let t = rows(&tape, &[&[4.0], &[0.0], &[8.0]]);
        let g = rows(&tape, &[&[0.5], &[0.25], &[0.25]]);
        assert_eq!(gated_fuse(g, t).unwrap().data(), vec![4.0]);

        let bad = rows(&tape, &[&[0.5], &[0.5], &[0.5]]);
        assert!(matches!(gated_fuse(bad, t), Err(Error::Contract(_))));
    }

    #[test]
    fn forward_shape_and_determinism() {
        let (model, store) = gated_model(2, 2, 8, 11);
        let raw = random_raw(model.config(), &mut ChaCha8Rng::seed_from_u64(2));
        let (f1, trace) = model.infer(&store, &raw).unwrap();
        let (f2, _) = model.infer(&store, &raw).unwrap();
        assert_eq!(f1.len(), 8);
        assert_eq!(f1, f2);
        assert_eq!(trace.layers.len(), 2);
        assert_eq!(trace.layers[0].len(), 2);
    }

    #[test]
    fn zero_layers_reduces_to_gated_projections() {
        let (model, store) = gated_model(0, 2, 8, 12);
        let raw = random_raw(model.config(), &mut ChaCha8Rng::seed_from_u64(3));
        let (f, trace) = model.infer(&store, &raw).unwrap();
        assert!(trace.is_empty());
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape).unwrap();
        let [v, t, a] = model.project_modalities(&bound, &raw, &tape).unwrap();
        let tokens = Var::concat(&[v, t, a], 0).unwrap();
        let (gw, gb) = model.gate_params().unwrap();
        let g = modality_gates(tokens, bound[gw], bound[gb]).unwrap();
        assert_eq!(gated_fuse(g, tokens).unwrap().data(), f);
    }

    #[test]
    fn attention_export_layout() {
        let (model, store) = gated_model(2, 2, 8, 13);
        let raw = random_raw(model.config(), &mut ChaCha8Rng::seed_from_u64(4));
        let (_, trace) = model.infer(&store, &raw).unwrap();
        let rows = attention_rows(&trace).unwrap();
        assert_eq!(rows.len(), 12);
        for r in &rows {
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let csv = export_attention(&trace).unwrap();
        assert_eq!(csv.lines().count(), 1 + 36);
        assert!(matches!(export_attention(&AttentionTrace::default()), Err(Error::State(_))));
    }

    #[test]
    fn concat_and_raw_modes() {
        let cfg = FusionConfig::default();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let concat = FusionModel::new(&cfg, FusionMode::Concat, &mut store, "c", &mut rng).unwrap();
        let raw_model = FusionModel::new(&cfg, FusionMode::Raw, &mut store, "r", &mut rng).unwrap();
        let raw = random_raw(&cfg, &mut rng);
        assert_eq!(concat.infer(&store, &raw).unwrap().0.len(), cfg.d_model);
        let (r, _) = raw_model.infer(&store, &raw).unwrap();
        assert_eq!(r, raw.concatenated());
    }
}
