use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::agent::QNetwork;
use crate::env::World;
use crate::error::{Error, Result};
use crate::fusion::{AttentionTrace, FusionModel, RawModalFeatures};
use crate::graph::{build_graph, snapshot, Behavior, InteractionEvent, InteractionGraph, TgnnModel};
use crate::harness::config::{ExperimentConfig, History, Variant};
use crate::numerics::{Bound, Dropout, ParamStore, SparseMatrix, Tape, Tensor, Var};

/// Fusion encoder, optional graph encoder and a one-output scoring network
/// applied to per-candidate states `[f; h_seq]`.
#[derive(Clone, Debug)]
pub struct RecModel {
    variant: Variant,
    fusion: FusionModel,
    tgnn: Option<TgnnModel>,
    qnet: QNetwork,
    history_dim: usize,
    windows: usize,
}

impl RecModel {
    pub fn new(config: &ExperimentConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        let variant = config.variant;
        let fusion = FusionModel::new(&config.fusion, variant.fusion_mode(), store, "fusion", rng)?;
        let raw_total = config.fusion.raw_total();
        let (tgnn, history_dim) = match variant.history() {
            History::Graph => {
                let t = TgnnModel::new(
                    &config.graph,
                    config.world.n_users,
                    config.world.n_videos,
                    raw_total,
                    store,
                    "tgnn",
                    rng,
                )?;
                let w = t.output_dim();
                (Some(t), w)
            }
            History::MeanRecent => (None, raw_total),
            History::Absent => (None, 0),
        };
        let state_dim = fusion.output_dim() + history_dim;
        let qnet = QNetwork::new(state_dim, &config.agent.hidden, 1, store, "qnet", rng)?;
        Ok(RecModel {
            variant,
            fusion,
            tgnn,
            qnet,
            history_dim,
            windows: config.graph.windows,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn fusion(&self) -> &FusionModel {
        &self.fusion
    }

    pub fn tgnn(&self) -> Option<&TgnnModel> {
        self.tgnn.as_ref()
    }

    pub fn qnet(&self) -> &QNetwork {
        &self.qnet
    }

    pub fn history_dim(&self) -> usize {
        self.history_dim
    }

    pub fn state_dim(&self) -> usize {
        self.qnet.in_dim()
    }

    /// Indices of the windows a session in `round` looks back on, oldest first.
    pub fn window_ids(&self, round: i64) -> Vec<i64> {
        (round - self.windows as i64..round).collect()
    }
}

/// Everything the model reads from one simulated world: content, the event
/// graph so far and each user's watch log.
#[derive(Clone, Debug)]
pub struct Context {
    raw: Vec<RawModalFeatures>,
    flat: Vec<Vec<f64>>,
    content: Tensor,
    graph: InteractionGraph,
    watched: Vec<Vec<(f64, usize)>>,
    window_len: f64,
    options: crate::graph::SnapshotOptions,
    propagations: HashMap<i64, Arc<SparseMatrix>>,
}

impl Context {
    pub fn new(world: &World, config: &ExperimentConfig) -> Result<Self> {
        let raw: Vec<RawModalFeatures> = world.videos.iter().map(|v| v.features.clone()).collect();
        let flat: Vec<Vec<f64>> = raw.iter().map(RawModalFeatures::concatenated).collect();
        let width = config.fusion.raw_total();
        let content = Tensor::matrix(flat.len(), width, flat.concat())?;
        Ok(Context {
            raw,
            flat,
            content,
            graph: build_graph(&[], world.n_users(), world.n_videos())?,
            watched: vec![Vec::new(); world.n_users()],
            window_len: config.graph.window_len,
            options: config.graph.snapshot,
            propagations: HashMap::new(),
        })
    }

    pub fn raw(&self, video: usize) -> &RawModalFeatures {
        &self.raw[video]
    }

    /// Concatenated raw features of a video.
    pub fn flat(&self, video: usize) -> &[f64] {
        &self.flat[video]
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    /// Start time of a round; round `r` occupies window `r`.
    pub fn round_start(&self, round: i64) -> f64 {
        round as f64 * self.window_len
    }

    /// Adds finished events to the graph and the watch logs. Windows already
    /// cached must not receive new events.
    pub fn record(&mut self, events: &[InteractionEvent]) -> Result<()> {
        for e in events {
            let k = (e.timestamp / self.window_len).floor() as i64;
            if self.propagations.contains_key(&k) {
                return Err(Error::State(format!("window {k} is already frozen")));
            }
        }
        self.graph.extend(events)?;
        for e in events {
            if e.behavior == Behavior::Watch {
                self.watched[e.actor].push((e.timestamp, e.target));
            }
        }
        for log in &mut self.watched {
            log.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Ok(())
    }

    /// Propagation matrix of window `k`; computed once.
    pub fn propagation(&mut self, k: i64) -> Result<Arc<SparseMatrix>> {
        if let Some(p) = self.propagations.get(&k) {
            return Ok(p.clone());
        }
        let start = self.round_start(k);
        let p = Arc::new(snapshot(&self.graph, start, start + self.window_len, self.options)?.propagation());
        self.propagations.insert(k, p.clone());
        Ok(p)
    }

    /// Mean concatenated features of the user's last `count` videos watched
    /// before `before`; zeros if there are none.
    pub fn mean_recent(&self, user: usize, before: f64, count: usize) -> Vec<f64> {
        let width = self.content.shape()[1];
        let recent: Vec<usize> = self.watched[user]
            .iter()
            .rev()
            .filter(|(t, _)| *t < before)
            .take(count)
            .map(|&(_, v)| v)
            .collect();
        let mut out = vec![0.0; width];
        if recent.is_empty() {
            return out;
        }
        for v in &recent {
            for (o, x) in out.iter_mut().zip(&self.flat[*v]) {
                *o += x;
            }
        }
        let n = recent.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Memoized forward values for one fixed parameter version.
#[derive(Clone, Debug, Default)]
pub struct FrozenCache {
    fused: HashMap<usize, Vec<f64>>,
    base: Option<Tensor>,
    windows: HashMap<i64, Tensor>,
    history: HashMap<(usize, i64), Vec<f64>>,
}

impl FrozenCache {
    pub fn clear(&mut self) {
        *self = FrozenCache::default();
    }
}

/// Frozen evaluation of the model under the parameters in `store`.
pub struct Scorer<'a> {
    pub model: &'a RecModel,
    pub store: &'a ParamStore,
    pub cache: &'a mut FrozenCache,
}

impl Scorer<'_> {
    pub fn fused(&mut self, ctx: &Context, video: usize) -> Result<Vec<f64>> {
        if let Some(f) = self.cache.fused.get(&video) {
            return Ok(f.clone());
        }
        let (f, _) = self.model.fusion.infer(self.store, ctx.raw(video))?;
        self.cache.fused.insert(video, f.clone());
        Ok(f)
    }

    /// Fused vector and the attention trace of one video.
    pub fn fused_with_trace(&self, ctx: &Context, video: usize) -> Result<(Vec<f64>, AttentionTrace)> {
        self.model.fusion.infer(self.store, ctx.raw(video))
    }

    pub fn history(&mut self, ctx: &mut Context, user: usize, round: i64) -> Result<Vec<f64>> {
        if let Some(h) = self.cache.history.get(&(user, round)) {
            return Ok(h.clone());
        }
        let model = self.model;
        let h = match model.variant.history() {
            History::Absent => Vec::new(),
            History::MeanRecent => ctx.mean_recent(user, ctx.round_start(round), model.windows),
            History::Graph => {
                let tgnn = model.tgnn.as_ref().expect("graph history has an encoder");
                let tape = Tape::new();
                let bound = self.store.bind_frozen(&tape)?;
                if self.cache.base.is_none() {
                    let base = tgnn.base_features(&bound, &tape, Some(&ctx.content))?.value();
                    self.cache.base = Some(base);
                }
                let node = ctx.graph.user_node(user);
                let mut rows = Vec::with_capacity(model.windows);
                for k in model.window_ids(round) {
                    if !self.cache.windows.contains_key(&k) {
                        let prop = ctx.propagation(k)?;
                        let h0 = tape.constant(self.cache.base.clone().expect("set above"))?;
                        let emb = tgnn.window_embeddings(&bound, &prop, h0)?.value();
                        self.cache.windows.insert(k, emb);
                    }
                    rows.push(self.cache.windows[&k].row(node).to_vec());
                }
                let timeline = tape.constant(Tensor::from_rows(&rows)?)?;
                tgnn.pool(&bound, timeline)?.0.data()
            }
        };
        self.cache.history.insert((user, round), h.clone());
        Ok(h)
    }

    /// States `[f; h_seq]` of the candidates.
    pub fn states(&mut self, ctx: &mut Context, user: usize, round: i64, videos: &[usize]) -> Result<Vec<Vec<f64>>> {
        let h = self.history(ctx, user, round)?;
        videos
            .iter()
            .map(|&v| {
                let mut s = self.fused(ctx, v)?;
                s.extend_from_slice(&h);
                Ok(s)
            })
            .collect()
    }

    /// One score per candidate: a Q-value or an engagement logit.
    pub fn scores(&mut self, ctx: &mut Context, user: usize, round: i64, videos: &[usize]) -> Result<Vec<f64>> {
        let states = self.states(ctx, user, round, videos)?;
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let q = self.model.qnet.q_values_batch(self.store, &refs)?;
        Ok(q.into_iter().map(|row| row[0]).collect())
    }
}

/// Differentiable scoring of many `(user, round, video)` triples on one tape.
/// Shared subexpressions (fused vectors, window embeddings, histories) are
/// computed once per tape.
pub struct TapeEncoder<'t, 'a> {
    model: &'a RecModel,
    tape: &'t Tape,
    bound: &'a Bound<'t>,
    base: Option<Var<'t>>,
    fused: HashMap<usize, Var<'t>>,
    windows: HashMap<i64, Var<'t>>,
    history: HashMap<(usize, i64), Var<'t>>,
}

impl<'t, 'a> TapeEncoder<'t, 'a> {
    pub fn new(model: &'a RecModel, tape: &'t Tape, bound: &'a Bound<'t>) -> Self {
        TapeEncoder {
            model,
            tape,
            bound,
            base: None,
            fused: HashMap::new(),
            windows: HashMap::new(),
            history: HashMap::new(),
        }
    }

    fn fused(&mut self, ctx: &Context, video: usize, dropout: &mut Dropout) -> Result<Var<'t>> {
        if let Some(f) = self.fused.get(&video) {
            return Ok(*f);
        }
        let (f, _) = self.model.fusion.forward(self.bound, ctx.raw(video), self.tape, dropout)?;
        self.fused.insert(video, f);
        Ok(f)
    }

    fn history(&mut self, ctx: &mut Context, user: usize, round: i64) -> Result<Option<Var<'t>>> {
        if let Some(h) = self.history.get(&(user, round)) {
            return Ok(Some(*h));
        }
        let model = self.model;
        let h = match model.variant.history() {
            History::Absent => return Ok(None),
            History::MeanRecent => {
                let m = ctx.mean_recent(user, ctx.round_start(round), model.windows);
                let n = m.len();
                self.tape.constant(Tensor::matrix(1, n, m)?)?
            }
            History::Graph => {
                let tgnn = model.tgnn.as_ref().expect("graph history has an encoder");
                let base = match self.base {
                    Some(b) => b,
                    None => {
                        let b = tgnn.base_features(self.bound, self.tape, Some(&ctx.content))?;
                        self.base = Some(b);
                        b
                    }
                };
                let node = ctx.graph.user_node(user);
                let mut rows = Vec::with_capacity(model.windows);
                for k in model.window_ids(round) {
                    let emb = match self.windows.get(&k) {
                        Some(e) => *e,
                        None => {
                            let prop = ctx.propagation(k)?;
                            let e = tgnn.window_embeddings(self.bound, &prop, base)?;
                            self.windows.insert(k, e);
                            e
                        }
                    };
                    rows.push(emb.gather_rows(&[node])?);
                }
                tgnn.pool(self.bound, Var::concat(&rows, 0)?)?.0
            }
        };
        self.history.insert((user, round), h);
        Ok(Some(h))
    }

    /// Scores (length `B`) of the given triples.
    pub fn scores(&mut self, ctx: &mut Context, items: &[(usize, i64, usize)], dropout: &mut Dropout) -> Result<Var<'t>> {
        let mut rows = Vec::with_capacity(items.len());
        for &(user, round, video) in items {
            let f = self.fused(ctx, video, dropout)?;
            let row = match self.history(ctx, user, round)? {
                Some(h) => Var::concat(&[f, h], 1)?,
                None => f,
            };
            rows.push(row);
        }
        let x = Var::concat(&rows, 0)?;
        let q = self.model.qnet.forward(self.bound, x, dropout)?;
        q.reshape(&[items.len()])
    }
}
