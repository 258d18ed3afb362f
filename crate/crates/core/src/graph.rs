//! Timestamped interaction graphs and the temporal graph encoder.
//!
//! Nodes `0..N` are users and `N..N+M` are videos. Every interaction is kept
//! as its own directed, weighted, timestamped edge. A half-open time window
//! turns the multigraph into a static weighted adjacency; graph convolution
//! layers run on each of `T` consecutive windows, and temporal attention pools
//! the resulting per-window embeddings of a node into one vector.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Watch,
    Like,
    Comment,
    Share,
    Follow,
}

impl Behavior {
    /// Edge intensity of the behavior; a watch carries its watch fraction instead.
    pub fn intensity(self) -> f64 {
        match self {
            Behavior::Watch | Behavior::Like | Behavior::Follow => 1.0,
            Behavior::Comment => 1.5,
            Behavior::Share => 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Video,
    User,
}

/// One logged interaction; also the JSONL event-log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub actor: usize,
    pub target: usize,
    pub target_kind: TargetKind,
    pub behavior: Behavior,
    pub timestamp: f64,
    pub weight: f64,
}

impl InteractionEvent {
    pub fn watch(user: usize, video: usize, timestamp: f64, fraction: f64) -> Self {
        InteractionEvent {
            actor: user,
            target: video,
            target_kind: TargetKind::Video,
            behavior: Behavior::Watch,
            timestamp,
            weight: fraction,
        }
    }

    /// A like, comment or share on a video, weighted by [`Behavior::intensity`].
    pub fn engage(user: usize, video: usize, behavior: Behavior, timestamp: f64) -> Self {
        InteractionEvent {
            actor: user,
            target: video,
            target_kind: TargetKind::Video,
            behavior,
            timestamp,
            weight: behavior.intensity(),
        }
    }

    pub fn follow(user: usize, other: usize, timestamp: f64) -> Self {
        InteractionEvent {
            actor: user,
            target: other,
            target_kind: TargetKind::User,
            behavior: Behavior::Follow,
            timestamp,
            weight: Behavior::Follow.intensity(),
        }
    }
}

/// Directed edge between node indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub behavior: Behavior,
    pub timestamp: f64,
    pub weight: f64,
}

fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    a.timestamp
        .total_cmp(&b.timestamp)
        .then(a.src.cmp(&b.src))
        .then(a.dst.cmp(&b.dst))
        .then(a.behavior.cmp(&b.behavior))
        .then(a.weight.to_bits().cmp(&b.weight.to_bits()))
}

/// Multigraph over `N` users and `M` videos with edges sorted by timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    n_users: usize,
    n_videos: usize,
    edges: Vec<Edge>,
}

impl InteractionGraph {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_videos(&self) -> usize {
        self.n_videos
    }

    pub fn num_nodes(&self) -> usize {
        self.n_users + self.n_videos
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn user_node(&self, user: usize) -> usize {
        user
    }

    pub fn video_node(&self, video: usize) -> usize {
        self.n_users + video
    }

    fn to_edge(&self, index: usize, e: &InteractionEvent) -> Result<Edge> {
        let bad = |msg: String| Err(Error::Validation(format!("event {index}: {msg}")));
        if !e.timestamp.is_finite() {
            return bad(format!("timestamp {} is not finite", e.timestamp));
        }
        if !(e.weight.is_finite() && e.weight >= 0.0) {
            return bad(format!("weight {} must be finite and nonnegative", e.weight));
        }
        if e.actor >= self.n_users {
            return bad(format!("actor {} outside [0, {})", e.actor, self.n_users));
        }
        let dst = match (e.target_kind, e.behavior) {
            (TargetKind::User, Behavior::Follow) => {
                if e.target >= self.n_users {
                    return bad(format!("user target {} outside [0, {})", e.target, self.n_users));
                }
                e.target
            }
            (TargetKind::Video, b) if b != Behavior::Follow => {
                if e.target >= self.n_videos {
                    return bad(format!("video target {} outside [0, {})", e.target, self.n_videos));
                }
                self.n_users + e.target
            }
            (kind, b) => return bad(format!("behavior {b:?} cannot target a {kind:?}")),
        };
        Ok(Edge {
            src: e.actor,
            dst,
            behavior: e.behavior,
            timestamp: e.timestamp,
            weight: e.weight,
        })
    }

    /// Adds events, keeping edges in canonical order.
    pub fn extend(&mut self, events: &[InteractionEvent]) -> Result<()> {
        let base = self.edges.len();
        let new = events
            .iter()
            .enumerate()
            .map(|(i, e)| self.to_edge(base + i, e))
            .collect::<Result<Vec<_>>>()?;
        let already_sorted = new.windows(2).all(|w| edge_order(&w[0], &w[1]) != Ordering::Greater);
        let appends = self
            .edges
            .last()
            .zip(new.first())
            .is_none_or(|(a, b)| edge_order(a, b) != Ordering::Greater);
        self.edges.extend(new);
        if !(already_sorted && appends) {
            self.edges.sort_by(edge_order);
        }
        Ok(())
    }

    /// Index range of edges with `t_start ≤ t < t_end`.
    fn window_range(&self, t_start: f64, t_end: f64) -> std::ops::Range<usize> {
        let lo = self.edges.partition_point(|e| e.timestamp < t_start);
        let hi = self.edges.partition_point(|e| e.timestamp < t_end);
        lo..hi.max(lo)
    }
}

/// Builds a graph from an event list; the result does not depend on the order
/// of `events`.
pub fn build_graph(events: &[InteractionEvent], n_users: usize, n_videos: usize) -> Result<InteractionGraph> {
    let mut g = InteractionGraph {
        n_users,
        n_videos,
        edges: Vec::with_capacity(events.len()),
    };
    g.extend(events)?;
    Ok(g)
}

/// Which edges enter a snapshot adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotOptions {
    /// Keep user→user follow edges.
    pub include_follow: bool,
    /// Add each edge in the opposite direction too, so actors also aggregate
    /// from their targets.
    pub reverse_edges: bool,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        SnapshotOptions {
            include_follow: true,
            reverse_edges: true,
        }
    }
}

impl SnapshotOptions {
    /// Exactly the logged directed edges.
    pub fn directed() -> Self {
        SnapshotOptions {
            include_follow: true,
            reverse_edges: false,
        }
    }
}

/// Static weighted adjacency of one time window.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// `adjacency[u][v]` = summed weight of edges `u → v` in the window.
    adjacency: SparseMatrix,
}

impl Snapshot {
    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.adjacency
            .row_entries(u)
            .find(|&(c, _)| c == v)
            .map_or(0.0, |(_, w)| w)
    }

    /// Weighted out-degrees and in-degrees.
    pub fn degrees(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.num_nodes();
        let (mut out, mut inn) = (vec![0.0; n], vec![0.0; n]);
        for (u, d) in out.iter_mut().enumerate() {
            for (v, w) in self.adjacency.row_entries(u) {
                *d += w;
                inn[v] += w;
            }
        }
        (out, inn)
    }

    /// Normalized propagation matrix `P` with `P[v][u] = A[u][v] / c_uv`,
    /// `c_uv = √(deg_out(u)·deg_in(v))` (1 when either degree is zero).
    pub fn propagation(&self) -> SparseMatrix {
        let n = self.num_nodes();
        let (out, inn) = self.degrees();
        let mut triplets = Vec::with_capacity(self.adjacency.nnz());
        for u in 0..n {
            for (v, w) in self.adjacency.row_entries(u) {
                let c = if out[u] > 0.0 && inn[v] > 0.0 {
                    (out[u] * inn[v]).sqrt()
                } else {
                    1.0
                };
                triplets.push((v, u, w / c));
            }
        }
        SparseMatrix::from_triplets(n, n, triplets).expect("indices come from a valid adjacency")
    }
}

/// Adjacency of the edges with `t_start ≤ timestamp < t_end`.
pub fn snapshot(graph: &InteractionGraph, t_start: f64, t_end: f64, options: SnapshotOptions) -> Result<Snapshot> {
    if !(t_start < t_end) {
        return Err(Error::Validation(format!(
            "snapshot window [{t_start}, {t_end}) is empty or inverted"
        )));
    }
    let n = graph.num_nodes();
    let mut triplets = Vec::new();
    for e in &graph.edges[graph.window_range(t_start, t_end)] {
        if e.behavior == Behavior::Follow && !options.include_follow {
            continue;
        }
        triplets.push((e.src, e.dst, e.weight));
        if options.reverse_edges {
            triplets.push((e.dst, e.src, e.weight));
        }
    }
    Ok(Snapshot {
        adjacency: SparseMatrix::from_triplets(n, n, triplets)?,
    })
}

/// `relu(P·H·W + b)` for a propagation matrix `P` from [`Snapshot::propagation`].
pub fn tgcn_layer<'t>(propagation: &Arc<SparseMatrix>, h: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let (hs, ws) = (h.shape(), weight.shape());
    if hs.len() != 2 || ws.len() != 2 || hs[1] != ws[0] {
        return Err(Error::dim("tgcn_layer", format!("features {hs:?} with weight {ws:?}")));
    }
    if hs[0] != propagation.cols() {
        return Err(Error::dim(
            "tgcn_layer",
            format!("{} node rows for a {}-node graph", hs[0], propagation.cols()),
        ));
    }
    h.matmul(weight)?.spmm(propagation)?.add_bias(bias)?.relu()
}

/// `α = softmax_t(qᵀ tanh(W h_t + b))` over the rows of `timeline` (`T×w`),
/// with `W` stored as `[w, w]` in row convention. Returns a length-`T` vector.
pub fn temporal_attention<'t>(timeline: Var<'t>, q: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let ts = timeline.shape();
    if ts.len() != 2 {
        return Err(Error::dim("temporal_attention", format!("timeline {ts:?}")));
    }
    if ts[0] == 0 {
        return Err(Error::Degenerate("temporal attention over an empty timeline".into()));
    }
    let width = ts[1];
    if w.shape() != [width, width] || b.shape() != [width] || q.shape() != [width, 1] {
        return Err(Error::dim(
            "temporal_attention",
            format!("width {width} with W {:?}, b {:?}, q {:?}", w.shape(), b.shape(), q.shape()),
        ));
    }
    timeline
        .matmul(w)?
        .add_bias(b)?
        .tanh()?
        .matmul(q)?
        .reshape(&[ts[0]])?
        .softmax()
}

/// `h_seq = Σ_t α_t h_t` as a `1×w` row.
pub fn aggregate<'t>(alpha: Var<'t>, timeline: Var<'t>) -> Result<Var<'t>> {
    let (a, t) = (alpha.shape(), timeline.shape());
    if a.len() != 1 || t.len() != 2 || a[0] != t[0] {
        return Err(Error::dim("aggregate", format!("weights {a:?} with timeline {t:?}")));
    }
    alpha.reshape(&[1, a[0]])?.matmul(timeline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Width `D_g` of the base node features.
    pub base_dim: usize,
    /// Output width of each convolution layer.
    pub widths: Vec<usize>,
    /// Number of windows `T` feeding temporal attention.
    pub windows: usize,
    /// Length of each window in time units.
    pub window_len: f64,
    /// Add a learned projection of each video's raw content to its base feature.
    pub content_features: bool,
    pub snapshot: SnapshotOptions,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            base_dim: 16,
            widths: vec![16, 16, 16],
            windows: 6,
            window_len: 30.0,
            content_features: true,
            snapshot: SnapshotOptions::default(),
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Config("graph widths must be positive".into()));
        }
        if self.widths.is_empty() {
            return Err(Error::Config("graph.widths needs at least one layer".into()));
        }
        if self.windows == 0 {
            return Err(Error::Config("graph.windows must be at least 1".into()));
        }
        if !(self.window_len.is_finite() && self.window_len > 0.0) {
            return Err(Error::Config(format!("graph.window_len = {} must be positive", self.window_len)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&self.base_dim)
    }

    /// Half-open windows `[start, end)` of the timeline ending at `query_time`,
    /// oldest first.
    pub fn windows_before(&self, query_time: f64) -> Vec<(f64, f64)> {
        (0..self.windows)
            .map(|t| {
                let back = (self.windows - t) as f64;
                let start = query_time - back * self.window_len;
                (start, start + self.window_len)
            })
            .collect()
    }
}

/// Parameters of the temporal graph encoder.
#[derive(Clone, Debug)]
pub struct TgnnParams {
    pub embedding: ParamId,
    pub content_proj: Option<ParamId>,
    pub layers: Vec<(ParamId, ParamId)>,
    pub attn_q: ParamId,
    pub attn_w: ParamId,
    pub attn_b: ParamId,
}

/// Graph convolution over windows plus temporal attention.
#[derive(Clone, Debug)]
pub struct TgnnModel {
    config: GraphConfig,
    n_users: usize,
    n_videos: usize,
    content_dim: usize,
    params: TgnnParams,
}

impl TgnnModel {
    /// `content_dim` is the raw feature width of a video (ignored unless
    /// `content_features` is set).
    pub fn new(
        config: &GraphConfig,
        n_users: usize,
        n_videos: usize,
        content_dim: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let n = n_users + n_videos;
        let d = config.base_dim;
        let embedding = store.add_uniform(format!("{prefix}.embedding"), &[n, d], 0.1, rng);
        let content_proj = config.content_features.then(|| {
            store.add_uniform(
                format!("{prefix}.content_proj"),
                &[content_dim, d],
                1.0 / (content_dim as f64).sqrt(),
                rng,
            )
        });
        let mut layers = Vec::new();
        let mut width = d;
        for (l, &out) in config.widths.iter().enumerate() {
            let w = store.add_uniform(format!("{prefix}.layer{l}.weight"), &[width, out], 1.0 / (width as f64).sqrt(), rng);
            let b = store.add(format!("{prefix}.layer{l}.bias"), Tensor::zeros(vec![out]));
            layers.push((w, b));
            width = out;
        }
        let bound = 1.0 / (width as f64).sqrt();
        let attn_q = store.add_uniform(format!("{prefix}.attn.q"), &[width, 1], bound, rng);
        let attn_w = store.add_uniform(format!("{prefix}.attn.weight"), &[width, width], bound, rng);
        let attn_b = store.add(format!("{prefix}.attn.bias"), Tensor::zeros(vec![width]));
        Ok(TgnnModel {
            config: config.clone(),
            n_users,
            n_videos,
            content_dim,
            params: TgnnParams {
                embedding,
                content_proj,
                layers,
                attn_q,
                attn_w,
                attn_b,
            },
        })
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn params(&self) -> &TgnnParams {
        &self.params
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Base features `H⁰` (`(N+M)×D_g`): the embedding table, plus for video
    /// rows a projection of `content` (`M×content_dim`) when enabled.
    pub fn base_features<'t>(&self, bound: &Bound<'t>, tape: &'t Tape, content: Option<&Tensor>) -> Result<Var<'t>> {
        let table = bound[self.params.embedding];
        let Some(proj) = self.params.content_proj else {
            return Ok(table);
        };
        let content = content.ok_or_else(|| Error::Contract("video content features required".into()))?;
        if content.shape() != [self.n_videos, self.content_dim] {
            return Err(Error::dim(
                "base_features",
                format!("content {:?}, expected [{}, {}]", content.shape(), self.n_videos, self.content_dim),
            ));
        }
        let projected = tape.constant(content.clone())?.matmul(bound[proj])?;
        let users = tape.constant(Tensor::zeros(vec![self.n_users, self.config.base_dim]))?;
        table.add(Var::concat(&[users, projected], 0)?)
    }

    /// All-node embeddings after the convolution stack on one window.
    pub fn window_embeddings<'t>(&self, bound: &Bound<'t>, propagation: &Arc<SparseMatrix>, h0: Var<'t>) -> Result<Var<'t>> {
        let mut h = h0;
        for &(w, b) in &self.params.layers {
            h = tgcn_layer(propagation, h, bound[w], bound[b])?;
        }
        Ok(h)
    }

    /// Temporal attention and weighted sum over stacked per-window rows.
    pub fn pool<'t>(&self, bound: &Bound<'t>, timeline: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let p = &self.params;
        let alpha = temporal_attention(timeline, bound[p.attn_q], bound[p.attn_w], bound[p.attn_b])?;
        Ok((aggregate(alpha, timeline)?, alpha))
    }
}

/// Per-window propagation matrices of the `T` windows ending at `query_time`.
pub fn timeline_propagations(graph: &InteractionGraph, config: &GraphConfig, query_time: f64) -> Result<Vec<Arc<SparseMatrix>>> {
    config
        .windows_before(query_time)
        .into_iter()
        .map(|(s, e)| Ok(Arc::new(snapshot(graph, s, e, config.snapshot)?.propagation())))
        .collect()
}

/// `[h_1 … h_T]` of `node` as a `T×w` matrix, one row per window.
pub fn node_timeline<'t>(
    model: &TgnnModel,
    bound: &Bound<'t>,
    propagations: &[Arc<SparseMatrix>],
    h0: Var<'t>,
    node: usize,
) -> Result<Var<'t>> {
    if propagations.is_empty() {
        return Err(Error::Degenerate("timeline needs at least one window".into()));
    }
    let n = h0.shape()[0];
    if node >= n {
        return Err(Error::Validation(format!("node {node} outside [0, {n})")));
    }
    let rows = propagations
        .iter()
        .map(|p| model.window_embeddings(bound, p, h0)?.gather_rows(&[node]))
        .collect::<Result<Vec<_>>>()?;
    Var::concat(&rows, 0)
}

/// End-to-end sequence embedding `h_seq` (`1×w`) of `node` at `query_time`.
pub fn tgnn_forward<'t>(
    model: &TgnnModel,
    bound: &Bound<'t>,
    tape: &'t Tape,
    graph: &InteractionGraph,
    content: Option<&Tensor>,
    node: usize,
    query_time: f64,
) -> Result<Var<'t>> {
    if node >= graph.num_nodes() {
        return Err(Error::Validation(format!("node {node} outside [0, {})", graph.num_nodes())));
    }
    let props = timeline_propagations(graph, model.config(), query_time)?;
    let h0 = model.base_features(bound, tape, content)?;
    let timeline = node_timeline(model, bound, &props, h0, node)?;
    Ok(model.pool(bound, timeline)?.0)
}

/// Reads a JSONL event log, rejecting unknown fields. Blank lines are skipped.
pub fn read_events_jsonl(reader: impl BufRead) -> Result<Vec<InteractionEvent>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: InteractionEvent =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        events.push(event);
    }
    Ok(events)
}

/// Writes one JSON object per line.
pub fn write_events_jsonl(events: &[InteractionEvent], mut writer: impl Write) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
