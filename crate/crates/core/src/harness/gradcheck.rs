//! Finite-difference verification of every differentiable operation and of
//! the composed forwards (fusion, temporal graph encoder, Q-network over the
//! concatenated state, TD loss).
//!
//! Each check draws [`POINTS`] random points. At every point the analytic
//! gradient of a scalar loss is compared with central differences
//! (step [`EPS`]) using the norm-wise relative error of
//! [`relative_error`], once per input or parameter group. Non-scalar outputs
//! are reduced to `Σ w ⊙ y` with random weights `w` so that no coordinate of
//! the output is skipped.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{td_loss, QNetwork};
use crate::error::{Error, Result};
use crate::fusion::{gated_fuse, modality_gates, multi_head, scaled_attention, FusionConfig, FusionMode, FusionModel, RawModalFeatures};
use crate::graph::{aggregate, build_graph, temporal_attention, tgcn_layer, tgnn_forward, Behavior, GraphConfig, InteractionEvent, TgnnModel};
use crate::harness::train::bce_with_logits;
use crate::numerics::{finite_diff_grad, relative_error, Bound, Dropout, ParamStore, SparseMatrix, Tape, Tensor, Var};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const POINTS: usize = 10;

/// Worst error of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: String,
    pub points: usize,
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub tolerance: f64,
    pub checks: Vec<OpCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// Checks at or above the tolerance, including any that produced NaN.
    pub fn failures(&self) -> Vec<&OpCheck> {
        self.checks.iter().filter(|c| !(c.worst < self.tolerance)).collect()
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.worst).fold(0.0, |a, b| if b.is_nan() || b > a { b } else { a })
    }

    /// `Ok` when every check passed, otherwise an error naming the failures.
    pub fn ensure_passed(&self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let names: Vec<String> = self.failures().iter().map(|c| format!("{} ({:.3e})", c.name, c.worst)).collect();
        Err(Error::Contract(format!("gradient check failed: {}", names.join(", "))))
    }

    pub fn get(&self, name: &str) -> Option<&OpCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One line per check, then a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.worst < self.tolerance { "ok" } else { "FAIL" };
            writeln!(out, "{:<28} points {:>3}  worst rel err {:.3e}  {status}", c.name, c.points, c.worst).expect("write to string");
        }
        let failed = self.failures().len();
        writeln!(
            out,
            "{} checks, {failed} failed, worst {:.3e}, tolerance {:.0e}",
            self.checks.len(),
            self.worst(),
            self.tolerance
        )
        .expect("write to string");
        out
    }
}

/// Accumulates named checks, all drawing from one seeded stream.
pub struct GradCheck {
    rng: ChaCha8Rng,
    points: usize,
    checks: Vec<OpCheck>,
}

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    // keep away from the ReLU kink at zero
    let data = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x.abs() < 0.05 {
                x + 0.1f64.copysign(x)
            } else {
                x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Redraws every parameter uniformly so that no check sits at an
/// initialization special case (zero biases, unit gains).
fn randomize(store: &mut ParamStore, rng: &mut impl Rng) {
    for t in store.tensors_mut() {
        *t = random_tensor(t.shape(), rng).with_requires_grad(t.requires_grad());
    }
}

fn weighted_sum<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    let w = out.tape().constant(weights.clone().reshaped(out.shape())?)?;
    out.mul(w)?.sum()
}

/// Maps NaN to +∞ so failures sort last.
fn worse(a: f64, b: f64) -> f64 {
    let b = if b.is_nan() { f64::INFINITY } else { b };
    a.max(b)
}

impl GradCheck {
    pub fn new(seed: u64) -> Self {
        GradCheck {
            rng: ChaCha8Rng::seed_from_u64(seed),
            points: POINTS,
            checks: Vec::new(),
        }
    }

    /// Overrides the number of random points per check.
    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points.max(1);
        self
    }

    pub fn finish(self) -> GradReport {
        GradReport {
            tolerance: TOLERANCE,
            checks: self.checks,
        }
    }

    /// Checks `build` with respect to each of its inputs, drawn with the
    /// given shapes.
    pub fn inputs<F>(&mut self, name: &str, shapes: &[&[usize]], build: F) -> Result<f64>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        let mut worst = 0.0f64;
        for _ in 0..self.points {
            let xs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(s, &mut self.rng)).collect();
            let eval = |xs: &[Tensor], w: Option<&Tensor>| -> Result<(f64, Option<Vec<Tensor>>, Vec<usize>)> {
                let tape = Tape::new();
                let vars = xs.iter().map(|x| tape.param(x)).collect::<Result<Vec<_>>>()?;
                let out = build(&tape, &vars)?;
                let shape = out.shape();
                let Some(w) = w else {
                    return Ok((0.0, None, shape));
                };
                let loss = weighted_sum(out, w)?;
                let value = loss.item()?;
                let grads = tape.backward(loss)?;
                let g = vars
                    .iter()
                    .zip(xs)
                    .map(|(v, x)| grads.get(*v).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
                    .collect();
                Ok((value, Some(g), shape))
            };
            let (_, _, out_shape) = eval(&xs, None)?;
            let w = random_tensor(&out_shape, &mut self.rng);
            let (_, analytic, _) = eval(&xs, Some(&w))?;
            let analytic = analytic.expect("weights given");
            let failure = RefCell::new(None);
            for i in 0..xs.len() {
                let probe = RefCell::new(xs.clone());
                let numeric = finite_diff_grad(
                    |x| {
                        probe.borrow_mut()[i] = x.clone();
                        let r = eval(&probe.borrow(), Some(&w));
                        r.map(|(v, _, _)| v).unwrap_or_else(|e| {
                            failure.borrow_mut().get_or_insert(e);
                            f64::NAN
                        })
                    },
                    &xs[i],
                    EPS,
                );
                if let Some(e) = failure.borrow_mut().take() {
                    return Err(e);
                }
                worst = worse(worst, relative_error(analytic[i].data(), numeric.data()));
            }
        }
        self.checks.push(OpCheck {
            name: name.to_string(),
            points: self.points,
            worst,
        });
        Ok(worst)
    }

    /// Checks `build` with respect to every parameter group of the store
    /// returned by `setup`. The store is redrawn at random for each point.
    pub fn params<S, M, F>(&mut self, name: &str, mut setup: M, build: F) -> Result<f64>
    where
        M: FnMut(&mut ChaCha8Rng) -> Result<(ParamStore, S)>,
        F: for<'t> Fn(&'t Tape, &Bound<'t>, &S) -> Result<Var<'t>>,
    {
        let mut worst = 0.0f64;
        for _ in 0..self.points {
            let (mut store, state) = setup(&mut self.rng)?;
            randomize(&mut store, &mut self.rng);
            let eval = |store: &ParamStore, w: Option<&Tensor>| -> Result<(f64, Option<Vec<Tensor>>, Vec<usize>)> {
                let tape = Tape::new();
                let bound = store.bind(&tape)?;
                let out = build(&tape, &bound, &state)?;
                let shape = out.shape();
                let Some(w) = w else {
                    return Ok((0.0, None, shape));
                };
                let loss = weighted_sum(out, w)?;
                let value = loss.item()?;
                let grads = tape.backward(loss)?;
                Ok((value, Some(store.collect_grads(&bound, &grads)), shape))
            };
            let (_, _, out_shape) = eval(&store, None)?;
            let w = random_tensor(&out_shape, &mut self.rng);
            let analytic = eval(&store, Some(&w))?.1.expect("weights given");
            let failure = RefCell::new(None);
            let probe = RefCell::new(store.clone());
            for (g, grad) in analytic.iter().enumerate() {
                let original = store.tensors()[g].clone();
                let numeric = finite_diff_grad(
                    |x| {
                        probe.borrow_mut().tensors_mut()[g] = x.clone();
                        eval(&probe.borrow(), Some(&w)).map(|(v, _, _)| v).unwrap_or_else(|e| {
                            failure.borrow_mut().get_or_insert(e);
                            f64::NAN
                        })
                    },
                    &original,
                    EPS,
                );
                probe.borrow_mut().tensors_mut()[g] = original;
                if let Some(e) = failure.borrow_mut().take() {
                    return Err(e);
                }
                worst = worse(worst, relative_error(grad.data(), numeric.data()));
            }
        }
        self.checks.push(OpCheck {
            name: name.to_string(),
            points: self.points,
            worst,
        });
        Ok(worst)
    }
}

/// `x³` with its exact backward rule, recorded as a custom operation.
pub fn cube<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let v = x.value();
    let y = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * a * a).collect())?;
    x.tape().custom(
        &[x],
        y,
        Box::new(|inputs, _out, upstream| {
            vec![inputs[0].data().iter().zip(upstream).map(|(a, g)| 3.0 * a * a * g).collect()]
        }),
    )
}

fn random_sparse(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Arc<SparseMatrix>> {
    let mut t = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random::<f64>() < 0.5 {
                t.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    Ok(Arc::new(SparseMatrix::from_triplets(rows, cols, t)?))
}

fn gated_fusion_config() -> FusionConfig {
    FusionConfig {
        d_visual: 5,
        d_text: 4,
        d_audio: 3,
        d_model: 4,
        heads: 2,
        layers: 2,
    }
}

fn random_raw(config: &FusionConfig, rng: &mut impl Rng) -> RawModalFeatures {
    RawModalFeatures {
        visual: random_tensor(&[config.d_visual], rng).into_data(),
        text: random_tensor(&[config.d_text], rng).into_data(),
        audio: random_tensor(&[config.d_audio], rng).into_data(),
    }
}

struct GraphCase {
    model: TgnnModel,
    graph: crate::graph::InteractionGraph,
    content: Tensor,
    node: usize,
    query_time: f64,
}

fn graph_case(rng: &mut ChaCha8Rng) -> Result<(ParamStore, GraphCase)> {
    let (n_users, n_videos, content_dim) = (3, 4, 5);
    let config = GraphConfig {
        base_dim: 4,
        widths: vec![3, 3],
        windows: 3,
        window_len: 2.0,
        content_features: true,
        ..GraphConfig::default()
    };
    let horizon = config.windows as f64 * config.window_len;
    let mut events = Vec::new();
    for _ in 0..12 {
        let (u, v, t) = (rng.random_range(0..n_users), rng.random_range(0..n_videos), rng.random_range(0.0..horizon));
        events.push(if rng.random::<f64>() < 0.6 {
            InteractionEvent::watch(u, v, t, rng.random_range(0.1..1.0))
        } else {
            InteractionEvent::engage(u, v, Behavior::Like, t)
        });
    }
    events.push(InteractionEvent::follow(0, 1, rng.random_range(0.0..horizon)));
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let graph = build_graph(&events, n_users, n_videos)?;
    let mut store = ParamStore::new();
    let model = TgnnModel::new(&config, n_users, n_videos, content_dim, &mut store, "tgnn", rng)?;
    let content = random_tensor(&[n_videos, content_dim], rng);
    let node = rng.random_range(0..n_users + n_videos);
    Ok((
        store,
        GraphCase {
            model,
            graph,
            content,
            node,
            query_time: horizon,
        },
    ))
}

/// Runs the full suite with the given seed.
pub fn run(seed: u64) -> Result<GradReport> {
    let mut g = GradCheck::new(seed);

    g.inputs("matmul", &[&[3, 4], &[4, 2]], |_, x| x[0].matmul(x[1]))?;
    g.inputs("add", &[&[2, 3], &[2, 3]], |_, x| x[0].add(x[1]))?;
    g.inputs("sub", &[&[2, 3], &[2, 3]], |_, x| x[0].sub(x[1]))?;
    g.inputs("mul", &[&[2, 3], &[2, 3]], |_, x| x[0].mul(x[1]))?;
    g.inputs("mul_broadcast", &[&[2, 3], &[1]], |_, x| x[0].mul(x[1]))?;
    g.inputs("scale", &[&[2, 3]], |_, x| x[0].scale(-1.7))?;
    g.inputs("add_bias", &[&[3, 4], &[4]], |_, x| x[0].add_bias(x[1]))?;
    g.inputs("sigmoid", &[&[2, 3]], |_, x| x[0].sigmoid())?;
    g.inputs("tanh", &[&[2, 3]], |_, x| x[0].tanh())?;
    g.inputs("relu", &[&[2, 3]], |_, x| x[0].relu())?;
    g.inputs("softplus", &[&[2, 3]], |_, x| x[0].softplus())?;
    g.inputs("softmax_rows", &[&[3, 4]], |_, x| x[0].softmax())?;
    g.inputs("softmax_vector", &[&[5]], |_, x| x[0].softmax())?;
    g.inputs("concat_rows", &[&[2, 3], &[1, 3]], |_, x| Var::concat(&[x[0], x[1]], 0))?;
    g.inputs("concat_cols", &[&[2, 3], &[2, 2]], |_, x| Var::concat(&[x[0], x[1]], 1))?;
    g.inputs("mean_axis0", &[&[3, 4]], |_, x| x[0].mean(0))?;
    g.inputs("mean_axis1", &[&[3, 4]], |_, x| x[0].mean(1))?;
    g.inputs("sum", &[&[3, 4]], |_, x| x[0].sum())?;
    g.inputs("layer_norm", &[&[3, 5], &[5], &[5]], |_, x| x[0].layer_norm(x[1], x[2]))?;
    g.inputs("transpose", &[&[2, 3]], |_, x| x[0].transpose())?;
    g.inputs("reshape", &[&[2, 3]], |_, x| x[0].reshape(&[3, 2]))?;
    g.inputs("slice_cols", &[&[3, 5]], |_, x| x[0].slice_cols(1, 4))?;
    g.inputs("gather_rows", &[&[4, 3]], |_, x| x[0].gather_rows(&[2, 0, 2]))?;
    let sparse = random_sparse(4, 5, &mut ChaCha8Rng::seed_from_u64(seed))?;
    g.inputs("spmm", &[&[5, 3]], |_, x| x[0].spmm(&sparse))?;
    g.inputs("pick", &[&[2, 3]], |_, x| x[0].pick(4))?;
    g.inputs("custom_cube", &[&[2, 3]], |_, x| cube(x[0]))?;

    g.inputs("scaled_attention", &[&[3, 4], &[3, 4], &[3, 2]], |_, x| {
        Ok(scaled_attention(x[0], x[1], x[2])?.0)
    })?;
    g.inputs("modality_gates", &[&[3, 4], &[12, 12], &[12]], |_, x| modality_gates(x[0], x[1], x[2]))?;
    g.inputs("gated_fuse", &[&[3, 4], &[3, 4]], |_, x| {
        let gates = x[0].transpose()?.softmax()?.transpose()?;
        gated_fuse(gates, x[1])
    })?;
    g.inputs("tgcn_layer", &[&[5, 3], &[3, 2], &[2]], |_, x| tgcn_layer(&fixed_propagation(), x[0], x[1], x[2]))?;
    g.inputs("temporal_attention", &[&[4, 3], &[3, 1], &[3, 3], &[3]], |_, x| {
        temporal_attention(x[0], x[1], x[2], x[3])
    })?;
    g.inputs("aggregate", &[&[4], &[4, 3]], |_, x| aggregate(x[0].softmax()?, x[1]))?;
    let targets = [0.5, -1.0, 2.0, 0.0];
    g.inputs("td_loss", &[&[4]], |_, x| td_loss(x[0], &targets))?;
    let labels = [1.0, 0.0, 0.0, 1.0];
    g.inputs("bce_with_logits", &[&[4]], |_, x| bce_with_logits(x[0], &labels))?;

    g.params(
        "multi_head",
        |rng| {
            let mut store = ParamStore::new();
            let model = FusionModel::new(&gated_fusion_config(), FusionMode::Gated, &mut store, "f", rng)?;
            let tokens = random_tensor(&[3, 4], rng);
            Ok((store, (model, tokens)))
        },
        |tape, bound, (model, tokens)| {
            let x = tape.constant(tokens.clone())?;
            Ok(multi_head(x, &model.layers()[0], bound, model.config().heads)?.0)
        },
    )?;
    g.params(
        "fusion_forward_gated",
        |rng| {
            let config = gated_fusion_config();
            let mut store = ParamStore::new();
            let model = FusionModel::new(&config, FusionMode::Gated, &mut store, "f", rng)?;
            Ok((store, (model, random_raw(&config, rng))))
        },
        |tape, bound, (model, raw)| Ok(model.forward(bound, raw, tape, &mut Dropout::disabled())?.0),
    )?;
    g.params(
        "fusion_forward_concat",
        |rng| {
            let config = gated_fusion_config();
            let mut store = ParamStore::new();
            let model = FusionModel::new(&config, FusionMode::Concat, &mut store, "f", rng)?;
            Ok((store, (model, random_raw(&config, rng))))
        },
        |tape, bound, (model, raw)| Ok(model.forward(bound, raw, tape, &mut Dropout::disabled())?.0),
    )?;
    g.params("tgnn_forward", graph_case, |tape, bound, c| {
        tgnn_forward(&c.model, bound, tape, &c.graph, Some(&c.content), c.node, c.query_time)
    })?;
    g.params(
        "q_values_concat",
        |rng| {
            let mut store = ParamStore::new();
            let f = store.add("f", Tensor::zeros(vec![3, 4]));
            let h = store.add("h", Tensor::zeros(vec![3, 3]));
            let net = QNetwork::new(7, &[6, 5], 1, &mut store, "q", rng)?;
            Ok((store, (net, f, h)))
        },
        |_, bound, (net, f, h)| {
            let x = Var::concat(&[bound[*f], bound[*h]], 1)?;
            net.forward(bound, x, &mut Dropout::disabled())
        },
    )?;
    g.params(
        "td_loss_over_q",
        |rng| {
            let mut store = ParamStore::new();
            let net = QNetwork::new(4, &[5], 3, &mut store, "q", rng)?;
            let states = random_tensor(&[4, 4], rng);
            let targets: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            Ok((store, (net, states, targets)))
        },
        |tape, bound, (net, states, targets)| {
            let q = net.forward(bound, tape.constant(states.clone())?, &mut Dropout::disabled())?;
            let taken = q.reshape(&[12, 1])?.gather_rows(&[0, 4, 8, 10])?.reshape(&[4])?;
            td_loss(taken, targets)
        },
    )?;
    Ok(g.finish())
}

/// Fixed 5-node propagation with an isolated node.
fn fixed_propagation() -> Arc<SparseMatrix> {
    let t = vec![(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.4), (2, 1, 0.4), (3, 3, 0.7), (2, 0, 0.2)];
    Arc::new(SparseMatrix::from_triplets(5, 5, t).expect("entries in range"))
}

/// The suite at its fixed default seed.
pub fn gradcheck() -> Result<GradReport> {
    run(0)
}
