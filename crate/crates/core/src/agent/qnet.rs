use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Bound, Dropout, ParamId, ParamStore, Tape, Tensor, Var};

/// Feed-forward Q-network: ReLU hidden layers and a linear output head.
#[derive(Clone, Debug)]
pub struct QNetwork {
    layers: Vec<(ParamId, ParamId)>,
    in_dim: usize,
    out_dim: usize,
}

impl QNetwork {
    /// Weights drawn from uniform(−1/√fan_in, 1/√fan_in), biases zero.
    pub fn new(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("Q-network widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = in_dim;
        for (l, &width) in hidden.iter().chain(std::iter::once(&out_dim)).enumerate() {
            let w = store.add_uniform(
                format!("{prefix}.layer{l}.weight"),
                &[fan_in, width],
                1.0 / (fan_in as f64).sqrt(),
                rng,
            );
            let b = store.add(format!("{prefix}.layer{l}.bias"), Tensor::zeros(vec![width]));
            layers.push((w, b));
            fan_in = width;
        }
        Ok(QNetwork { layers, in_dim, out_dim })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Rows of `x` (`B×in`) to Q-values (`B×out`). Dropout follows each
    /// hidden activation.
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, dropout: &mut Dropout) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::dim(
                "q_values",
                format!("state {shape:?}, network expects width {}", self.in_dim),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(bound[w])?.add_bias(bound[b])?;
            if l < last {
                h = dropout.apply(h.relu()?)?;
            }
        }
        Ok(h)
    }

    /// Q-values of one state under the parameters in `store`.
    pub fn q_values(&self, store: &ParamStore, state: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape)?;
        let x = tape.constant(Tensor::matrix(1, state.len(), state.to_vec())?)?;
        Ok(self.forward(&bound, x, &mut Dropout::disabled())?.data())
    }

    /// Q-values for many states at once, one row per state.
    pub fn q_values_batch(&self, store: &ParamStore, states: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape)?;
        let x = tape.constant(stack_rows(states)?)?;
        let q = self.forward(&bound, x, &mut Dropout::disabled())?.value();
        Ok((0..states.len()).map(|r| q.row(r).to_vec()).collect())
    }
}

pub(crate) fn stack_rows(rows: &[&[f64]]) -> Result<Tensor> {
    let width = rows.first().map_or(0, |r| r.len());
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::dim("stack", format!("row of width {} among width {width}", r.len())));
    }
    Tensor::matrix(rows.len(), width, rows.iter().flat_map(|r| r.iter().copied()).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// ε-greedy choice: argmax with probability 1−ε, otherwise a uniform action.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::Contract("select_action on an empty action set".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q.len()));
    }
    Ok(argmax(q).expect("nonempty"))
}

/// Linear ε decay from `start` to `end` over the first `decay_fraction` of
/// training, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.3,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        let horizon = self.decay_fraction * total_steps as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let frac = step as f64 / horizon;
        if frac >= 1.0 {
            return self.end;
        }
        self.start + (self.end - self.start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !(ok(self.start) && ok(self.end) && ok(self.decay_fraction)) {
            return Err(Error::Config("epsilon schedule values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
