use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    if let Some((p, g)) = params.iter().zip(grads).find(|(p, g)| p.shape() != g.shape()) {
        return Err(Error::dim(
            "adam_step",
            format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
        ));
    }
    if !(lr > 0.0) {
        return Err(Error::Contract(format!("learning rate must be positive, got {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `lr0` down to `lr_min` over `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr0: f64, lr_min: f64, total_steps: u64) -> Self {
        CosineSchedule {
            lr0,
            lr_min,
            total_steps,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        cosine_lr(self, step)
    }
}

/// Steps beyond the horizon are clamped to it.
pub fn cosine_lr(schedule: &CosineSchedule, step: u64) -> f64 {
    if schedule.total_steps == 0 {
        return schedule.lr_min;
    }
    let s = step.min(schedule.total_steps) as f64 / schedule.total_steps as f64;
    schedule.lr_min + 0.5 * (schedule.lr0 - schedule.lr_min) * (1.0 + (PI * s).cos())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let grads = vec![Tensor::zeros(vec![2])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε) ≈ lr
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state, 0.001).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
        assert!((params[0].data()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut params = vec![Tensor::zeros(vec![2])];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &[Tensor::zeros(vec![3])], &mut state, 0.1);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn cosine_examples() {
        let s = CosineSchedule::new(0.001, 1e-5, 100);
        assert_eq!(s.lr(0), 0.001);
        assert!((s.lr(100) - 1e-5).abs() < 1e-18);
        assert!((s.lr(50) - (0.001 + 1e-5) / 2.0).abs() < 1e-15);
        assert_eq!(s.lr(1000), s.lr(100));
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0])];
        let norm = clip_gradients(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((g[0].data()[1] - 0.8).abs() < 1e-15);

        let mut small = vec![Tensor::vector(vec![0.1, 0.2])];
        clip_gradients(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1, 0.2]);

        let mut zero = vec![Tensor::zeros(vec![3])];
        clip_gradients(&mut zero, 1.0);
        assert_eq!(zero[0].data(), &[0.0; 3]);
    }
}
