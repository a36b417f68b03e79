use serde::{Deserialize, Serialize};

use super::{GruModel, GruParams};

/// Adam moments and hyperparameters; weight decay is decoupled and applied
/// as `w *= 1 - lr * wd` before the moment update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &GruParams, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }
}

pub fn adam_step(model: &mut GruModel, grads: &GruParams, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let tensors = model.params.tensors_mut();
    assert_eq!(tensors.len(), state.m.len(), "optimizer state does not match the model");
    for (((w, g), m), v) in tensors.into_iter().zip(grads.tensors()).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..w.len() {
            w[i] *= decay;
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }
    }
    model.touch();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::GruDims;

    fn scalar_model(w: f64) -> GruModel {
        let dims = GruDims { d_x: 1, d_h: 1, layers: 1, t_e: 1, t_d: 1, d_out: 1 };
        let mut m = GruModel::zeros(dims).unwrap();
        m.params.head_b[0] = w;
        m
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let dims = GruDims { d_x: 2, d_h: 3, layers: 2, t_e: 2, t_d: 1, d_out: 2 };
        let mut m = GruModel::init(dims, 1).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m.params, 1e-3, 0.0);
        let g = GruParams::zeros(&dims);
        for _ in 0..5 {
            adam_step(&mut m, &g, &mut st);
        }
        assert_eq!(m, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let dims = GruDims { d_x: 2, d_h: 3, layers: 1, t_e: 2, t_d: 1, d_out: 2 };
        let mut m = GruModel::init(dims, 2).unwrap();
        let before = m.clone();
        let mut g = GruParams::zeros(&dims);
        for (i, t) in g.tensors_mut().into_iter().enumerate() {
            t.iter_mut().enumerate().for_each(|(j, v)| *v = if (i + j) % 2 == 0 { 0.3 } else { -2.0 });
        }
        let mut st = AdamState::new(&m.params, 1e-3, 0.0);
        adam_step(&mut m, &g, &mut st);
        for ((a, b), gt) in m.params.tensors().iter().zip(before.params.tensors()).zip(g.tensors()) {
            for ((x, y), gv) in a.iter().zip(b).zip(gt) {
                let delta = x - y;
                assert!((delta + 1e-3 * gv.signum()).abs() < 1e-8, "{delta}");
            }
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut m = scalar_model(1.0);
        let mut st = AdamState::new(&m.params, 0.01, 1e-5);
        let mut prev = 1.0f64;
        for _ in 0..100 {
            let w = m.params.head_b[0];
            let mut g = GruParams::zeros(&m.dims);
            g.head_b[0] = 2.0 * w;
            adam_step(&mut m, &g, &mut st);
            let now = m.params.head_b[0];
            assert!(now.abs() < prev.abs());
            prev = now;
        }
        assert!(prev.abs() < 0.5, "{prev}");
    }

    #[test]
    fn decay_is_applied_before_the_update() {
        let mut m = scalar_model(2.0);
        let mut st = AdamState::new(&m.params, 0.1, 0.5);
        let g = GruParams::zeros(&m.dims);
        adam_step(&mut m, &g, &mut st);
        assert!((m.params.head_b[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}
