//! AdamW with decoupled weight decay.

use crate::error::{NumericsError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

/// Accumulated gradients, one optional buffer per parameter.
#[derive(Clone, Debug, Default)]
pub struct GradStore {
    grads: Vec<Option<Vec<f32>>>,
}

impl GradStore {
    pub fn new(num_params: usize) -> Self {
        GradStore { grads: vec![None; num_params] }
    }

    pub fn accumulate<T: Real>(&mut self, id: ParamId, grad: &[T]) {
        if id.0 >= self.grads.len() {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g.as_f64() as f32;
                }
            }
            slot @ None => *slot = Some(grad.iter().map(|g| g.as_f64() as f32).collect()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().flat_map(|g| g.iter()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f32) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.05, clip_norm: None }
    }
}

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct OptimState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        OptimState {
            m: params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect(),
            step: 0,
        }
    }
}

/// One AdamW update. Parameters without a gradient still receive weight decay.
pub fn adamw_step(
    params: &mut ParamStore<f32>,
    grads: &GradStore,
    state: &mut OptimState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    adamw_step_masked(params, grads, state, lr, cfg, |_| true)
}

/// AdamW update restricted to parameters where `active` holds; the rest,
/// including their moments, are left untouched.
pub fn adamw_step_masked(
    params: &mut ParamStore<f32>,
    grads: &GradStore,
    state: &mut OptimState,
    lr: f64,
    cfg: &AdamWConfig,
    active: impl Fn(ParamId) -> bool,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(NumericsError::InvalidLearningRate(lr));
    }
    for id in params.ids() {
        if let Some(g) = grads.get(id) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
    }
    if state.m.len() != params.len() {
        *state = OptimState::new(params);
    }
    let clip = match cfg.clip_norm {
        Some(max) => {
            let norm = grads.global_norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for id in params.ids().filter(|&id| active(id)) {
        let grad = grads.get(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            let mut w = p[i] as f64 * decay;
            let g = grad.map_or(0.0, |g| g[i] as f64 * clip);
            let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            p[i] = w as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(p: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::new(vec![1], vec![p]).unwrap());
        s
    }

    #[test]
    fn masked_step_leaves_inactive_untouched() {
        let mut p = ParamStore::new();
        let a = p.insert("a", Tensor::full(&[2], 1.0f32));
        let b = p.insert("b", Tensor::full(&[2], 1.0f32));
        let mut g = GradStore::new(2);
        g.accumulate(a, &[0.5f32, -0.5]);
        let mut st = OptimState::new(&p);
        adamw_step_masked(&mut p, &g, &mut st, 1e-2, &AdamWConfig::default(), |id| id == a).unwrap();
        assert_eq!(p.get(b).data(), &[1.0, 1.0]);
        assert_ne!(p.get(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut s = single(0.7);
        let mut g = GradStore::new(1);
        g.accumulate(ParamId(0), &[0.0f32]);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        for _ in 0..5 {
            adamw_step(&mut s, &g, &mut st, 0.1, &cfg).unwrap();
        }
        assert_eq!(s.get(ParamId(0)).data()[0], 0.7);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = single(1.0);
        let mut g = GradStore::new(1);
        g.accumulate(ParamId(0), &[1.0f32]);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut s, &g, &mut st, 0.1, &cfg).unwrap();
        assert!((s.get(ParamId(0)).data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_only_path() {
        let mut s = single(2.0);
        let g = GradStore::new(1);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig { weight_decay: 0.05, ..Default::default() };
        adamw_step(&mut s, &g, &mut st, 0.1, &cfg).unwrap();
        assert!((s.get(ParamId(0)).data()[0] - 2.0 * (1.0 - 0.005)).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = single(1.0);
        let mut st = OptimState::new(&s);
        let mut g = GradStore::new(1);
        g.accumulate(ParamId(0), &[f32::NAN]);
        let err = adamw_step(&mut s, &g, &mut st, 0.1, &AdamWConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`p`"));
        let g = GradStore::new(1);
        assert!(adamw_step(&mut s, &g, &mut st, 0.0, &AdamWConfig::default()).is_err());
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let mut s = single(0.0);
        let mut g = GradStore::new(1);
        g.accumulate(ParamId(0), &[100.0f32]);
        assert!((g.global_norm() - 100.0).abs() < 1e-9);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig { weight_decay: 0.0, clip_norm: Some(1.0), ..Default::default() };
        adamw_step(&mut s, &g, &mut st, 0.1, &cfg).unwrap();
        assert!((st.m[0][0] - 0.1).abs() < 1e-6);
    }
}
