use super::TrainConfig;
use crate::error::{Result, SabrError};
use crate::tensor::{Real, Tensor};

/// Adam moments and the number of updates applied so far.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T: Real = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

fn check_shapes<T: Real>(what: &str, a: &[Tensor<T>], b: &[Tensor<T>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(SabrError::Contract(format!(
            "{what}: tensor lists differ in shape"
        )));
    }
    Ok(())
}

/// Adam with bias correction and decoupled weight decay:
/// `w ← w − lr·(m̂/(√v̂ + ε) + λ·w)`.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    check_shapes("adamw params/grads", params, grads)?;
    check_shapes("adamw params/moments", params, &state.m)?;
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let (lr, wd, eps) = (cfg.learning_rate, cfg.weight_decay, cfg.adam_eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, &gi), (mi, vi)) in it {
            let gi = gi.as_f64();
            let mn = b1 * mi.as_f64() + (1.0 - b1) * gi;
            let vn = b2 * vi.as_f64() + (1.0 - b2) * gi * gi;
            *mi = T::of(mn);
            *vi = T::of(vn);
            let x = w.as_f64();
            let update = (mn / c1) / ((vn / c2).sqrt() + eps);
            *w = T::of(x - lr * update - lr * wd * x);
        }
    }
    Ok(())
}

/// Shadow weights `s ← d·s + (1−d)·w`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState<T: Real = f32> {
    pub decay: f64,
    pub shadow: Vec<Tensor<T>>,
}

impl<T: Real> EmaState<T> {
    pub fn new(params: &[Tensor<T>], decay: f64) -> Self {
        EmaState {
            decay,
            shadow: params.to_vec(),
        }
    }

    pub fn update(&mut self, params: &[Tensor<T>]) -> Result<()> {
        check_shapes("ema", &self.shadow, params)?;
        let d = self.decay;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            for (si, pi) in s.data_mut().iter_mut().zip(p.data()) {
                *si = T::of(d * si.as_f64() + (1.0 - d) * pi.as_f64());
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}
