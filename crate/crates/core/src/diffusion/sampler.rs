use super::schedule::{NoiseSchedule, RespacedSchedule};
use crate::error::{Result, SabrError};
use crate::tensor::{RngStream, Tensor};

/// Bound on the predicted clean sample, in normalized units.
pub const X0_CLAMP: f64 = 4.0;

/// `x^t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(
    x0: &Tensor<f64>,
    t: usize,
    eps: &Tensor<f64>,
    sched: &NoiseSchedule,
) -> Result<Tensor<f64>> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(SabrError::Dimension(format!(
            "x0 {:?} and noise {:?} differ in shape",
            x0.shape(),
            eps.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Tensor::new(
        x0.shape(),
        x0.data()
            .iter()
            .zip(eps.data())
            .map(|(x, e)| a * x + b * e)
            .collect(),
    )
}

/// Coefficients of `q(x^{t−1} | x^t, x0)`: mean is `c0·x0 + ct·x^t`, the
/// third value is the variance.
pub fn posterior_coefficients(t: usize, sched: &NoiseSchedule) -> Result<(f64, f64, f64)> {
    sched.check_step(t)?;
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
    let beta = sched.beta(t);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let var = beta * (1.0 - ab_prev) / (1.0 - ab);
    Ok((c0, ct, var))
}

/// One reverse step with the x0-parameterized posterior. At `t = 1` the
/// clamped prediction is returned without noise.
pub fn posterior_step(
    x_t: &Tensor<f64>,
    x0_hat: &Tensor<f64>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<Tensor<f64>> {
    let (c0, ct, var) = posterior_coefficients(t, sched)?;
    if x_t.shape() != x0_hat.shape() {
        return Err(SabrError::Contract(format!(
            "prediction {:?} does not match state {:?}",
            x0_hat.shape(),
            x_t.shape()
        )));
    }
    let clamp = |v: f64| v.clamp(-X0_CLAMP, X0_CLAMP);
    if t == 1 {
        return Tensor::new(
            x_t.shape(),
            x0_hat.data().iter().map(|v| clamp(*v)).collect(),
        );
    }
    let sd = var.sqrt();
    let out = x_t
        .data()
        .iter()
        .zip(x0_hat.data())
        .map(|(xt, x0)| c0 * clamp(*x0) + ct * xt + sd * rng.normal())
        .collect();
    Tensor::new(x_t.shape(), out)
}

/// Ancestral sampling over a respaced chain. `model(x, t)` receives the
/// original (un-respaced) step index and returns a clean-sample prediction.
pub fn ddpm_sample<M>(
    model: &mut M,
    shape: &[usize],
    chain: &RespacedSchedule,
    rng: &mut RngStream,
) -> Result<Tensor<f64>>
where
    M: FnMut(&Tensor<f64>, usize) -> Result<Tensor<f64>>,
{
    let mut x: Tensor<f64> = rng.sample_normal(shape);
    let sched = chain.schedule();
    for (i, &orig) in chain.selected().iter().enumerate().rev() {
        let x0_hat = model(&x, orig)?;
        if x0_hat.shape() != shape {
            return Err(SabrError::Contract(format!(
                "model returned {:?}, expected {shape:?}",
                x0_hat.shape()
            )));
        }
        x = posterior_step(&x, &x0_hat, i + 1, sched, rng)?;
    }
    Ok(x)
}

/// Sinusoidal embedding: the first half holds `sin(t·ω_i)`, the second half
/// `cos(t·ω_i)`, with `ω_i = exp(−ln(10000)·i/(dim/2))`.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(SabrError::Config(format!(
            "embedding dimension {dim} must be even and positive"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t * w).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    Ok(out)
}
