use super::{loss_simple_with, Sample};
use crate::diffusion::NoiseSchedule;
use crate::error::Result;
use crate::model::{Bound, ModelConfig, SabrDit};
use crate::tensor::gradcheck::{check, GradReport};
use crate::tensor::{RngStream, Tensor};

/// Finite-difference check of the full `L_simple` gradient with respect to
/// every parameter tensor of a randomly perturbed f64 model, on a batch of
/// two random sequences of `frames` frames and `tokens` conditioning tokens.
pub fn loss_gradcheck(
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    frames: usize,
    tokens: usize,
    max_coords: usize,
    seed: u64,
) -> Result<GradReport> {
    let base = RngStream::new(seed);
    let mut model = SabrDit::<f64>::new(cfg.clone(), &mut base.split("init"))?;
    let mut rng = base.split("perturb");
    for t in model.params_mut().tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.05 * rng.normal());
    }
    let batch: Vec<Sample<f64>> = (0..2)
        .map(|_| Sample {
            x0: rng.sample_normal(&[frames, cfg.motion_dim()]),
            cond: rng.sample_normal(&[tokens, cfg.cond_width]),
        })
        .collect();
    let params: Vec<Tensor<f64>> = model.params().tensors().to_vec();
    let draws = base.split("loss");
    check(
        &params,
        |g, vars| {
            let p = Bound {
                vars: vars.to_vec(),
            };
            let (root, _, _) =
                loss_simple_with(g, &batch, sched, &mut draws.clone(), |g, _, x, t, c| {
                    model.forward(g, &p, x, t as f64, c, None)
                })?;
            Ok(root)
        },
        max_coords,
        &mut base.split("coords"),
    )
}
