use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Result, SabrError};
use crate::model::SabrDit;
use crate::tensor::{Graph, Real, RngStream, Tensor, Var};

/// One training sequence: normalized motion [F×D] and its conditioning
/// tokens [M×d_cond].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Real = f32> {
    pub x0: Tensor<T>,
    pub cond: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct LossOutput<T: Real = f32> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
    pub steps: Vec<usize>,
}

/// Builds `L_simple` on `g` for any predictor: draws `t ~ U{1..T}` and `ε`
/// per sequence, forms `x^t`, and returns the mean squared error between
/// `x0` and the prediction over every element of the batch.
pub fn loss_simple_with<T, P>(
    g: &mut Graph<T>,
    batch: &[Sample<T>],
    sched: &NoiseSchedule,
    rng: &mut RngStream,
    mut predict: P,
) -> Result<(Var, Vec<usize>, Vec<Var>)>
where
    T: Real,
    P: FnMut(&mut Graph<T>, usize, Var, usize, Var) -> Result<Var>,
{
    if batch.is_empty() {
        return Err(SabrError::Contract("empty batch".into()));
    }
    let total: usize = batch.iter().map(|s| s.x0.len()).sum();
    let mut loss: Option<Var> = None;
    let mut steps = Vec::with_capacity(batch.len());
    let mut preds = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let t = rng.int_inclusive(1, sched.steps());
        let eps = rng.sample_normal::<f64>(s.x0.shape());
        let xt = q_sample(&s.x0.cast(), t, &eps, sched)?;
        let xv = g.constant(xt.cast());
        let cv = g.constant(s.cond.clone());
        let target = g.constant(s.x0.clone());
        let pred = predict(g, i, xv, t, cv)?;
        let term = g.mse(pred, target)?;
        let term = g.scale(term, T::of(s.x0.len() as f64 / total as f64));
        loss = Some(match loss {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
        steps.push(t);
        preds.push(pred);
    }
    Ok((loss.expect("nonempty batch"), steps, preds))
}

/// `L_simple` for `model` with its gradients.
pub fn loss_simple<T: Real>(
    model: &SabrDit<T>,
    batch: &[Sample<T>],
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<LossOutput<T>> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let (root, steps, preds) = loss_simple_with(&mut g, batch, sched, rng, |g, _, x, t, c| {
        model.forward(g, &p, x, t as f64, c, None)
    })?;
    let loss = g.value(root).data()[0].as_f64();
    if !loss.is_finite() {
        let peak = preds
            .iter()
            .flat_map(|v| g.value(*v).data().iter().map(|x| x.as_f64().abs()))
            .fold(0.0, f64::max);
        return Err(SabrError::Numeric(format!(
            "non-finite loss {loss} at steps {steps:?}; max |prediction| {peak:e}"
        )));
    }
    g.backward(root)?;
    let grads = p
        .vars
        .iter()
        .map(|v| g.grad(*v).expect("trainable leaf"))
        .collect();
    Ok(LossOutput { loss, grads, steps })
}
