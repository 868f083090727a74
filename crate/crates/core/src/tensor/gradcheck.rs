//! Central finite-difference gradient checker (f64 only).

use super::{Graph, RngStream, Tensor, Var};
use crate::error::Result;

/// Step used by the finite-difference suites.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor so gradients that are exactly zero on both sides do not
/// divide by zero.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords_checked: usize,
}

impl GradReport {
    pub fn merge(&mut self, other: &GradReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.coords_checked += other.coords_checked;
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the taped gradient of the scalar `f(inputs)` with central
/// differences. At most `max_coords` coordinates per input are probed,
/// chosen by `rng` when an input is larger than that.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    f: F,
    max_coords: usize,
    rng: &mut RngStream,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;

    let mut report = GradReport::default();
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[i]).expect("param leaf");
        let n = input.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords)
                .map(|_| (rng.next_u64() % n as u64) as usize)
                .collect()
        };
        for c in coords {
            let x0 = input.data()[c];
            probe[i].data_mut()[c] = x0 + FD_STEP;
            let fp = eval(&probe)?;
            probe[i].data_mut()[c] = x0 - FD_STEP;
            let fm = eval(&probe)?;
            probe[i].data_mut()[c] = x0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic.data()[c];
            report.max_rel_err = report.max_rel_err.max(rel_err(a, numeric));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.coords_checked += 1;
        }
    }
    Ok(report)
}

/// Gradient suites over every differentiable primitive, on random inputs.
/// Returns `(name, report)` pairs.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradReport)>> {
    let mut rng = RngStream::new(seed).split("gradcheck");
    let mut r = |shape: &[usize]| -> Tensor<f64> { rng.sample_normal(shape) };
    let a23 = r(&[2, 3]);
    let b34 = r(&[3, 4]);
    let x5 = r(&[5]);
    let x35 = r(&[3, 5]);
    let y35 = r(&[3, 5]);
    let w = r(&[5]);
    let bb = r(&[5]);
    let q = r(&[2, 3, 4]);
    let k = r(&[2, 5, 4]);
    let kn = r(&[2, 4, 5]);
    let lw = r(&[5, 3]);
    let lb = r(&[3]);
    let t234 = r(&[2, 3, 4]);
    let m4 = r(&[3, 4]);
    let weights = r(&[4, 3, 2]);

    let mut out = Vec::new();
    let mut probe_rng = RngStream::new(seed).split("gradcheck-coords");
    let mut run = |name: &'static str,
                   ins: Vec<Tensor<f64>>,
                   f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>|
     -> Result<()> {
        let rep = check(&ins, f, 64, &mut probe_rng)?;
        out.push((name, rep));
        Ok(())
    };

    // Weighted sums make every output element contribute a distinct factor.
    fn wsum(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
        let shape = g.shape(v).to_vec();
        let mut rr = RngStream::new(seed);
        let w = g.constant(rr.sample_normal(&shape));
        let m = g.mul(v, w)?;
        Ok(g.sum(m))
    }

    run("matmul", vec![a23.clone(), b34.clone()], &|g, v| {
        let c = g.matmul(v[0], v[1])?;
        wsum(g, c, 1)
    })?;
    run("matmul_sum", vec![a23.clone(), b34.clone()], &|g, v| {
        let c = g.matmul(v[0], v[1])?;
        Ok(g.sum(c))
    })?;
    run("batch_matmul_nt", vec![q.clone(), k.clone()], &|g, v| {
        let c = g.batch_matmul(v[0], v[1], true)?;
        wsum(g, c, 2)
    })?;
    run("batch_matmul_nn", vec![q.clone(), kn.clone()], &|g, v| {
        let c = g.batch_matmul(v[0], v[1], false)?;
        wsum(g, c, 3)
    })?;
    run("linear", vec![x35.clone(), lw, lb], &|g, v| {
        let c = g.linear(v[0], v[1], Some(v[2]))?;
        wsum(g, c, 4)
    })?;
    run(
        "add_sub_mul_scale",
        vec![x35.clone(), y35.clone()],
        &|g, v| {
            let a = g.add(v[0], v[1])?;
            let m = g.mul(a, v[1])?;
            let s = g.sub(m, v[0])?;
            let s = g.scale(s, 0.7);
            let s = g.add_scalar(s, 0.3);
            wsum(g, s, 5)
        },
    )?;
    run("broadcast", vec![t234.clone(), m4.clone()], &|g, v| {
        let a = g.add_broadcast(v[0], v[1])?;
        let m = g.mul_broadcast(a, v[1])?;
        wsum(g, m, 6)
    })?;
    run("softmax", vec![x5.clone()], &|g, v| {
        let s = g.softmax(v[0])?;
        wsum(g, s, 7)
    })?;
    run("softmax_rows", vec![x35.clone()], &|g, v| {
        let s = g.softmax(v[0])?;
        wsum(g, s, 8)
    })?;
    run(
        "layer_norm",
        vec![x35.clone(), w.clone(), bb.clone()],
        &|g, v| {
            let y = g.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-5)?;
            wsum(g, y, 9)
        },
    )?;
    run("layer_norm_plain", vec![x35.clone()], &|g, v| {
        let y = g.layer_norm(v[0], None, None, 1e-5)?;
        wsum(g, y, 10)
    })?;
    run("gelu_silu", vec![x35.clone()], &|g, v| {
        let a = g.gelu(v[0]);
        let b = g.silu(v[0]);
        let c = g.add(a, b)?;
        wsum(g, c, 11)
    })?;
    run("mean_axes", vec![weights.clone()], &|g, v| {
        let m0 = g.mean(v[0], 0)?;
        let m1 = g.mean(m0, 1)?;
        wsum(g, m1, 12)
    })?;
    run("mse", vec![x35.clone(), y35.clone()], &|g, v| {
        g.mse(v[0], v[1])
    })?;
    run("concat_slice", vec![x35.clone(), y35.clone()], &|g, v| {
        let c = g.concat(&[v[0], v[1]], 1)?;
        let s = g.slice(c, 1, 3, 5)?;
        let c2 = g.concat(&[s, v[0]], 0)?;
        wsum(g, c2, 13)
    })?;
    run("reshape_permute", vec![t234], &|g, v| {
        let r = g.reshape(v[0], &[4, 3, 2])?;
        let p = g.permute(r, &[2, 0, 1])?;
        let t = g.reshape(p, &[8, 3])?;
        let tt = g.transpose(t)?;
        wsum(g, tt, 14)
    })?;
    Ok(out)
}
