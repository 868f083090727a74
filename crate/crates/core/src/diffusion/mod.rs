//! Forward noising process, x0-parameterized reverse steps, schedule
//! respacing and the ancestral sampler.

mod sampler;
mod schedule;

pub use sampler::{
    ddpm_sample, posterior_coefficients, posterior_step, q_sample, timestep_embedding, X0_CLAMP,
};
pub use schedule::{linear_schedule, respace, NoiseSchedule, RespacedSchedule, ScheduleConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{RngStream, Tensor};

    // Double-double arithmetic built from error-free transforms.
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn dd_mul(x: (f64, f64), y: (f64, f64)) -> (f64, f64) {
        let p = x.0 * y.0;
        let e = x.0.mul_add(y.0, -p) + x.0 * y.1 + x.1 * y.0;
        let s = p + e;
        (s, e - (s - p))
    }

    #[test]
    fn default_schedule_endpoints_and_extended_precision_product() {
        let s = linear_schedule(1000, 1e-4, 2e-2).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 2e-2);
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1000) < 1e-4);

        let mut acc = (1.0, 0.0);
        for t in 1..=1000 {
            acc = dd_mul(acc, two_sum(1.0, -s.beta(t)));
        }
        let oracle = acc.0 + acc.1;
        assert!(
            ((s.alpha_bar(1000) - oracle) / oracle).abs() < 1e-10,
            "{} vs {oracle}",
            s.alpha_bar(1000)
        );
        assert!((oracle - 4.0e-5).abs() < 1e-6);
    }

    #[test]
    fn two_step_schedule() {
        let s = linear_schedule(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert!(linear_schedule(1, 0.1, 0.2).is_err());
        assert!(linear_schedule(10, 0.2, 0.1).is_err());
    }

    #[test]
    fn respacing_identity_one_jump_and_preservation() {
        let s = linear_schedule(1000, 1e-4, 2e-2).unwrap();
        let full = respace(&s, 1000).unwrap();
        assert_eq!(full.effective_betas(), s.betas());

        let one = respace(&s, 1).unwrap();
        assert_eq!(one.selected(), &[1000]);
        assert_eq!(one.effective_betas()[0], 1.0 - s.alpha_bar(1000));

        let r = respace(&s, 250).unwrap();
        assert_eq!(r.selected().len(), 250);
        assert!(r.selected().windows(2).all(|w| w[0] < w[1]));
        let mut ab = 1.0;
        for (i, &t) in r.selected().iter().enumerate() {
            ab *= 1.0 - r.effective_betas()[i];
            assert!((ab - s.alpha_bar(t)).abs() < 1e-12);
        }
        assert!(respace(&s, 0).is_err());
    }

    #[test]
    fn q_sample_branches() {
        let s = linear_schedule(1000, 1e-4, 2e-2).unwrap();
        let x0 = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let zero = Tensor::zeros(&[3]);
        let e = Tensor::new(&[3], vec![0.3, 0.1, -0.7]).unwrap();
        let t = 400;
        let a = q_sample(&x0, t, &zero, &s).unwrap();
        let b = q_sample(&zero, t, &e, &s).unwrap();
        for i in 0..3 {
            assert_eq!(a.data()[i], s.alpha_bar(t).sqrt() * x0.data()[i]);
            assert_eq!(b.data()[i], (1.0 - s.alpha_bar(t)).sqrt() * e.data()[i]);
        }
        assert!(q_sample(&x0, 0, &e, &s).is_err());
        assert!(q_sample(&x0, 1001, &e, &s).is_err());
    }

    #[test]
    fn q_sample_moments() {
        let s = linear_schedule(1000, 1e-4, 2e-2).unwrap();
        let mut rng = RngStream::new(17);
        let x0 = Tensor::full(&[20_000], 0.8);
        for t in [100, 500, 1000] {
            let eps = rng.sample_normal(&[20_000]);
            let xt = q_sample(&x0, t, &eps, &s).unwrap();
            let n = xt.len() as f64;
            let m = xt.data().iter().sum::<f64>() / n;
            let v = xt.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            assert!((m - s.alpha_bar(t).sqrt() * 0.8).abs() < 0.02);
            assert!((v - (1.0 - s.alpha_bar(t))).abs() < 0.03);
        }
    }

    #[test]
    fn final_step_is_exact_and_coefficients_are_convex() {
        let s = linear_schedule(1000, 1e-4, 2e-2).unwrap();
        let mut rng = RngStream::new(2);
        let x = Tensor::new(&[2], vec![0.4, -1.1]).unwrap();
        let x0 = Tensor::new(&[2], vec![1.5, 2.5]).unwrap();
        assert_eq!(posterior_step(&x, &x0, 1, &s, &mut rng).unwrap(), x0);
        assert!(posterior_step(&x, &x0, 0, &s, &mut rng).is_err());
        for t in 1..=1000 {
            let (c0, ct, _) = posterior_coefficients(t, &s).unwrap();
            let ab_prev = s.alpha_bar(t - 1);
            let direct = (ab_prev.sqrt() * s.beta(t) + s.alpha(t).sqrt() * (1.0 - ab_prev))
                / (1.0 - s.alpha_bar(t));
            assert!((c0 + ct - direct).abs() < 1e-12);
            assert!(c0 + ct <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn two_step_conjugate_gaussian_oracle() {
        let s = linear_schedule(2, 0.1, 0.2).unwrap();
        let (x2, x0) = (0.7, -0.4);
        // x1 | x0 ~ N(√ᾱ1 x0, 1−ᾱ1); x2 | x1 ~ N(√α2 x1, β2)
        let (ab1, a2, b2) = (s.alpha_bar(1), s.alpha(2), s.beta(2));
        let prec = 1.0 / (1.0 - ab1) + a2 / b2;
        let var = 1.0 / prec;
        let mean = var * (ab1.sqrt() * x0 / (1.0 - ab1) + a2.sqrt() * x2 / b2);
        let (c0, ct, v) = posterior_coefficients(2, &s).unwrap();
        assert!((c0 * x0 + ct * x2 - mean).abs() < 1e-12);
        assert!((v - var).abs() < 1e-12);
    }

    #[test]
    fn zero_predictor_collapses_and_sampling_is_deterministic() {
        let s = linear_schedule(1000, 1e-4, 2e-2).unwrap();
        let chain = respace(&s, 50).unwrap();
        let mut zero = |x: &Tensor<f64>, _t: usize| Ok(Tensor::zeros(x.shape()));
        let out = ddpm_sample(&mut zero, &[4, 3], &chain, &mut RngStream::new(1)).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));

        let mut half = |x: &Tensor<f64>, t: usize| {
            Tensor::new(
                x.shape(),
                x.data().iter().map(|v| 0.5 * v + t as f64 * 1e-3).collect(),
            )
        };
        let a = ddpm_sample(&mut half, &[4, 3], &chain, &mut RngStream::new(9)).unwrap();
        let b = ddpm_sample(&mut half, &[4, 3], &chain, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);

        let mut bad = |_x: &Tensor<f64>, _t: usize| Ok(Tensor::zeros(&[2]));
        assert!(ddpm_sample(&mut bad, &[4, 3], &chain, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn timestep_embedding_properties() {
        let e = timestep_embedding(0.0, 16).unwrap();
        assert!(e[..8].iter().all(|v| *v == 0.0));
        assert!(e[8..].iter().all(|v| *v == 1.0));
        assert!(timestep_embedding(1.0, 15).is_err());
        let embs: Vec<Vec<f64>> = (1..=1000)
            .map(|t| timestep_embedding(t as f64, 64).unwrap())
            .collect();
        let mut min_d = f64::INFINITY;
        for i in 0..embs.len() {
            let n: f64 = embs[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 8.0 + 1e-12);
            for j in i + 1..embs.len() {
                let d: f64 = embs[i]
                    .iter()
                    .zip(&embs[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                min_d = min_d.min(d);
            }
        }
        assert!(min_d > 0.0);
    }
}
