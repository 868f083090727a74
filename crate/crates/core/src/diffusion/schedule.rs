use serde::{Deserialize, Serialize};

use crate::error::{Result, SabrError};

/// Per-step forward-process variances. Step indices are 1-based in every
/// public method; `alpha_bar(0)` is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Schedule parameters as they appear in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sample_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 2e-2,
            sample_steps: 250,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

/// `β_t = β_min + (t−1)/(T−1)·(β_max − β_min)`.
pub fn linear_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(SabrError::Config(format!(
            "schedule needs at least 2 steps, got {steps}"
        )));
    }
    if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
        return Err(SabrError::Config(format!(
            "need 0 < beta_min < beta_max < 1, got {beta_min} and {beta_max}"
        )));
    }
    let span = (steps - 1) as f64;
    let beta = (0..steps)
        .map(|i| {
            if i + 1 == steps {
                beta_max
            } else {
                beta_min + i as f64 / span * (beta_max - beta_min)
            }
        })
        .collect();
    NoiseSchedule::from_betas(beta)
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(SabrError::Config("betas must lie in (0, 1)".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(SabrError::Index(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// A strided subsequence of a schedule with effective betas
/// `β′_i = 1 − ᾱ_{S_i}/ᾱ_{S_{i−1}}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RespacedSchedule {
    selected: Vec<usize>,
    schedule: NoiseSchedule,
}

impl RespacedSchedule {
    /// Original step indices, strictly increasing.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn effective_betas(&self) -> &[f64] {
        self.schedule.betas()
    }

    /// The respaced chain as a schedule of its own, indexed `1..=n`. Its
    /// `ᾱ` values are copied from the source rather than re-multiplied.
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

pub fn respace(sched: &NoiseSchedule, n_steps: usize) -> Result<RespacedSchedule> {
    let t = sched.steps();
    if n_steps == 0 || n_steps > t {
        return Err(SabrError::Config(format!(
            "respacing to {n_steps} steps of a {t}-step schedule"
        )));
    }
    let selected: Vec<usize> = if n_steps == 1 {
        vec![t]
    } else {
        (0..n_steps)
            .map(|i| 1 + ((i * (t - 1)) as f64 / (n_steps - 1) as f64).round() as usize)
            .collect()
    };
    let mut beta = Vec::with_capacity(n_steps);
    let mut alpha = Vec::with_capacity(n_steps);
    let mut alpha_bar = Vec::with_capacity(n_steps);
    let mut prev = 0;
    for &s in &selected {
        // A single-step jump keeps its own beta rather than the ratio form.
        let b = if s == prev + 1 {
            sched.beta(s)
        } else {
            1.0 - sched.alpha_bar(s) / sched.alpha_bar(prev)
        };
        beta.push(b);
        alpha.push(1.0 - b);
        alpha_bar.push(sched.alpha_bar(s));
        prev = s;
    }
    Ok(RespacedSchedule {
        selected,
        schedule: NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        },
    })
}
