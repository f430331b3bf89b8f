use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Noise variances β₁..β_N with α_n = 1 − β_n and ᾱ_n = ∏ α_i.
/// Index 0 of each vector is step 1; ᾱ₀ = 1 by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl VarianceSchedule {
    pub fn linear(n_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if n_steps == 0 {
            return Err(DiffusionError::Schedule("need at least one step".into()));
        }
        let betas: Vec<f64> = if n_steps == 1 {
            vec![beta_start]
        } else {
            (0..n_steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (n_steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::Schedule("need at least one step".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) || betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(DiffusionError::Schedule("betas must be non-decreasing in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    /// ᾱ_n for n in 0..=N.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.alpha_bars[n - 1]
        }
    }

    fn check(&self, n: usize) -> Result<(), DiffusionError> {
        if n > self.n_steps() {
            return Err(DiffusionError::StepRange { n, max: self.n_steps() });
        }
        Ok(())
    }
}

/// Closed-form sample of the noised vector at step `n` given noise ε.
pub fn forward_noise(x0: &[f64], n: usize, noise: &[f64], schedule: &VarianceSchedule) -> Result<Vec<f64>, DiffusionError> {
    schedule.check(n)?;
    if x0.len() != noise.len() {
        return Err(DiffusionError::Dimension {
            expected: x0.len(),
            got: noise.len(),
        });
    }
    let ab = schedule.alpha_bar(n);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// One forward transition from step `n − 1` to step `n`.
pub fn noising_step(x_prev: &[f64], n: usize, noise: &[f64], schedule: &VarianceSchedule) -> Result<Vec<f64>, DiffusionError> {
    if n == 0 {
        return Err(DiffusionError::StepRange { n, max: schedule.n_steps() });
    }
    schedule.check(n)?;
    let (a, b) = (schedule.alpha(n).sqrt(), schedule.beta(n).sqrt());
    Ok(x_prev.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}
