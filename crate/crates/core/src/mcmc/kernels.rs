//! Proposal kernels in whitened coordinates.
//!
//! Every kernel moves through `x + σ ∘ ρ` with ρ a unit-scale vector, so a
//! shared proposal scale σ means the same thing for all three. Gradient
//! kernels use only the direction of the log-density gradient. With ε = 0
//! MALA reduces to random walk, and HMC with one leapfrog step is MALA; the
//! arithmetic is arranged so both identities hold bit for bit.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ChainState, Evaluation, LogTarget, SampleInfo};

/// Gradients with a smaller norm are treated as zero (drift-free step).
pub const GRADIENT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rwm,
    Mala,
    Hmc,
}

impl KernelKind {
    pub fn uses_gradient(self) -> bool {
        !matches!(self, KernelKind::Rwm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Per-component proposal scale.
    pub sigma: Vec<f64>,
    pub epsilon: f64,
    pub leapfrog_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub accepted: bool,
    /// A target or gradient evaluation failed during the step.
    pub failed: bool,
}

fn unit_direction(grad: Option<&DVector<f64>>, dim: usize) -> DVector<f64> {
    match grad {
        Some(g) => {
            let n = g.norm();
            if n.is_finite() && n >= GRADIENT_FLOOR {
                g / n
            } else {
                DVector::zeros(dim)
            }
        }
        None => DVector::zeros(dim),
    }
}

fn half_kick(rho: &DVector<f64>, dir: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    rho + dir * (0.5 * epsilon)
}

fn drift(x: &DVector<f64>, sigma: &DVector<f64>, rho: &DVector<f64>) -> DVector<f64> {
    x + sigma.component_mul(rho)
}

fn kinetic(rho: &DVector<f64>) -> f64 {
    0.5 * rho.norm_squared()
}

/// `steps` leapfrog steps in whitened coordinates. `kick` returns the kick
/// direction at a new position; `dir0` is the direction at the start.
pub fn leapfrog<F>(
    x0: &DVector<f64>,
    rho0: &DVector<f64>,
    dir0: &DVector<f64>,
    sigma: &DVector<f64>,
    epsilon: f64,
    steps: usize,
    mut kick: F,
) -> Result<(DVector<f64>, DVector<f64>), ()>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, ()>,
{
    let mut x = x0.clone();
    let mut rho = rho0.clone();
    let mut dir = dir0.clone();
    for _ in 0..steps {
        let rho_half = half_kick(&rho, &dir, epsilon);
        x = drift(&x, sigma, &rho_half);
        dir = kick(&x)?;
        rho = half_kick(&rho_half, &dir, epsilon);
    }
    Ok((x, rho))
}

fn accept(log_new: f64, log_old: f64, kinetic_old: f64, kinetic_new: f64, u: f64) -> bool {
    let log_ratio = (log_new - log_old) + (kinetic_old - kinetic_new);
    log_ratio.is_finite() && u.ln() < log_ratio || log_ratio == f64::INFINITY
}

/// One Metropolis–Hastings transition. The chain's RNG counter is not
/// advanced here.
pub fn step<T, R>(target: &T, chain: &mut ChainState<T::Info>, cfg: &KernelConfig, rng: &mut R) -> StepOutcome
where
    T: LogTarget,
    T::Info: SampleInfo,
    R: Rng + ?Sized,
{
    let dim = chain.x.len();
    let sigma = DVector::from_column_slice(&cfg.sigma);
    let rho0 = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.random();
    let mut outcome = StepOutcome::default();

    match cfg.kind {
        KernelKind::Rwm => {
            let x_new = drift(&chain.x, &sigma, &rho0);
            chain.objective_evals += 1;
            match target.evaluate(&x_new) {
                Ok(eval) => {
                    if accept(eval.log_density, chain.eval.log_density, 0.0, 0.0, u) {
                        chain.x = x_new;
                        chain.eval = eval;
                        outcome.accepted = true;
                    }
                }
                Err(_) => outcome.failed = true,
            }
        }
        KernelKind::Mala | KernelKind::Hmc => {
            let steps = if cfg.kind == KernelKind::Mala { 1 } else { cfg.leapfrog_steps.max(1) };
            if chain.grad.is_none() {
                outcome.failed = true;
            }
            let dir0 = unit_direction(chain.grad.as_ref(), dim);
            let mut last: Option<(Evaluation<T::Info>, DVector<f64>)> = None;
            let mut evals = 0u64;
            let path = leapfrog(&chain.x, &rho0, &dir0, &sigma, cfg.epsilon, steps, |x| {
                evals += 1;
                let eval = target.evaluate(x).map_err(|_| ())?;
                let grad = target.gradient(x, &eval).map_err(|_| ())?;
                let dir = unit_direction(Some(&grad), dim);
                last = Some((eval, grad));
                Ok(dir)
            });
            chain.objective_evals += evals;
            chain.gradient_evals += evals;
            match (path, last) {
                (Ok((x, rho)), Some((eval, grad))) => {
                    if !eval.log_density.is_finite() {
                        outcome.failed = true;
                    }
                    if accept(eval.log_density, chain.eval.log_density, kinetic(&rho0), kinetic(&rho), u) {
                        chain.x = x;
                        chain.eval = eval;
                        chain.grad = Some(grad);
                        outcome.accepted = true;
                    }
                }
                _ => outcome.failed = true,
            }
        }
    }
    outcome
}
