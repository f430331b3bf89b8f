use nalgebra::DVector;

use super::{Evaluation, LogTarget, SampleInfo, TargetError, TraceValues};
use crate::screening::{log_density, Costate, ScreeningContext, ScreeningResult};

impl SampleInfo for ScreeningResult {
    fn trace_values(&self) -> TraceValues {
        TraceValues {
            j: self.j_star,
            e: self.e,
            dm: self.dm_frac,
            tau_s: self.tau_s_star,
        }
    }
}

/// Screening objective as a density over planar costates, `π ∝ exp(−βJ*)`.
/// The gradient is the frozen-time surrogate; it is zero where the
/// surrogate is suppressed.
pub struct ScreeningTarget(pub ScreeningContext);

fn costate(x: &DVector<f64>) -> Result<Costate, TargetError> {
    if x.len() != 4 {
        return Err(TargetError(format!("costate must have 4 components, got {}", x.len())));
    }
    Ok(Costate::new(x[0], x[1], x[2], x[3]))
}

impl LogTarget for ScreeningTarget {
    type Info = ScreeningResult;

    fn dim(&self) -> usize {
        4
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation<ScreeningResult>, TargetError> {
        let r = self.0.evaluate(&costate(x)?).map_err(|e| TargetError(e.to_string()))?;
        Ok(Evaluation {
            log_density: log_density(r.j_star, self.0.weights.beta),
            info: r,
        })
    }

    fn gradient(&self, x: &DVector<f64>, eval: &Evaluation<ScreeningResult>) -> Result<DVector<f64>, TargetError> {
        let g = self
            .0
            .frozen_gradient(&costate(x)?, &eval.info)
            .map_err(|e| TargetError(e.to_string()))?;
        Ok(DVector::from_iterator(4, g.grad.iter().map(|d| -self.0.weights.beta * d)))
    }
}

/// Independent Gaussian with diagonal covariance, for testing kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl GaussianTarget {
    pub fn isotropic(dim: usize, std: f64) -> Self {
        Self {
            mean: DVector::zeros(dim),
            std: DVector::from_element(dim, std),
        }
    }
}

impl LogTarget for GaussianTarget {
    type Info = ();

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation<()>, TargetError> {
        let z = (x - &self.mean).component_div(&self.std);
        Ok(Evaluation {
            log_density: -0.5 * z.norm_squared(),
            info: (),
        })
    }

    fn gradient(&self, x: &DVector<f64>, _: &Evaluation<()>) -> Result<DVector<f64>, TargetError> {
        Ok(-(x - &self.mean).component_div(&self.std).component_div(&self.std))
    }
}
