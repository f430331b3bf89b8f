//! Metropolis–Hastings samplers over costate space and the α-homotopy
//! driver that carries chains from one system to the next.

mod homotopy;
mod kernels;
mod runner;
mod targets;

use std::fmt::Debug;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use homotopy::{
    run_homotopy, HomotopyError, HomotopyOutput, HomotopyRecord, Snapshot, SnapshotChain, StageSpec,
};
pub use kernels::{leapfrog, step, KernelConfig, KernelKind, StepOutcome, GRADIENT_FLOOR};
pub use crate::rng::step_rng;
pub use runner::{run_stage, IterationTrace, StageOutput, StageRecord};
pub use targets::{GaussianTarget, ScreeningTarget};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct TargetError(pub String);

/// Log density value and whatever the target wants to remember about it.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<I> {
    pub log_density: f64,
    pub info: I,
}

/// Quantities reported in iteration traces.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceValues {
    pub j: f64,
    pub e: f64,
    pub dm: f64,
    pub tau_s: f64,
}

pub trait SampleInfo: Clone + Debug + Send + Sync + Serialize + DeserializeOwned {
    fn trace_values(&self) -> TraceValues;
}

impl SampleInfo for () {
    fn trace_values(&self) -> TraceValues {
        TraceValues::default()
    }
}

/// Unnormalized target density.
pub trait LogTarget: Sync {
    type Info: SampleInfo;

    fn dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation<Self::Info>, TargetError>;

    /// Gradient (or surrogate gradient) of the log density at a point that
    /// was just evaluated.
    fn gradient(&self, x: &DVector<f64>, eval: &Evaluation<Self::Info>) -> Result<DVector<f64>, TargetError>;
}

/// One Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<I> {
    pub id: usize,
    pub x: DVector<f64>,
    pub eval: Evaluation<I>,
    /// Present for gradient-based kernels; `None` after a gradient failure.
    pub grad: Option<DVector<f64>>,
    /// Completed iterations, the RNG stream counter.
    pub counter: u64,
    pub objective_evals: u64,
    pub gradient_evals: u64,
}

impl<I: SampleInfo> ChainState<I> {
    /// Evaluate `x` (and its gradient if `with_gradient`) to start a chain.
    pub fn start<T: LogTarget<Info = I>>(
        target: &T,
        id: usize,
        x: DVector<f64>,
        counter: u64,
        with_gradient: bool,
    ) -> Result<Self, TargetError> {
        let eval = target.evaluate(&x)?;
        let grad = if with_gradient { target.gradient(&x, &eval).ok() } else { None };
        Ok(Self {
            id,
            x,
            eval,
            grad,
            counter,
            objective_evals: 1,
            gradient_evals: u64::from(with_gradient),
        })
    }
}
