//! Screening objective over the shooting-time grid, its frozen-time
//! surrogate and gradient, the target density and the reward.

use std::sync::Arc;

use nalgebra::{Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CombinedState, StateVector, IDX_M};
use crate::error::{DomainError, PropagationError};
use crate::kdtree::{squared_distance, KdTree, NearestNeighbor, Point};
use crate::orbits::PeriodicOrbit;
use crate::propagator::{sensitivities_from, Propagator, PropagatorOptions, TrajectoryNode};
use crate::systems::{SpacecraftConfig, SystemConfig};

/// Sampled planar costate `(λ_r1, λ_r2, λ_v1, λ_v2)`.
pub type Costate = Vector4<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScreeningError {
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("no candidate nodes to screen")]
    NoCandidates,
    #[error("target orbit has no samples")]
    EmptyOrbit,
    #[error("non-finite costate component")]
    NonFiniteCostate,
    #[error("invalid objective weights: {0}")]
    Weights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub kappa1: f64,
    /// Per TU.
    pub kappa2: f64,
    pub beta: f64,
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), ScreeningError> {
        if !(self.kappa1 > 0.0) || !(self.kappa2 >= 0.0) || !(self.beta > 0.0) {
            return Err(ScreeningError::Weights(format!(
                "need kappa1 > 0, kappa2 >= 0, beta > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// `e + κ₁((1 − m) + κ₂τ_s)`.
    #[inline]
    pub fn objective(&self, e: f64, dm_frac: f64, tau_s: f64) -> f64 {
        e + self.kappa1 * (dm_frac + self.kappa2 * tau_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningOptions {
    pub tau_s_max: f64,
    /// Below this constraint violation the gradient direction is undefined.
    pub e_guard: f64,
    pub propagator: PropagatorOptions,
}

impl Default for ScreeningOptions {
    fn default() -> Self {
        Self {
            tau_s_max: 90.0,
            e_guard: 1e-9,
            propagator: PropagatorOptions {
                // Screening only needs the grid nodes.
                dense_output: false,
                ..PropagatorOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub tau_s_star: f64,
    pub tau_f_star: f64,
    pub e: f64,
    pub dm_frac: f64,
    pub j_star: f64,
    pub node_index: usize,
    pub sample_index: usize,
    pub switch_count: usize,
}

/// One shooting-time candidate: time, planar state and mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub t: f64,
    pub planar: Point,
    pub m: f64,
}

impl Candidate {
    pub fn from_node(index: usize, node: &TrajectoryNode) -> Self {
        Self {
            index,
            t: node.t,
            planar: planar_of(&node.y),
            m: node.y[IDX_M],
        }
    }
}

fn planar_of(y: &StateVector) -> Point {
    [y[0], y[1], y[3], y[4]]
}

/// Minimize the objective over candidates. The first minimum wins.
pub fn screen_candidates<N: NearestNeighbor>(
    candidates: &[Candidate],
    orbit_index: &N,
    tau_f: impl Fn(usize) -> f64,
    weights: &ObjectiveWeights,
) -> Result<ScreeningResult, ScreeningError> {
    let mut best: Option<ScreeningResult> = None;
    for c in candidates {
        let nn = orbit_index.nearest(&c.planar).ok_or(ScreeningError::EmptyOrbit)?;
        let e = nn.distance();
        let dm_frac = 1.0 - c.m;
        let j = weights.objective(e, dm_frac, c.t);
        if best.is_none_or(|b| j < b.j_star) {
            best = Some(ScreeningResult {
                tau_s_star: c.t,
                tau_f_star: tau_f(nn.index),
                e,
                dm_frac,
                j_star: j,
                node_index: c.index,
                sample_index: nn.index,
                switch_count: 0,
            });
        }
    }
    best.ok_or(ScreeningError::NoCandidates)
}

/// Frozen-time gradient together with a flag for the suppressed case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenGradient {
    pub grad: Costate,
    /// `e` was below the guard and the gradient was set to zero.
    pub suppressed: bool,
}

/// Immutable evaluation context for one α: system, boundary orbits and the
/// target-orbit search tree. Shared read-only across chains.
#[derive(Debug, Clone)]
pub struct ScreeningContext {
    pub sys: SystemConfig,
    pub sc: SpacecraftConfig,
    pub departure: Vector6<f64>,
    pub target: Arc<PeriodicOrbit>,
    pub tree: Arc<KdTree>,
    pub weights: ObjectiveWeights,
    pub opts: ScreeningOptions,
    propagator: Propagator,
}

impl ScreeningContext {
    pub fn new(
        sys: SystemConfig,
        sc: SpacecraftConfig,
        departure: &PeriodicOrbit,
        target: Arc<PeriodicOrbit>,
        weights: ObjectiveWeights,
        opts: ScreeningOptions,
    ) -> Result<Self, ScreeningError> {
        weights.validate()?;
        opts.propagator.validate()?;
        if target.samples.is_empty() {
            return Err(ScreeningError::EmptyOrbit);
        }
        let tree = Arc::new(KdTree::build(target.samples.iter().map(|s| s.planar()).collect()));
        Ok(Self {
            propagator: Propagator::new(&sys, &sc, opts.propagator),
            sys,
            sc,
            departure: departure.state(),
            target,
            tree,
            weights,
            opts,
        })
    }

    /// Same system and orbits with different weights.
    pub fn with_weights(&self, weights: ObjectiveWeights) -> Result<Self, ScreeningError> {
        weights.validate()?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    /// Combined initial state for a sampled costate (λ_m = −1, m = 1).
    pub fn initial_state(&self, lam: &Costate) -> Result<StateVector, ScreeningError> {
        if lam.iter().any(|x| !x.is_finite()) {
            return Err(ScreeningError::NonFiniteCostate);
        }
        Ok(CombinedState {
            r: self.departure.fixed_rows::<3>(0).into_owned(),
            v: self.departure.fixed_rows::<3>(3).into_owned(),
            m: 1.0,
            lam_r: Vector3::new(lam[0], lam[1], 0.0),
            lam_v: Vector3::new(lam[2], lam[3], 0.0),
            lam_m: -1.0,
        }
        .to_vector())
    }

    pub fn evaluate(&self, lam: &Costate) -> Result<ScreeningResult, ScreeningError> {
        let y0 = self.initial_state(lam)?;
        let traj = self.propagator.run(&y0, self.opts.tau_s_max)?;
        let candidates: Vec<Candidate> = traj.candidates().map(|(i, n)| Candidate::from_node(i, n)).collect();
        let mut result = screen_candidates(&candidates, self.tree.as_ref(), |k| self.target.samples[k].tau_f, &self.weights)?;
        result.switch_count = traj.switch_count();
        Ok(result)
    }

    /// Objective with shooting time and target sample frozen at an anchor's
    /// choice.
    pub fn frozen_objective(&self, lam: &Costate, tau_s: f64, sample_index: usize) -> Result<f64, ScreeningError> {
        let y0 = self.initial_state(lam)?;
        let traj = self.propagator.run(&y0, tau_s)?;
        let y = traj.final_node().y;
        let sample = self.target.samples.get(sample_index).ok_or(ScreeningError::EmptyOrbit)?;
        let e = squared_distance(&planar_of(&y), &sample.planar()).sqrt();
        Ok(self.weights.objective(e, 1.0 - y[IDX_M], traj.final_node().t))
    }

    /// Gradient of the frozen objective at its anchor, from the STM chain
    /// up to the selected node.
    pub fn frozen_gradient(&self, lam: &Costate, result: &ScreeningResult) -> Result<FrozenGradient, ScreeningError> {
        if !(result.e > self.opts.e_guard) {
            return Ok(FrozenGradient {
                grad: Costate::zeros(),
                suppressed: true,
            });
        }
        let y0 = self.initial_state(lam)?;
        let (traj, chain) = self.propagator.run_with_stm(&y0, result.tau_s_star)?;
        let y = traj.final_node().y;
        let s = self.target.samples.get(result.sample_index).ok_or(ScreeningError::EmptyOrbit)?;
        let e_vec = Vector6::new(s.r[0] - y[0], s.r[1] - y[1], s.r[2] - y[2], s.v[0] - y[3], s.v[1] - y[4], s.v[2] - y[5]);
        let e = e_vec.norm();
        let sens = sensitivities_from(&chain.total);
        // Mass is normalized, so m0 = 1 in the mass term.
        let full = sens.g1.transpose() * (e_vec / e) + sens.g2.transpose() * self.weights.kappa1;
        Ok(FrozenGradient {
            grad: Costate::new(full[0], full[1], full[3], full[4]),
            suppressed: false,
        })
    }

    pub fn log_target_density(&self, lam: &Costate) -> Result<f64, ScreeningError> {
        Ok(log_density(self.evaluate(lam)?.j_star, self.weights.beta))
    }
}

/// Unnormalized log density `−βJ*`.
#[inline]
pub fn log_density(j_star: f64, beta: f64) -> f64 {
    -beta * j_star
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardCalibration {
    pub c1: f64,
    pub c2: f64,
    /// All objective values were equal; rewards are uniform.
    pub degenerate: bool,
}

pub const REWARD_MIN: f64 = 0.1;
pub const REWARD_MAX: f64 = 1.0;

/// Map the extremes of `j_values` to rewards 1 (best) and 0.1 (worst).
pub fn calibrate_reward(j_values: &[f64]) -> Option<RewardCalibration> {
    let finite = j_values.iter().copied().filter(|j| j.is_finite());
    let (lo, hi) = finite.fold(None, |acc: Option<(f64, f64)>, j| match acc {
        None => Some((j, j)),
        Some((lo, hi)) => Some((lo.min(j), hi.max(j))),
    })?;
    if hi > lo {
        let c2 = std::f64::consts::LN_10 / (hi - lo);
        Some(RewardCalibration {
            c1: (c2 * lo).exp(),
            c2,
            degenerate: false,
        })
    } else {
        Some(RewardCalibration {
            c1: 1.0,
            c2: 0.0,
            degenerate: true,
        })
    }
}

/// `R = c₁ exp(−c₂J*)`.
#[inline]
pub fn reward(j_star: f64, c1: f64, c2: f64) -> f64 {
    c1 * (-c2 * j_star).exp()
}

impl RewardCalibration {
    /// Reward clamped to the calibrated band, absorbing rounding at the ends.
    pub fn stamp(&self, j_star: f64) -> f64 {
        reward(j_star, self.c1, self.c2).clamp(REWARD_MIN, REWARD_MAX)
    }
}
