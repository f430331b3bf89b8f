//! Planar distant retrograde orbits: single-shooting correction on the
//! perpendicular x-axis crossing, continuation in α and uniform sampling.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{coriolis_matrix, Cr3bp};
use crate::error::DomainError;
use crate::integrator::{attempt_step, initial_step, next_step_size, Tolerances};
use crate::systems::{lerp, SystemEndpoints, DEFAULT_COLLISION_RADIUS};

type CoastStm = SVector<f64, 42>;

/// Boundary-orbit crossing states at the two homotopy endpoints.
pub const DEPARTURE_X0_START: f64 = 1.0752;
pub const DEPARTURE_VY_START: f64 = -0.1499;
pub const DEPARTURE_X0_END: f64 = 1.0758;
pub const DEPARTURE_VY_END: f64 = -0.1684;
pub const TARGET_X0_START: f64 = 1.0306;
pub const TARGET_VY_START: f64 = -0.0727;
pub const TARGET_X0_END: f64 = 1.0304;
pub const TARGET_VY_END: f64 = -0.1248;

pub const DEFAULT_ORBIT_POINTS: usize = 2000;
const MAX_CONTINUATION_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrbitError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("differential correction did not converge in {iterations} iterations (|vx| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no x-axis crossing within {t_max} TU")]
    NoCrossing { t_max: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("orbit discretization needs at least 2 points, got {0}")]
    TooFewPoints(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub crossing_tol: f64,
    pub max_iterations: usize,
    pub collision_radius: f64,
    /// Give up looking for the half-period crossing after this long.
    pub max_half_period: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-14,
            max_step: 1e-2,
            crossing_tol: 1e-12,
            max_iterations: 25,
            collision_radius: DEFAULT_COLLISION_RADIUS,
            max_half_period: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSample {
    pub tau_f: f64,
    pub r: [f64; 3],
    pub v: [f64; 3],
}

impl OrbitSample {
    /// Planar coordinates (r1, r2, v1, v2) used by the nearest-neighbor search.
    pub fn planar(&self) -> [f64; 4] {
        [self.r[0], self.r[1], self.v[0], self.v[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    /// Crossing state (x, 0, 0, 0, vy, 0).
    pub x0: [f64; 6],
    pub period: f64,
    pub mu: f64,
    pub samples: Vec<OrbitSample>,
}

impl PeriodicOrbit {
    pub fn state(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.x0)
    }
}

/// Coast-only CR3BP propagation with the 6×6 variational equations.
#[derive(Debug, Clone, Copy)]
struct Coast {
    model: Cr3bp,
    opts: OrbitOptions,
}

impl Coast {
    fn new(mu: f64, opts: OrbitOptions) -> Self {
        Self {
            model: Cr3bp::with_collision_radius(mu, opts.collision_radius),
            opts,
        }
    }

    fn rhs(&self, y: &CoastStm) -> Result<CoastStm, DomainError> {
        let r = Vector3::new(y[0], y[1], y[2]);
        let v = Vector3::new(y[3], y[4], y[5]);
        let a = self.model.acceleration(&r, &v)?;
        let g = self.model.gravity_gradient(&r)?;
        let mut jac = SMatrix::<f64, 6, 6>::zeros();
        jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        jac.fixed_view_mut::<3, 3>(3, 0).copy_from(&g);
        jac.fixed_view_mut::<3, 3>(3, 3).copy_from(&coriolis_matrix());
        let phi = SMatrix::<f64, 6, 6>::from_column_slice(&y.as_slice()[6..]);
        let dphi = jac * phi;
        let mut out = CoastStm::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&v);
        out.fixed_rows_mut::<3>(3).copy_from(&a);
        out.as_mut_slice()[6..].copy_from_slice(dphi.as_slice());
        Ok(out)
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rel_tol: self.opts.rel_tol,
            abs_tol: self.opts.abs_tol,
            controlled: 6,
        }
    }

    fn augment(x: &Vector6<f64>) -> CoastStm {
        let mut y = CoastStm::zeros();
        y.fixed_rows_mut::<6>(0).copy_from(x);
        y.as_mut_slice()[6..].copy_from_slice(SMatrix::<f64, 6, 6>::identity().as_slice());
        y
    }

    /// Propagate and return the state at each requested time (ascending).
    fn states_at(&self, x0: &Vector6<f64>, times: &[f64]) -> Result<Vec<Vector6<f64>>, OrbitError> {
        let f = |y: &CoastStm| self.rhs(y);
        let tol = self.tolerances();
        let mut y = Self::augment(x0);
        let mut k1 = f(&y)?;
        let mut h = initial_step(&f, &y, &k1, &tol, self.opts.max_step)?;
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            while t < target {
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(OrbitError::StepUnderflow { t });
                }
                let remaining = target - t;
                let (h_try, clamped) = if h >= remaining { (remaining, true) } else { (h, false) };
                let step = attempt_step(&f, &y, &k1, h_try, &tol)?;
                if !step.accepted() {
                    h = next_step_size(h_try, step.error, false);
                    continue;
                }
                let proposed = next_step_size(h_try, step.error, true);
                h = if clamped { proposed.max(h) } else { proposed };
                t = if clamped { target } else { t + h_try };
                y = step.y1;
                k1 = *step.k_last();
            }
            out.push(y.fixed_rows::<6>(0).into_owned());
        }
        Ok(out)
    }

    /// Propagate until y changes sign relative to the initial velocity
    /// direction; return crossing time, state and STM.
    fn first_crossing(&self, x0: &Vector6<f64>) -> Result<(f64, CoastStm), OrbitError> {
        let f = |y: &CoastStm| self.rhs(y);
        let tol = self.tolerances();
        let side = if x0[4] >= 0.0 { 1.0 } else { -1.0 };
        let mut y = Self::augment(x0);
        let mut k1 = f(&y)?;
        let mut h = initial_step(&f, &y, &k1, &tol, self.opts.max_step)?;
        let mut t = 0.0;
        while t < self.opts.max_half_period {
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(OrbitError::StepUnderflow { t });
            }
            let h_try = h.min(self.opts.max_step);
            let step = attempt_step(&f, &y, &k1, h_try, &tol)?;
            if !step.accepted() {
                h = next_step_size(h_try, step.error, false);
                continue;
            }
            // Skip the departure from the crossing itself.
            if t > 0.0 && side * step.y1[1] <= 0.0 {
                let (mut a, mut fa) = (0.0, side * y[1]);
                let (mut b, mut fb) = (h_try, side * step.y1[1]);
                let mut best = (h_try, step.y1);
                let mut last = 0i8;
                for _ in 0..200 {
                    let mut x = a - fa * (b - a) / (fb - fa);
                    if !(x > a && x < b) {
                        x = 0.5 * (a + b);
                    }
                    let trial = attempt_step(&f, &y, &k1, x, &tol)?.y1;
                    let g = side * trial[1];
                    best = (x, trial);
                    if g.abs() <= 1e-15 || b - a <= 4.0 * f64::EPSILON * (t + b) {
                        break;
                    }
                    if g > 0.0 {
                        a = x;
                        fa = g;
                        if last == 1 {
                            fb *= 0.5;
                        }
                        last = 1;
                    } else {
                        b = x;
                        fb = g;
                        if last == -1 {
                            fa *= 0.5;
                        }
                        last = -1;
                    }
                }
                return Ok((t + best.0, best.1));
            }
            h = next_step_size(h_try, step.error, true);
            t += h_try;
            y = step.y1;
            k1 = *step.k_last();
        }
        Err(OrbitError::NoCrossing {
            t_max: self.opts.max_half_period,
        })
    }
}

/// Newton iteration on the crossing velocity with the crossing distance
/// fixed, driving vx at the half-period crossing to zero.
pub fn correct_perpendicular_crossing(
    x0: f64,
    vy_guess: f64,
    mu: f64,
    opts: &OrbitOptions,
) -> Result<PeriodicOrbit, OrbitError> {
    let coast = Coast::new(mu, *opts);
    let mut vy = vy_guess;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let state = Vector6::new(x0, 0.0, 0.0, 0.0, vy, 0.0);
        let (t_half, yc) = coast.first_crossing(&state)?;
        residual = yc[3];
        if residual.abs() < opts.crossing_tol {
            return Ok(PeriodicOrbit {
                x0: [x0, 0.0, 0.0, 0.0, vy, 0.0],
                period: 2.0 * t_half,
                mu,
                samples: Vec::new(),
            });
        }
        let phi = SMatrix::<f64, 6, 6>::from_column_slice(&yc.as_slice()[6..]);
        let deriv = coast.rhs(&yc)?;
        // Correct for the shift of the crossing time: dt = −Φ[1][4]/vy_f.
        let slope = phi[(3, 4)] - deriv[3] * phi[(1, 4)] / yc[4];
        vy -= residual / slope;
    }
    Err(OrbitError::NoConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Sample `n_points` states at uniform τ_f over `[0, period)`.
pub fn discretize_orbit(orbit: &PeriodicOrbit, n_points: usize, opts: &OrbitOptions) -> Result<PeriodicOrbit, OrbitError> {
    if n_points < 2 {
        return Err(OrbitError::TooFewPoints(n_points));
    }
    let coast = Coast::new(orbit.mu, *opts);
    let dt = orbit.period / n_points as f64;
    let times: Vec<f64> = (0..n_points).map(|k| k as f64 * dt).collect();
    let states = coast.states_at(&orbit.state(), &times)?;
    let samples = times
        .iter()
        .zip(&states)
        .map(|(&tau_f, x)| OrbitSample {
            tau_f,
            r: [x[0], x[1], x[2]],
            v: [x[3], x[4], x[5]],
        })
        .collect();
    Ok(PeriodicOrbit {
        samples,
        ..orbit.clone()
    })
}

/// `‖φ_T(x0) − x0‖` after one full period.
pub fn periodicity_defect(orbit: &PeriodicOrbit, opts: &OrbitOptions) -> Result<f64, OrbitError> {
    let coast = Coast::new(orbit.mu, *opts);
    let x0 = orbit.state();
    let xf = coast.states_at(&x0, &[orbit.period])?[0];
    Ok((xf - x0).norm())
}

/// Coast `x0` for each of `times` (ascending), using the orbit integrator.
pub fn coast_states(
    x0: &Vector6<f64>,
    times: &[f64],
    mu: f64,
    opts: &OrbitOptions,
) -> Result<Vec<Vector6<f64>>, OrbitError> {
    Coast::new(mu, *opts).states_at(x0, times)
}

/// One boundary orbit family, anchored by its crossing distance from the
/// secondary at each homotopy endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitFamily {
    pub x0_start: f64,
    pub vy_start: f64,
    pub x0_end: f64,
    pub vy_end: f64,
}

pub const DEPARTURE_FAMILY: OrbitFamily = OrbitFamily {
    x0_start: DEPARTURE_X0_START,
    vy_start: DEPARTURE_VY_START,
    x0_end: DEPARTURE_X0_END,
    vy_end: DEPARTURE_VY_END,
};

pub const TARGET_FAMILY: OrbitFamily = OrbitFamily {
    x0_start: TARGET_X0_START,
    vy_start: TARGET_VY_START,
    x0_end: TARGET_X0_END,
    vy_end: TARGET_VY_END,
};

impl OrbitFamily {
    /// Crossing distance from the secondary at `alpha`.
    pub fn secondary_distance(&self, endpoints: &SystemEndpoints, alpha: f64) -> f64 {
        let d0 = self.x0_start - (1.0 - endpoints.mu_start);
        let d1 = self.x0_end - (1.0 - endpoints.mu_end);
        lerp(d0, d1, alpha)
    }

    /// Corrected orbit at `alpha`, continued from α = 0 in steps of at most 0.1.
    pub fn orbit_at(
        &self,
        endpoints: &SystemEndpoints,
        alpha: f64,
        opts: &OrbitOptions,
    ) -> Result<PeriodicOrbit, OrbitError> {
        let sys = endpoints.interpolate(alpha)?;
        let steps = (alpha / MAX_CONTINUATION_STEP).ceil().max(0.0) as usize;
        let mut vy = self.vy_start;
        let mut orbit = None;
        for k in 0..=steps {
            let a = if steps == 0 { alpha } else { alpha * k as f64 / steps as f64 };
            let s = if k == steps { sys } else { endpoints.interpolate(a)? };
            let x0 = 1.0 - s.mass_ratio + self.secondary_distance(endpoints, a);
            let o = correct_perpendicular_crossing(x0, vy, s.mass_ratio, opts)?;
            vy = o.x0[4];
            orbit = Some(o);
        }
        Ok(orbit.expect("at least one continuation step"))
    }
}

/// Departure and target orbits at `alpha`, the target discretized.
pub fn boundary_orbits_for_alpha(
    endpoints: &SystemEndpoints,
    alpha: f64,
    n_points: usize,
    opts: &OrbitOptions,
) -> Result<(PeriodicOrbit, PeriodicOrbit), OrbitError> {
    let departure = DEPARTURE_FAMILY.orbit_at(endpoints, alpha, opts)?;
    let target = TARGET_FAMILY.orbit_at(endpoints, alpha, opts)?;
    let target = discretize_orbit(&target, n_points, opts)?;
    Ok((departure, target))
}
