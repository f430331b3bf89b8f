//! Dormand–Prince 5(4) stepper with dense output.
//!
//! Only the single-step machinery lives here. The adaptive loops (grid
//! clamping, event location) are owned by the callers because each of them
//! needs a different stopping rule.

use nalgebra::SVector;

// Autonomous systems only, so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Error-control settings.
///
/// Only the first `controlled` components enter the error norm. Variational
/// components appended to a state (STM entries) therefore never change the
/// step sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub controlled: usize,
}

/// One attempted step together with everything needed for dense output.
#[derive(Debug, Clone)]
pub struct StepAttempt<const N: usize> {
    pub h: f64,
    pub y0: SVector<f64, N>,
    pub y1: SVector<f64, N>,
    pub k: [SVector<f64, N>; 7],
    pub error: f64,
}

/// Take one Dormand–Prince step of size `h` from `y0`. `k1` is the
/// derivative at `y0` (first-same-as-last reuse).
pub fn attempt_step<const N: usize, E, F>(
    f: &F,
    y0: &SVector<f64, N>,
    k1: &SVector<f64, N>,
    h: f64,
    tol: &Tolerances,
) -> Result<StepAttempt<N>, E>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>, E>,
{
    let k2 = f(&(y0 + k1 * (h * A21)))?;
    let k3 = f(&(y0 + (k1 * A31 + k2 * A32) * h))?;
    let k4 = f(&(y0 + (k1 * A41 + k2 * A42 + k3 * A43) * h))?;
    let k5 = f(&(y0 + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h))?;
    let k6 = f(&(y0 + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h))?;
    let y1 = y0 + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
    let k7 = f(&y1)?;
    let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;

    let n = tol.controlled.min(N);
    let mut acc = 0.0;
    for i in 0..n {
        let scale = tol.abs_tol + tol.rel_tol * y0[i].abs().max(y1[i].abs());
        let r = err_vec[i] / scale;
        acc += r * r;
    }
    let error = if n == 0 { 0.0 } else { (acc / n as f64).sqrt() };
    Ok(StepAttempt {
        h,
        y0: *y0,
        y1,
        k: [*k1, k2, k3, k4, k5, k6, k7],
        error,
    })
}

impl<const N: usize> StepAttempt<N> {
    pub fn accepted(&self) -> bool {
        self.error <= 1.0
    }

    /// Derivative at the end of the step.
    pub fn k_last(&self) -> &SVector<f64, N> {
        &self.k[6]
    }

    /// Dense-output interpolant over this step.
    pub fn dense(&self) -> DenseStep<N> {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let h = self.h;
        let ydiff = self.y1 - self.y0;
        let bspl = k1 * h - ydiff;
        DenseStep {
            r: [
                self.y0,
                ydiff,
                bspl,
                ydiff - k7 * h - bspl,
                (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h,
            ],
        }
    }
}

/// Proposed next step size from a step's error estimate.
pub fn next_step_size(h: f64, error: f64, accepted: bool) -> f64 {
    let factor = if error == 0.0 {
        MAX_FACTOR
    } else {
        (SAFETY * error.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
    };
    if accepted {
        h * factor
    } else {
        h * factor.min(1.0)
    }
}

/// Starting step size (Hairer–Nørsett–Wanner heuristic), capped at `max_step`.
pub fn initial_step<const N: usize, E, F>(
    f: &F,
    y0: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    tol: &Tolerances,
    max_step: f64,
) -> Result<f64, E>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>, E>,
{
    let n = tol.controlled.min(N).max(1);
    let norm = |v: &SVector<f64, N>| {
        let mut acc = 0.0;
        for i in 0..n {
            let r = v[i] / (tol.abs_tol + tol.rel_tol * y0[i].abs());
            acc += r * r;
        }
        (acc / n as f64).sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(max_step);
    let y1 = y0 + f0 * h0;
    let f1 = f(&y1)?;
    let d2 = norm(&(f1 - f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(max_step))
}

/// Hermite-type quartic interpolant over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    r: [SVector<f64, N>; 5],
}

impl<const N: usize> DenseStep<N> {
    /// State at fraction `theta` ∈ [0, 1] of the step.
    pub fn eval(&self, theta: f64) -> SVector<f64, N> {
        let t1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.r;
        r1 + (r2 + (r3 + (r4 + r5 * t1) * theta) * t1) * theta
    }
}
