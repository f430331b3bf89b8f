//! Vector fields of the indirect low-thrust problem in the CR3BP.
//!
//! State layout of the 14-component combined vector used throughout the crate:
//!
//! | index  | quantity          |
//! |--------|-------------------|
//! | 0..3   | position `r`      |
//! | 3..6   | velocity `v`      |
//! | 6      | mass `m` (m0 = 1) |
//! | 7..10  | `λ_r`             |
//! | 10..13 | `λ_v` (primer)    |
//! | 13     | `λ_m`             |

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::DomainError;
use crate::systems::{SpacecraftConfig, SystemConfig, DEFAULT_COLLISION_RADIUS};

pub type StateVector = SVector<f64, 14>;
pub type StateMatrix = SMatrix<f64, 14, 14>;

pub const IDX_R: usize = 0;
pub const IDX_V: usize = 3;
pub const IDX_M: usize = 6;
pub const IDX_LR: usize = 7;
pub const IDX_LV: usize = 10;
pub const IDX_LM: usize = 13;

/// Below this primer magnitude the thrust direction is undefined.
pub const DEGENERATE_PRIMER: f64 = 1e-12;

/// Position, velocity and mass together with their costates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub m: f64,
    pub lam_r: Vector3<f64>,
    pub lam_v: Vector3<f64>,
    pub lam_m: f64,
}

impl CombinedState {
    pub fn from_vector(y: &StateVector) -> Self {
        Self {
            r: y.fixed_rows::<3>(IDX_R).into(),
            v: y.fixed_rows::<3>(IDX_V).into(),
            m: y[IDX_M],
            lam_r: y.fixed_rows::<3>(IDX_LR).into(),
            lam_v: y.fixed_rows::<3>(IDX_LV).into(),
            lam_m: y[IDX_LM],
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut y = StateVector::zeros();
        y.fixed_rows_mut::<3>(IDX_R).copy_from(&self.r);
        y.fixed_rows_mut::<3>(IDX_V).copy_from(&self.v);
        y[IDX_M] = self.m;
        y.fixed_rows_mut::<3>(IDX_LR).copy_from(&self.lam_r);
        y.fixed_rows_mut::<3>(IDX_LV).copy_from(&self.lam_v);
        y[IDX_LM] = self.lam_m;
        y
    }

    /// True if every out-of-plane component is exactly zero.
    pub fn is_planar(&self) -> bool {
        self.r.z == 0.0 && self.v.z == 0.0 && self.lam_r.z == 0.0 && self.lam_v.z == 0.0
    }
}

/// Outcome of the bang-bang control law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    pub u_hat: Vector3<f64>,
    pub throttle: f64,
    pub switching_value: f64,
}

/// CR3BP gravity model in the rotating frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cr3bp {
    pub mu: f64,
    pub collision_radius: f64,
}

/// Coriolis block `∂g/∂v`, constant for the CR3BP.
pub fn coriolis_matrix() -> Matrix3<f64> {
    Matrix3::new(0.0, 2.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0)
}

struct Body {
    gm: f64,
    d: Vector3<f64>,
    rho: f64,
}

impl Cr3bp {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            collision_radius: DEFAULT_COLLISION_RADIUS,
        }
    }

    pub fn with_collision_radius(mu: f64, collision_radius: f64) -> Self {
        Self { mu, collision_radius }
    }

    fn bodies(&self, r: &Vector3<f64>) -> Result<[Body; 2], DomainError> {
        let d1 = Vector3::new(r.x + self.mu, r.y, r.z);
        let d2 = Vector3::new(r.x - 1.0 + self.mu, r.y, r.z);
        let rho1 = d1.norm();
        let rho2 = d2.norm();
        // A massless body (μ = 0) imposes no collision constraint.
        let clear2 = self.mu == 0.0 || rho2 >= self.collision_radius;
        if !(rho1 >= self.collision_radius && clear2) {
            return Err(DomainError::Singularity { rho1, rho2 });
        }
        Ok([
            Body { gm: 1.0 - self.mu, d: d1, rho: rho1 },
            Body { gm: self.mu, d: d2, rho: rho2 },
        ])
    }

    /// Natural acceleration including Coriolis and centrifugal terms.
    pub fn acceleration(&self, r: &Vector3<f64>, v: &Vector3<f64>) -> Result<Vector3<f64>, DomainError> {
        let [p, s] = self.bodies(r)?;
        let k1 = p.gm / p.rho.powi(3);
        let k2 = if s.gm == 0.0 { 0.0 } else { s.gm / s.rho.powi(3) };
        Ok(Vector3::new(
            2.0 * v.y + r.x - k1 * p.d.x - k2 * s.d.x,
            -2.0 * v.x + r.y - k1 * p.d.y - k2 * s.d.y,
            -k1 * p.d.z - k2 * s.d.z,
        ))
    }

    /// `G = ∂g/∂r`, the Hessian of the effective potential.
    pub fn gravity_gradient(&self, r: &Vector3<f64>) -> Result<Matrix3<f64>, DomainError> {
        let bodies = self.bodies(r)?;
        let mut g = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        for b in bodies.iter().filter(|b| b.gm != 0.0) {
            let r3 = b.rho.powi(3);
            let r5 = r3 * b.rho * b.rho;
            g += (b.d * b.d.transpose()) * (3.0 * b.gm / r5) - Matrix3::identity() * (b.gm / r3);
        }
        Ok(g)
    }

    /// `∂(Gᵀλ_v)/∂r`: third derivatives of the potential contracted with `λ_v`.
    pub fn gradient_contraction_partial(
        &self,
        r: &Vector3<f64>,
        lam_v: &Vector3<f64>,
    ) -> Result<Matrix3<f64>, DomainError> {
        let bodies = self.bodies(r)?;
        let mut t = Matrix3::zeros();
        for b in bodies.iter().filter(|b| b.gm != 0.0) {
            let r2 = b.rho * b.rho;
            let r5 = r2 * r2 * b.rho;
            let r7 = r5 * r2;
            let dl = b.d.dot(lam_v);
            let sym = lam_v * b.d.transpose() + b.d * lam_v.transpose() + Matrix3::identity() * dl;
            t += sym * (3.0 * b.gm / r5) - (b.d * b.d.transpose()) * (15.0 * b.gm * dl / r7);
        }
        Ok(t)
    }
}

/// CR3BP acceleration with the default collision threshold.
pub fn cr3bp_g(r: &Vector3<f64>, v: &Vector3<f64>, mu: f64) -> Result<Vector3<f64>, DomainError> {
    Cr3bp::new(mu).acceleration(r, v)
}

/// Analytic partials `(G, H) = (∂g/∂r, ∂g/∂v)`.
pub fn partials_g_h(
    r: &Vector3<f64>,
    _v: &Vector3<f64>,
    mu: f64,
) -> Result<(Matrix3<f64>, Matrix3<f64>), DomainError> {
    Ok((Cr3bp::new(mu).gravity_gradient(r)?, coriolis_matrix()))
}

/// `S = |λ_v| + λ_m m / c`. Thrust is on where `S > 0`.
#[inline]
pub fn switching_function(lam_v: &Vector3<f64>, lam_m: f64, m: f64, c_nu: f64) -> f64 {
    lam_v.norm() + lam_m * m / c_nu
}

/// Bang-bang control law.
///
/// `arc` carries the throttle of the arc being propagated. It decides the
/// throttle only when `S` is exactly zero, which happens at located switch
/// points; with no arc context such a point yields a coast decision.
pub fn control_law(lam_v: &Vector3<f64>, s: f64, arc: Option<bool>) -> Result<ControlDecision, DomainError> {
    let thrust_on = if s > 0.0 {
        true
    } else if s < 0.0 {
        false
    } else {
        arc.unwrap_or(false)
    };
    if !thrust_on {
        return Ok(ControlDecision {
            u_hat: Vector3::zeros(),
            throttle: 0.0,
            switching_value: s,
        });
    }
    let norm = lam_v.norm();
    if norm < DEGENERATE_PRIMER {
        return Err(DomainError::DegeneratePrimer { norm });
    }
    Ok(ControlDecision {
        u_hat: -lam_v / norm,
        throttle: 1.0,
        switching_value: s,
    })
}

/// The combined state/costate vector field for a fixed thrust level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalField {
    pub cr3bp: Cr3bp,
    pub c_nu: f64,
    pub tmax_nu: f64,
}

impl ExtremalField {
    pub fn new(sys: &SystemConfig, sc: &SpacecraftConfig) -> Self {
        Self {
            cr3bp: Cr3bp::new(sys.mass_ratio),
            c_nu: sc.c_nu,
            tmax_nu: sc.tmax_nu,
        }
    }

    pub fn with_collision_radius(mut self, radius: f64) -> Self {
        self.cr3bp.collision_radius = radius;
        self
    }

    #[inline]
    pub fn thrust(&self, thrust_on: bool) -> f64 {
        if thrust_on {
            self.tmax_nu
        } else {
            0.0
        }
    }

    pub fn switching(&self, y: &StateVector) -> f64 {
        let lam_v: Vector3<f64> = y.fixed_rows::<3>(IDX_LV).into();
        switching_function(&lam_v, y[IDX_LM], y[IDX_M], self.c_nu)
    }

    /// `ẏ` at thrust level `thrust`.
    pub fn eval(&self, y: &StateVector, thrust: f64) -> Result<StateVector, DomainError> {
        let r: Vector3<f64> = y.fixed_rows::<3>(IDX_R).into();
        let v: Vector3<f64> = y.fixed_rows::<3>(IDX_V).into();
        let m = y[IDX_M];
        let lam_r: Vector3<f64> = y.fixed_rows::<3>(IDX_LR).into();
        let lam_v: Vector3<f64> = y.fixed_rows::<3>(IDX_LV).into();
        if !(m > 0.0) {
            return Err(DomainError::Mass(m));
        }

        let g = self.cr3bp.acceleration(&r, &v)?;
        let gg = self.cr3bp.gravity_gradient(&r)?;
        let h = coriolis_matrix();

        let mut dy = StateVector::zeros();
        dy.fixed_rows_mut::<3>(IDX_R).copy_from(&v);
        let mut accel = g;
        if thrust != 0.0 {
            let norm = lam_v.norm();
            if norm < DEGENERATE_PRIMER {
                return Err(DomainError::DegeneratePrimer { norm });
            }
            accel -= lam_v * (thrust / (m * norm));
            dy[IDX_M] = -thrust / self.c_nu;
            dy[IDX_LM] = -norm * thrust / (m * m);
        }
        dy.fixed_rows_mut::<3>(IDX_V).copy_from(&accel);
        dy.fixed_rows_mut::<3>(IDX_LR).copy_from(&(-(gg.transpose() * lam_v)));
        dy.fixed_rows_mut::<3>(IDX_LV).copy_from(&(-lam_r - h.transpose() * lam_v));
        Ok(dy)
    }

    /// Jacobian `A = ∂ẏ/∂y` at thrust level `thrust`.
    pub fn jacobian(&self, y: &StateVector, thrust: f64) -> Result<StateMatrix, DomainError> {
        let r: Vector3<f64> = y.fixed_rows::<3>(IDX_R).into();
        let m = y[IDX_M];
        let lam_v: Vector3<f64> = y.fixed_rows::<3>(IDX_LV).into();
        if !(m > 0.0) {
            return Err(DomainError::Mass(m));
        }
        let gg = self.cr3bp.gravity_gradient(&r)?;
        let t3 = self.cr3bp.gradient_contraction_partial(&r, &lam_v)?;
        let h = coriolis_matrix();

        let mut a = StateMatrix::zeros();
        a.fixed_view_mut::<3, 3>(IDX_R, IDX_V).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(IDX_V, IDX_R).copy_from(&gg);
        a.fixed_view_mut::<3, 3>(IDX_V, IDX_V).copy_from(&h);
        a.fixed_view_mut::<3, 3>(IDX_LR, IDX_R).copy_from(&(-t3));
        a.fixed_view_mut::<3, 3>(IDX_LR, IDX_LV).copy_from(&(-gg.transpose()));
        // ∂(Hᵀλ_v)/∂v vanishes for the CR3BP.
        a.fixed_view_mut::<3, 3>(IDX_LV, IDX_LR).copy_from(&(-Matrix3::identity()));
        a.fixed_view_mut::<3, 3>(IDX_LV, IDX_LV).copy_from(&(-h.transpose()));

        if thrust != 0.0 {
            let norm = lam_v.norm();
            if norm < DEGENERATE_PRIMER {
                return Err(DomainError::DegeneratePrimer { norm });
            }
            let hat = lam_v / norm;
            a.fixed_view_mut::<3, 1>(IDX_V, IDX_M).copy_from(&(hat * (thrust / (m * m))));
            let proj = (Matrix3::identity() - hat * hat.transpose()) * (-thrust / (m * norm));
            a.fixed_view_mut::<3, 3>(IDX_V, IDX_LV).copy_from(&proj);
            a[(IDX_LM, IDX_M)] = 2.0 * norm * thrust / (m * m * m);
            a.fixed_view_mut::<1, 3>(IDX_LM, IDX_LV)
                .copy_from(&(hat.transpose() * (-thrust / (m * m))));
        }
        Ok(a)
    }

    /// `Ṡ = λ̂_vᵀλ̇_v + (ṁλ_m + λ̇_m m)/c`.
    pub fn switching_rate(&self, y: &StateVector, thrust: f64) -> Result<f64, DomainError> {
        let dy = self.eval(y, thrust)?;
        let lam_v: Vector3<f64> = y.fixed_rows::<3>(IDX_LV).into();
        let dlam_v: Vector3<f64> = dy.fixed_rows::<3>(IDX_LV).into();
        let norm = lam_v.norm();
        let primer_rate = if norm > 0.0 { lam_v.dot(&dlam_v) / norm } else { 0.0 };
        Ok(primer_rate + (dy[IDX_M] * y[IDX_LM] + dy[IDX_LM] * y[IDX_M]) / self.c_nu)
    }

    /// `H = λ_rᵀv + λ_vᵀg − S·T/m`.
    pub fn hamiltonian(&self, y: &StateVector, thrust: f64) -> Result<f64, DomainError> {
        let s = CombinedState::from_vector(y);
        let g = self.cr3bp.acceleration(&s.r, &s.v)?;
        let sw = switching_function(&s.lam_v, s.lam_m, s.m, self.c_nu);
        Ok(s.lam_r.dot(&s.v) + s.lam_v.dot(&g) - sw * thrust / s.m)
    }
}

/// `ẏ` for the combined state at thrust level `thrust` (0 or `tmax_nu`).
pub fn combined_vector_field(
    y: &CombinedState,
    thrust: f64,
    sys: &SystemConfig,
    sc: &SpacecraftConfig,
) -> Result<StateVector, DomainError> {
    ExtremalField::new(sys, sc).eval(&y.to_vector(), thrust)
}

/// Hamiltonian with the control eliminated.
pub fn hamiltonian(
    y: &CombinedState,
    thrust: f64,
    sys: &SystemConfig,
    sc: &SpacecraftConfig,
) -> Result<f64, DomainError> {
    ExtremalField::new(sys, sc).hamiltonian(&y.to_vector(), thrust)
}

/// Jacobian `A(t)` of the combined vector field.
pub fn jacobian_a(
    y: &CombinedState,
    thrust: f64,
    sys: &SystemConfig,
    sc: &SpacecraftConfig,
) -> Result<StateMatrix, DomainError> {
    ExtremalField::new(sys, sc).jacobian(&y.to_vector(), thrust)
}
