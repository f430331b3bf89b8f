//! CR3BP system definitions, natural units and the mass-ratio homotopy family.
//!
//! The family is parameterized by a scalar `alpha` in `[0, 1]`: `alpha = 0` is
//! the Jupiter–Europa system and `alpha = 1` is Saturn–Titan. Intermediate
//! systems are artificial: the mass ratio and every natural unit are
//! interpolated linearly between the two endpoints.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Standard gravitational acceleration in m/s².
pub const G0_MPS2: f64 = 9.80665;

/// Mass ratio of the Jupiter–Europa endpoint as used by the homotopy map.
pub const MU_JUPITER_EUROPA: f64 = 2.525e-5;
/// Tabulated Jupiter–Europa mass ratio. Kept as metadata only; the homotopy
/// path is anchored at [`MU_JUPITER_EUROPA`].
pub const MU_JUPITER_EUROPA_TABULATED: f64 = 2.528e-5;
/// Mass ratio of the Saturn–Titan endpoint.
pub const MU_SATURN_TITAN: f64 = 2.366e-4;

pub const JUPITER_EUROPA_UNITS: NaturalUnits = NaturalUnits {
    du_km: 670_900.0,
    tu_s: 48_822.76,
    mu_kg: 1.898e27,
};

pub const SATURN_TITAN_UNITS: NaturalUnits = NaturalUnits {
    du_km: 1_221_870.0,
    tu_s: 219_277.51,
    mu_kg: 5.685e26,
};

/// Distance below which a position is treated as coincident with a primary.
pub const DEFAULT_COLLISION_RADIUS: f64 = 1e-6;

/// Distance, time and mass scales of a CR3BP system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalUnits {
    pub du_km: f64,
    pub tu_s: f64,
    pub mu_kg: f64,
}

impl NaturalUnits {
    pub fn new(du_km: f64, tu_s: f64, mu_kg: f64) -> Result<Self, DomainError> {
        let units = Self { du_km, tu_s, mu_kg };
        units.validate()?;
        Ok(units)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, value) in [("du_km", self.du_km), ("tu_s", self.tu_s), ("mu_kg", self.mu_kg)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(DomainError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    /// One DU/TU expressed in m/s.
    pub fn velocity_unit_mps(&self) -> f64 {
        self.du_km * 1000.0 / self.tu_s
    }

    /// One DU/TU² expressed in m/s².
    pub fn acceleration_unit_mps2(&self) -> f64 {
        self.du_km * 1000.0 / (self.tu_s * self.tu_s)
    }

    /// Converts a duration in TU to days.
    pub fn tu_to_days(&self, tu: f64) -> f64 {
        tu * self.tu_s / 86_400.0
    }

    fn lerp(a: &Self, b: &Self, alpha: f64) -> Self {
        Self {
            du_km: lerp(a.du_km, b.du_km, alpha),
            tu_s: lerp(a.tu_s, b.tu_s, alpha),
            mu_kg: lerp(a.mu_kg, b.mu_kg, alpha),
        }
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Endpoints of the homotopy family. Defaults are the Jupiter–Europa and
/// Saturn–Titan values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemEndpoints {
    pub mu_start: f64,
    pub mu_end: f64,
    pub units_start: NaturalUnits,
    pub units_end: NaturalUnits,
}

impl Default for SystemEndpoints {
    fn default() -> Self {
        Self {
            mu_start: MU_JUPITER_EUROPA,
            mu_end: MU_SATURN_TITAN,
            units_start: JUPITER_EUROPA_UNITS,
            units_end: SATURN_TITAN_UNITS,
        }
    }
}

impl SystemEndpoints {
    pub fn validate(&self) -> Result<(), DomainError> {
        for mu in [self.mu_start, self.mu_end] {
            if !(mu > 0.0 && mu < 0.5) {
                return Err(DomainError::MassRatio(mu));
            }
        }
        self.units_start.validate()?;
        self.units_end.validate()
    }

    /// Builds the system at homotopy parameter `alpha`.
    pub fn interpolate(&self, alpha: f64) -> Result<SystemConfig, DomainError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(DomainError::Alpha(alpha));
        }
        Ok(SystemConfig {
            mass_ratio: lerp(self.mu_start, self.mu_end, alpha),
            units: NaturalUnits::lerp(&self.units_start, &self.units_end, alpha),
            alpha,
        })
    }

    /// Inverse of the linear mass-ratio map.
    pub fn alpha_for_mass_ratio(&self, mu: f64) -> f64 {
        (mu - self.mu_start) / (self.mu_end - self.mu_start)
    }
}

/// A CR3BP system at a point of the homotopy family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub mass_ratio: f64,
    pub units: NaturalUnits,
    pub alpha: f64,
}

/// Jupiter–Europa to Saturn–Titan family at `alpha`.
pub fn interpolate_system(alpha: f64) -> Result<SystemConfig, DomainError> {
    SystemEndpoints::default().interpolate(alpha)
}

impl SystemConfig {
    /// A bare system with the given mass ratio and Jupiter–Europa units,
    /// for experiments that only care about the dynamics.
    pub fn with_mass_ratio(mu: f64) -> Self {
        Self {
            mass_ratio: mu,
            units: JUPITER_EUROPA_UNITS,
            alpha: f64::NAN,
        }
    }

    pub fn primary_position(&self) -> Vector3<f64> {
        Vector3::new(-self.mass_ratio, 0.0, 0.0)
    }

    pub fn secondary_position(&self) -> Vector3<f64> {
        Vector3::new(1.0 - self.mass_ratio, 0.0, 0.0)
    }
}

/// Spacecraft parameters in natural units. Mass is normalized so that the
/// initial mass is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacecraftConfig {
    pub m0_kg: f64,
    pub dry_mass_kg: f64,
    /// Maximum thrust acceleration at unit mass, DU/TU².
    pub tmax_nu: f64,
    /// Exhaust velocity, DU/TU.
    pub c_nu: f64,
    /// Specific impulse in seconds, kept for record-keeping.
    pub isp_s: f64,
}

impl SpacecraftConfig {
    pub fn dry_mass_fraction(&self) -> f64 {
        self.dry_mass_kg / self.m0_kg
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.dry_mass_kg > 0.0 && self.m0_kg > self.dry_mass_kg) {
            return Err(DomainError::Masses {
                m0_kg: self.m0_kg,
                dry_mass_kg: self.dry_mass_kg,
            });
        }
        if !(self.tmax_nu >= 0.0 && self.tmax_nu.is_finite()) {
            return Err(DomainError::NonPositive { name: "tmax_nu", value: self.tmax_nu });
        }
        if !(self.c_nu > 0.0 && self.c_nu.is_finite()) {
            return Err(DomainError::NonPositive { name: "c_nu", value: self.c_nu });
        }
        Ok(())
    }

    /// Spacecraft of the Europa DRO transfer, converted with the
    /// Jupiter–Europa units and held fixed for the whole family.
    pub fn reference() -> Self {
        let sc = SpacecraftSi::default();
        spacecraft_to_nu(sc.m0_kg, sc.isp_s, sc.tmax_n, &JUPITER_EUROPA_UNITS)
            .map(|s| Self { dry_mass_kg: sc.dry_mass_kg, ..s })
            .expect("reference spacecraft constants are valid")
    }

    /// SI values this spacecraft corresponds to in the given system.
    pub fn to_si(&self, units: &NaturalUnits) -> SpacecraftSi {
        let c_si = self.c_nu * units.velocity_unit_mps();
        SpacecraftSi {
            m0_kg: self.m0_kg,
            dry_mass_kg: self.dry_mass_kg,
            isp_s: c_si / G0_MPS2,
            tmax_n: self.tmax_nu * units.acceleration_unit_mps2() * self.m0_kg,
        }
    }
}

/// Spacecraft parameters in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftSi {
    pub m0_kg: f64,
    pub dry_mass_kg: f64,
    pub isp_s: f64,
    pub tmax_n: f64,
}

impl Default for SpacecraftSi {
    fn default() -> Self {
        Self {
            m0_kg: 25_000.0,
            dry_mass_kg: 10_000.0,
            isp_s: 7_365.0,
            tmax_n: 4.735,
        }
    }
}

/// Converts SI spacecraft parameters into natural units of `reference_units`.
/// The dry mass defaults to zero and should be filled in by the caller.
pub fn spacecraft_to_nu(
    m0_kg: f64,
    isp_s: f64,
    tmax_n: f64,
    reference_units: &NaturalUnits,
) -> Result<SpacecraftConfig, DomainError> {
    reference_units.validate()?;
    if !(m0_kg > 0.0) {
        return Err(DomainError::NonPositive { name: "m0_kg", value: m0_kg });
    }
    if !(isp_s > 0.0) {
        return Err(DomainError::NonPositive { name: "isp_s", value: isp_s });
    }
    if !(tmax_n >= 0.0) {
        return Err(DomainError::NonPositive { name: "tmax_n", value: tmax_n });
    }
    let c_si = isp_s * G0_MPS2;
    Ok(SpacecraftConfig {
        m0_kg,
        dry_mass_kg: 0.0,
        tmax_nu: (tmax_n / m0_kg) / reference_units.acceleration_unit_mps2(),
        c_nu: c_si / reference_units.velocity_unit_mps(),
        isp_s,
    })
}

/// Distances from `r` to the primary and secondary.
#[inline]
pub fn primary_distances(r: &Vector3<f64>, mu: f64) -> (f64, f64) {
    let rho1 = ((r.x + mu).powi(2) + r.y * r.y + r.z * r.z).sqrt();
    let rho2 = ((r.x - 1.0 + mu).powi(2) + r.y * r.y + r.z * r.z).sqrt();
    (rho1, rho2)
}

/// Jacobi constant `C = x² + y² + 2(1-μ)/ρ₁ + 2μ/ρ₂ - |v|²`.
pub fn jacobi_constant(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    mu: f64,
    collision_radius: f64,
) -> Result<f64, DomainError> {
    let (rho1, rho2) = primary_distances(r, mu);
    // A massless secondary (μ = 0) imposes no collision constraint.
    if rho1 < collision_radius || (mu > 0.0 && rho2 < collision_radius) {
        return Err(DomainError::Singularity { rho1, rho2 });
    }
    let secondary = if mu > 0.0 { 2.0 * mu / rho2 } else { 0.0 };
    Ok(r.x * r.x + r.y * r.y + 2.0 * (1.0 - mu) / rho1 + secondary - v.norm_squared())
}
