//! Feasibility filtering, Δv conversion, Pareto fronts, hypervolume and
//! trace summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CostateSample;
use crate::mcmc::IterationTrace;
use crate::systems::{NaturalUnits, SpacecraftConfig};

pub const DEFAULT_FEASIBILITY_TOL: f64 = 5e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("final mass fraction must lie in (0, 1], got {0}")]
    MassFraction(f64),
    #[error("invalid hypervolume bounds: {0}")]
    Bounds(String),
}

/// Records with constraint violation strictly below `tol`.
pub fn feasible_filter(records: &[CostateSample], tol: f64) -> Vec<CostateSample> {
    records.iter().filter(|r| r.e < tol).copied().collect()
}

/// Ideal rocket equation, `c·ln(1/m_f)`, with `c` in m/s.
pub fn delta_v(m_final_frac: f64, c_mps: f64) -> Result<f64, AnalysisError> {
    if !(m_final_frac > 0.0 && m_final_frac <= 1.0) {
        return Err(AnalysisError::MassFraction(m_final_frac));
    }
    Ok(c_mps * (1.0 / m_final_frac).ln())
}

/// Δv for an exhaust velocity given in natural units of `units`.
pub fn delta_v_nu(m_final_frac: f64, c_nu: f64, units: &NaturalUnits) -> Result<f64, AnalysisError> {
    delta_v(m_final_frac, c_nu * units.velocity_unit_mps())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub dv_mps: f64,
    pub tof_days: f64,
    pub source_id: usize,
}

/// Convert a dataset record to (Δv, time of flight) in its own system's
/// units. `units_for` supplies the natural units at the record's α.
pub fn objective_point(
    r: &CostateSample,
    source_id: usize,
    sc: &SpacecraftConfig,
    units: &NaturalUnits,
) -> Result<ObjectivePoint, AnalysisError> {
    Ok(ObjectivePoint {
        dv_mps: delta_v_nu(1.0 - r.dm_frac, sc.c_nu, units)?,
        tof_days: units.tu_to_days(r.tau_s_star),
        source_id,
    })
}

fn dominates(a: &ObjectivePoint, b: &ObjectivePoint) -> bool {
    a.dv_mps <= b.dv_mps && a.tof_days <= b.tof_days && (a.dv_mps < b.dv_mps || a.tof_days < b.tof_days)
}

/// Non-dominated subset under minimization of both objectives, in input
/// order. Duplicated points are all kept.
pub fn pareto_front(points: &[ObjectivePoint]) -> Vec<ObjectivePoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .dv_mps
            .total_cmp(&points[b].dv_mps)
            .then(points[a].tof_days.total_cmp(&points[b].tof_days))
    });
    // Sweep by increasing Δv; a point survives if its time of flight beats
    // every point with strictly smaller Δv, or ties the best one exactly.
    let mut keep = vec![false; points.len()];
    let mut best_tof = f64::INFINITY;
    let mut best_dv = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let dv = points[order[i]].dv_mps;
        let group_end = (i..order.len()).find(|&k| points[order[k]].dv_mps != dv).unwrap_or(order.len());
        let group_min = points[order[i]].tof_days;
        for &k in &order[i..group_end] {
            let p = &points[k];
            let beaten_before = p.tof_days > best_tof || (p.tof_days == best_tof && best_dv < dv);
            if !beaten_before && p.tof_days == group_min {
                keep[k] = true;
            }
        }
        if group_min < best_tof {
            best_tof = group_min;
            best_dv = dv;
        }
        i = group_end;
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

/// O(n²) domination check.
pub fn pareto_front_brute_force(points: &[ObjectivePoint]) -> Vec<ObjectivePoint> {
    points.iter().filter(|p| !points.iter().any(|q| dominates(q, p))).copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypervolumeConfig {
    pub tof_bounds_days: (f64, f64),
    pub dv_bounds_mps: (f64, f64),
    /// Reference point in normalized (Δv, tof) space.
    pub reference: (f64, f64),
}

impl Default for HypervolumeConfig {
    fn default() -> Self {
        Self {
            tof_bounds_days: (124.08, 228.41),
            dv_bounds_mps: (173.68, 193.67),
            reference: (1.0, 1.0),
        }
    }
}

impl HypervolumeConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ok(self.tof_bounds_days) || !ok(self.dv_bounds_mps) {
            return Err(AnalysisError::Bounds("each axis needs finite lower < upper".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypervolume {
    pub value: f64,
    /// Points that fell outside the bounds and were clipped to the unit box.
    pub clipped: usize,
    pub front_size: usize,
}

/// Exact 2-D dominated area of normalized points against `reference`.
/// Input need not be non-dominated.
pub fn hypervolume_normalized(points: &[(f64, f64)], reference: (f64, f64)) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, y)| x < reference.0 && y < reference.1)
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut y_prev = reference.1;
    for (x, y) in pts {
        if y < y_prev {
            area += (reference.0 - x) * (y_prev - y);
            y_prev = y;
        }
    }
    area
}

/// Hypervolume of the non-dominated subset of `points` after normalizing by
/// the configured bounds.
pub fn hypervolume(points: &[ObjectivePoint], cfg: &HypervolumeConfig) -> Result<Hypervolume, AnalysisError> {
    cfg.validate()?;
    let front = pareto_front(points);
    let norm = |v: f64, (lo, hi): (f64, f64)| (v - lo) / (hi - lo);
    let mut clipped = 0;
    let normalized: Vec<(f64, f64)> = front
        .iter()
        .map(|p| {
            let x = norm(p.dv_mps, cfg.dv_bounds_mps);
            let y = norm(p.tof_days, cfg.tof_bounds_days);
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                clipped += 1;
            }
            (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))
        })
        .collect();
    Ok(Hypervolume {
        value: hypervolume_normalized(&normalized, cfg.reference),
        clipped,
        front_size: front.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub iterations: usize,
    pub mean_j: f64,
    pub min_j: f64,
    pub mean_e: f64,
    pub mean_dm: f64,
    pub mean_tau_s: f64,
    pub acceptance: f64,
}

/// Per-stage averages of the iteration traces, in stage order of first
/// appearance.
pub fn summarize_traces(traces: &[IterationTrace]) -> Vec<StageSummary> {
    let mut out: Vec<StageSummary> = Vec::new();
    for t in traces {
        let idx = match out.iter().position(|s| s.stage == t.stage) {
            Some(i) => i,
            None => {
                out.push(StageSummary {
                    stage: t.stage,
                    iterations: 0,
                    mean_j: 0.0,
                    min_j: f64::INFINITY,
                    mean_e: 0.0,
                    mean_dm: 0.0,
                    mean_tau_s: 0.0,
                    acceptance: 0.0,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.iterations += 1;
        s.mean_j += t.mean.j;
        s.min_j = s.min_j.min(t.mean.j);
        s.mean_e += t.mean.e;
        s.mean_dm += t.mean.dm;
        s.mean_tau_s += t.mean.tau_s;
        s.acceptance += t.acceptance;
    }
    for s in &mut out {
        let n = s.iterations as f64;
        s.mean_j /= n;
        s.mean_e /= n;
        s.mean_dm /= n;
        s.mean_tau_s /= n;
        s.acceptance /= n;
    }
    out
}
