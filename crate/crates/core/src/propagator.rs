//! Adaptive propagation of the combined state with switch detection, plus
//! the state transition matrix chained through the switch maps.
//!
//! Steps are clamped so that the integrator lands exactly on a uniform time
//! grid `t_j = j·max_step`. Those grid nodes (together with `t = 0` and
//! `t_max`) are the shooting-time candidates used by screening. Because the
//! grid does not depend on the costate, a given candidate time is available
//! on every trajectory.

use std::io::Write;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    CombinedState, ExtremalField, StateMatrix, StateVector, DEGENERATE_PRIMER, IDX_LM, IDX_LV, IDX_M,
};
use crate::error::{DomainError, PropagationError};
use crate::integrator::{attempt_step, initial_step, next_step_size, StepAttempt, Tolerances};
use crate::systems::{SpacecraftConfig, SystemConfig, DEFAULT_COLLISION_RADIUS};

/// `|Ṡ|` below which a located zero of `S` is treated as a singular arc.
pub const SINGULAR_RATE_TOL: f64 = 1e-10;
/// Smallest admissible `|Ṡ|` in the switch map denominator.
pub const GRAZING_TOL: f64 = 1e-8;

const STATE_DIM: usize = 14;
const STM_DIM: usize = STATE_DIM + STATE_DIM * STATE_DIM;
type StmVector = SVector<f64, STM_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagatorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Step cap and spacing of the candidate grid, in TU.
    pub max_step_nu: f64,
    /// Required `|S|` at a located switch.
    pub switch_tol: f64,
    pub collision_radius: f64,
    /// Record a node at every accepted step, not only at grid points and switches.
    pub dense_output: bool,
    /// Keep the within-arc STM at every node (needed for mid-trajectory queries).
    pub node_stm: bool,
}

impl Default for PropagatorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step_nu: 1e-2,
            switch_tol: 1e-13,
            collision_radius: DEFAULT_COLLISION_RADIUS,
            dense_output: true,
            node_stm: false,
        }
    }
}

impl PropagatorOptions {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step_nu", self.max_step_nu),
            ("switch_tol", self.switch_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PropagationError::Options(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.collision_radius >= 0.0) {
            return Err(PropagationError::Options(format!(
                "collision_radius must be nonnegative, got {}",
                self.collision_radius
            )));
        }
        Ok(())
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            controlled: STATE_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Start,
    Grid,
    Step,
    Switch,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryNode {
    pub t: f64,
    pub y: StateVector,
    /// Throttle of the arc that continues from this node.
    pub thrust_on: bool,
    pub kind: NodeKind,
    /// Lies on the fixed candidate grid.
    pub candidate: bool,
    pub arc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSpan {
    pub t_start: f64,
    pub t_end: f64,
    pub thrust_on: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedTrajectory {
    pub nodes: Vec<TrajectoryNode>,
    pub switch_times: Vec<f64>,
    pub arcs: Vec<ArcSpan>,
}

impl PropagatedTrajectory {
    pub fn final_node(&self) -> &TrajectoryNode {
        self.nodes.last().expect("a trajectory always has its start node")
    }

    pub fn candidates(&self) -> impl Iterator<Item = (usize, &TrajectoryNode)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.candidate)
    }

    pub fn switch_count(&self) -> usize {
        self.switch_times.len()
    }

    /// Index of the node recorded at exactly `tau` (up to rounding of the grid).
    pub fn node_at(&self, tau: f64) -> Option<usize> {
        let slack = 1e-12 * tau.abs().max(1.0);
        let i = self.nodes.partition_point(|n| n.t < tau - slack);
        (i < self.nodes.len() && (self.nodes[i].t - tau).abs() <= slack).then_some(i)
    }

    /// Columnar dump: t, r(3), v(3), m, λ(7), S, thrust_on.
    pub fn write_dump<W: Write>(&self, field: &ExtremalField, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "r1", "r2", "r3", "v1", "v2", "v3", "m", "lam_r1", "lam_r2", "lam_r3", "lam_v1", "lam_v2", "lam_v3",
            "lam_m", "S", "thrust_on",
        ])?;
        for n in &self.nodes {
            let mut row: Vec<String> = Vec::with_capacity(17);
            row.push(n.t.to_string());
            row.extend(n.y.iter().map(|x| x.to_string()));
            row.push(field.switching(&n.y).to_string());
            row.push(u8::from(n.thrust_on).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-arc STM blocks and switch maps whose ordered product is `∂y(t_f)/∂y(t_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StmChain {
    pub phi_blocks: Vec<StateMatrix>,
    pub psi_maps: Vec<StateMatrix>,
    /// Product from `t_0` to the start of each arc (after the switch map).
    pub arc_start_products: Vec<StateMatrix>,
    pub total: StateMatrix,
    /// Within-arc STM at every node, when requested.
    pub node_phi: Option<Vec<StateMatrix>>,
}

impl StmChain {
    /// Ordered product with or without the switch maps. Dropping them is
    /// only useful as an ablation.
    pub fn product(&self, include_switch_maps: bool) -> StateMatrix {
        let mut acc = StateMatrix::identity();
        for (i, phi) in self.phi_blocks.iter().enumerate() {
            acc = phi * acc;
            if include_switch_maps {
                if let Some(psi) = self.psi_maps.get(i) {
                    acc = psi * acc;
                }
            }
        }
        acc
    }
}

/// Terminal sensitivities with respect to the initial `(λ_r, λ_v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivities {
    /// Error sensitivity, `−∂(r, v)/∂(λ_r, λ_v)`.
    pub g1: SMatrix<f64, 6, 6>,
    /// Mass sensitivity, `−∂m/∂(λ_r, λ_v)`.
    pub g2: SMatrix<f64, 1, 6>,
}

pub fn sensitivities_from(total: &StateMatrix) -> Sensitivities {
    Sensitivities {
        g1: -total.fixed_view::<6, 6>(0, 7).into_owned(),
        g2: -total.fixed_view::<1, 6>(6, 7).into_owned(),
    }
}

pub fn extract_sensitivities(chain: &StmChain) -> Sensitivities {
    sensitivities_from(&chain.total)
}

/// Switch map for a located switch state, given both throttle levels.
pub fn switch_map(
    field: &ExtremalField,
    y: &StateVector,
    thrust_before: f64,
    thrust_after: f64,
    index: usize,
    t: f64,
) -> Result<StateMatrix, PropagationError> {
    if thrust_before == thrust_after {
        return Ok(StateMatrix::identity());
    }
    let wrap = |source: DomainError| PropagationError::Dynamics { t, source };
    let f_minus = field.eval(y, thrust_before).map_err(wrap)?;
    let f_plus = field.eval(y, thrust_after).map_err(wrap)?;

    let lam_v = y.fixed_rows::<3>(IDX_LV);
    let norm = lam_v.norm();
    if norm < DEGENERATE_PRIMER {
        return Err(wrap(DomainError::DegeneratePrimer { norm }));
    }
    let mut ds_dy = SMatrix::<f64, 1, 14>::zeros();
    ds_dy[IDX_M] = y[IDX_LM] / field.c_nu;
    for k in 0..3 {
        ds_dy[IDX_LV + k] = lam_v[k] / norm;
    }
    ds_dy[IDX_LM] = y[IDX_M] / field.c_nu;

    let denominator = (ds_dy * f_minus)[0];
    if !(denominator.abs() >= GRAZING_TOL) {
        return Err(PropagationError::GrazingSwitch { index, t, denominator });
    }
    Ok(StateMatrix::identity() + (f_plus - f_minus) * ds_dy / denominator)
}

/// Switch map for a pre-switch state and `ΔT = T₋ − T₊` (positive for
/// thrust to coast).
pub fn discontinuity_map(
    y_minus: &CombinedState,
    delta_t: f64,
    sys: &SystemConfig,
    sc: &SpacecraftConfig,
) -> Result<StateMatrix, PropagationError> {
    let field = ExtremalField::new(sys, sc);
    let (before, after) = if delta_t >= 0.0 { (delta_t, 0.0) } else { (0.0, -delta_t) };
    switch_map(&field, &y_minus.to_vector(), before, after, 0, 0.0)
}

/// Propagator bound to one system and spacecraft.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator {
    pub field: ExtremalField,
    pub opts: PropagatorOptions,
}

fn head<const N: usize>(y: &SVector<f64, N>) -> StateVector {
    y.fixed_rows::<STATE_DIM>(0).into_owned()
}

fn stm_rhs(field: &ExtremalField, y: &StmVector, thrust: f64) -> Result<StmVector, DomainError> {
    let state = head(y);
    let dy = field.eval(&state, thrust)?;
    let a = field.jacobian(&state, thrust)?;
    let phi = StateMatrix::from_column_slice(&y.as_slice()[STATE_DIM..]);
    let dphi = a * phi;
    let mut out = StmVector::zeros();
    out.fixed_rows_mut::<STATE_DIM>(0).copy_from(&dy);
    out.as_mut_slice()[STATE_DIM..].copy_from_slice(dphi.as_slice());
    Ok(out)
}

fn with_identity_stm(y: &StateVector) -> StmVector {
    let mut out = StmVector::zeros();
    out.fixed_rows_mut::<STATE_DIM>(0).copy_from(y);
    out.as_mut_slice()[STATE_DIM..].copy_from_slice(StateMatrix::identity().as_slice());
    out
}

fn stm_part(y: &StmVector) -> StateMatrix {
    StateMatrix::from_column_slice(&y.as_slice()[STATE_DIM..])
}

impl Propagator {
    pub fn new(sys: &SystemConfig, sc: &SpacecraftConfig, opts: PropagatorOptions) -> Self {
        Self {
            field: ExtremalField::new(sys, sc).with_collision_radius(opts.collision_radius),
            opts,
        }
    }

    pub fn run(&self, y0: &StateVector, t_max: f64) -> Result<PropagatedTrajectory, PropagationError> {
        let field = self.field;
        self.drive(
            *y0,
            t_max,
            |y: &StateVector, thrust| field.eval(y, thrust),
            |_, _, y, _| Ok(*y),
            |_| {},
        )
        .map(|out| out.traj)
    }

    pub fn run_with_stm(
        &self,
        y0: &StateVector,
        t_max: f64,
    ) -> Result<(PropagatedTrajectory, StmChain), PropagationError> {
        let field = self.field;
        let mut phi_blocks = Vec::new();
        let mut psi_maps = Vec::new();
        let mut arc_start_products = vec![StateMatrix::identity()];
        let mut node_phi = self.opts.node_stm.then(Vec::new);

        let traj = self.drive(
            with_identity_stm(y0),
            t_max,
            |y: &StmVector, thrust| stm_rhs(&field, y, thrust),
            |index, t, y, thrust_on| {
                let state = head(y);
                let phi = stm_part(y);
                let before = field.thrust(thrust_on);
                let after = field.thrust(!thrust_on);
                let psi = switch_map(&field, &state, before, after, index, t)?;
                let start = arc_start_products.last().copied().unwrap_or_else(StateMatrix::identity);
                arc_start_products.push(psi * (phi * start));
                phi_blocks.push(phi);
                psi_maps.push(psi);
                Ok(with_identity_stm(&state))
            },
            |y| {
                if let Some(v) = node_phi.as_mut() {
                    v.push(stm_part(y));
                }
            },
        );
        let DriveOutput { traj, last } = traj?;
        let last_phi = stm_part(&last);
        let start = *arc_start_products.last().expect("at least one arc");
        phi_blocks.push(last_phi);
        let total = last_phi * start;
        Ok((
            traj,
            StmChain {
                phi_blocks,
                psi_maps,
                arc_start_products,
                total,
                node_phi,
            },
        ))
    }

    /// Shared adaptive loop. `on_switch` receives the located switch state and
    /// the throttle of the arc that just ended, and returns the state the next
    /// arc starts from. `on_node` sees every recorded node.
    fn drive<const N: usize, R, S, K>(
        &self,
        y0: SVector<f64, N>,
        t_max: f64,
        rhs: R,
        mut on_switch: S,
        mut on_node: K,
    ) -> Result<DriveOutput<N>, PropagationError>
    where
        R: Fn(&SVector<f64, N>, f64) -> Result<SVector<f64, N>, DomainError>,
        S: FnMut(usize, f64, &SVector<f64, N>, bool) -> Result<SVector<f64, N>, PropagationError>,
        K: FnMut(&SVector<f64, N>),
    {
        self.opts.validate()?;
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(PropagationError::Options(format!("t_max must be nonnegative, got {t_max}")));
        }
        let field = &self.field;
        let tol = self.opts.tolerances();
        let dt = self.opts.max_step_nu;
        let sw = |y: &SVector<f64, N>| field.switching(&head(y));
        let wrap = |t: f64| move |source: DomainError| PropagationError::Dynamics { t, source };

        let mut t = 0.0;
        let mut y = y0;
        let mut thrust_on = sw(&y) > 0.0;
        let mut thrust = field.thrust(thrust_on);

        let mut nodes = Vec::new();
        let mut arcs = Vec::new();
        let mut switch_times = Vec::new();
        let mut arc_start = 0.0;
        let mut push_node = |nodes: &mut Vec<TrajectoryNode>, t, y: &SVector<f64, N>, thrust_on, kind, arc| {
            nodes.push(TrajectoryNode {
                t,
                y: head(y),
                thrust_on,
                kind,
                candidate: matches!(kind, NodeKind::Start | NodeKind::Grid | NodeKind::End),
                arc,
            });
            on_node(y);
        };
        push_node(&mut nodes, t, &y, thrust_on, NodeKind::Start, 0);

        let finish = |y: &SVector<f64, N>, nodes, mut arcs: Vec<ArcSpan>, switch_times, arc_start, thrust_on| {
            arcs.push(ArcSpan {
                t_start: arc_start,
                t_end: t_max,
                thrust_on,
            });
            DriveOutput {
                traj: PropagatedTrajectory {
                    nodes,
                    switch_times,
                    arcs,
                },
                last: *y,
            }
        };
        if t_max == 0.0 {
            return Ok(finish(&y, nodes, arcs, switch_times, arc_start, thrust_on));
        }

        let mut k1 = rhs(&y, thrust).map_err(wrap(t))?;
        let mut h = initial_step(&|z: &SVector<f64, N>| rhs(z, thrust), &y, &k1, &tol, dt).map_err(wrap(t))?;
        let mut grid_index: u64 = 0;

        loop {
            let next_grid = (grid_index + 1) as f64 * dt;
            let (target, target_kind) = if next_grid >= t_max - 1e-9 * dt {
                (t_max, NodeKind::End)
            } else {
                (next_grid, NodeKind::Grid)
            };
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(PropagationError::StepUnderflow { t, h });
            }
            let remaining = target - t;
            let (h_try, clamped) = if h >= remaining { (remaining, true) } else { (h, false) };
            let f = |z: &SVector<f64, N>| rhs(z, thrust);
            let step = attempt_step(&f, &y, &k1, h_try, &tol).map_err(wrap(t))?;
            if !step.error.is_finite() || step.y1.iter().any(|x| !x.is_finite()) {
                return Err(PropagationError::NonFinite { t: t + h_try });
            }
            if !step.accepted() {
                h = next_step_size(h_try, step.error, false);
                continue;
            }

            let s_end = sw(&step.y1);
            let crossed = if thrust_on { s_end <= 0.0 } else { s_end >= 0.0 };
            if crossed {
                let h_root = self.locate_switch(&f, &step, &tol, thrust_on, t, &sw)?;
                let hit_end = h_root == h_try;
                let located = if hit_end {
                    step.y1
                } else {
                    attempt_step(&f, &y, &k1, h_root, &tol).map_err(wrap(t))?.y1
                };
                let t_star = if hit_end && clamped { target } else { t + h_root };
                let state = head(&located);
                let s_star = field.switching(&state);
                let s_dot = field.switching_rate(&state, thrust).map_err(wrap(t_star))?;
                if s_star.abs() < self.opts.switch_tol && s_dot.abs() < SINGULAR_RATE_TOL {
                    return Err(PropagationError::SingularArc {
                        t: t_star,
                        s: s_star,
                        s_dot,
                    });
                }
                let index = switch_times.len();
                y = on_switch(index, t_star, &located, thrust_on)?;
                arcs.push(ArcSpan {
                    t_start: arc_start,
                    t_end: t_star,
                    thrust_on,
                });
                switch_times.push(t_star);
                arc_start = t_star;
                thrust_on = !thrust_on;
                thrust = field.thrust(thrust_on);
                t = t_star;
                k1 = rhs(&y, thrust).map_err(wrap(t))?;
                let on_grid = hit_end && clamped;
                let kind = if on_grid { target_kind } else { NodeKind::Switch };
                push_node(&mut nodes, t, &y, thrust_on, kind, arcs.len());
                if on_grid {
                    grid_index += 1;
                    if target_kind == NodeKind::End {
                        break;
                    }
                }
                continue;
            }

            t = if clamped { target } else { t + h_try };
            y = step.y1;
            k1 = *step.k_last();
            let proposed = next_step_size(h_try, step.error, true);
            h = if clamped { proposed.max(h) } else { proposed };
            if clamped {
                push_node(&mut nodes, t, &y, thrust_on, target_kind, arcs.len());
                grid_index += 1;
                if target_kind == NodeKind::End {
                    break;
                }
            } else if self.opts.dense_output {
                push_node(&mut nodes, t, &y, thrust_on, NodeKind::Step, arcs.len());
            }
        }
        Ok(finish(&y, nodes, arcs, switch_times, arc_start, thrust_on))
    }

    /// Find the step length from the start of `step` at which `S` crosses
    /// zero. Each trial length is a fresh RK step from the step start, so
    /// the located state is as accurate as any accepted node.
    fn locate_switch<const N: usize, F, W>(
        &self,
        f: &F,
        step: &StepAttempt<N>,
        tol: &Tolerances,
        thrust_on: bool,
        t: f64,
        sw: &W,
    ) -> Result<f64, PropagationError>
    where
        F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>, DomainError>,
        W: Fn(&SVector<f64, N>) -> f64,
    {
        let side = if thrust_on { 1.0 } else { -1.0 };
        let switch_tol = self.opts.switch_tol;
        let h = step.h;
        let g_end = side * sw(&step.y1);
        if g_end.abs() <= switch_tol {
            return Ok(h);
        }
        let g_start = side * sw(&step.y0);
        if g_start <= 0.0 {
            // Started on the far side (right after a switch) and never
            // crossed back: the switching function only touched zero.
            let s_dot = self
                .field
                .switching_rate(&head(&step.y0), self.field.thrust(thrust_on))
                .unwrap_or(f64::NAN);
            return Err(PropagationError::SingularArc { t, s: side * g_start, s_dot });
        }

        // Initial guess from the dense output.
        let dense = step.dense();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if side * sw(&dense.eval(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        let eval = |x: f64| -> Result<f64, PropagationError> {
            let s = attempt_step(f, &step.y0, &step.k[0], x, tol)
                .map_err(|source| PropagationError::Dynamics { t: t + x, source })?;
            Ok(side * sw(&s.y1))
        };

        let (mut a, mut fa) = (0.0, g_start);
        let (mut b, mut fb) = (h, g_end);
        let mut x = (0.5 * (lo + hi) * h).clamp(0.0, h);
        let mut last_side = 0i8;
        for _ in 0..200 {
            if !(x > a && x < b) {
                x = 0.5 * (a + b);
            }
            let gx = eval(x)?;
            if gx.abs() <= switch_tol {
                return Ok(x);
            }
            if gx > 0.0 {
                a = x;
                fa = gx;
                if last_side == 1 {
                    fb *= 0.5;
                }
                last_side = 1;
            } else {
                b = x;
                fb = gx;
                if last_side == -1 {
                    fa *= 0.5;
                }
                last_side = -1;
            }
            if b - a <= 4.0 * f64::EPSILON * (t + b).abs().max(h) {
                break;
            }
            x = a - fa * (b - a) / (fb - fa);
        }
        Ok(b)
    }
}

struct DriveOutput<const N: usize> {
    traj: PropagatedTrajectory,
    last: SVector<f64, N>,
}

/// Propagate `y0` for `t_max` TU.
pub fn propagate(
    y0: &CombinedState,
    t_max: f64,
    sys: &SystemConfig,
    sc: &SpacecraftConfig,
    opts: &PropagatorOptions,
) -> Result<PropagatedTrajectory, PropagationError> {
    Propagator::new(sys, sc, *opts).run(&y0.to_vector(), t_max)
}

/// Propagate `y0` together with its STM.
pub fn propagate_with_stm(
    y0: &CombinedState,
    t_max: f64,
    sys: &SystemConfig,
    sc: &SpacecraftConfig,
    opts: &PropagatorOptions,
) -> Result<(PropagatedTrajectory, StmChain), PropagationError> {
    Propagator::new(sys, sc, *opts).run_with_stm(&y0.to_vector(), t_max)
}

/// Node state at `tau` and the STM from `t_0` to that node.
pub fn query_state_and_sensitivity_at(
    chain: &StmChain,
    traj: &PropagatedTrajectory,
    tau: f64,
) -> Result<(CombinedState, StateMatrix), PropagationError> {
    let index = traj.node_at(tau).ok_or(PropagationError::NotANode { tau })?;
    let node = &traj.nodes[index];
    let state = CombinedState::from_vector(&node.y);
    if index == 0 {
        return Ok((state, StateMatrix::identity()));
    }
    if index == traj.nodes.len() - 1 {
        return Ok((state, chain.total));
    }
    let phis = chain.node_phi.as_ref().ok_or(PropagationError::NoCheckpoints)?;
    Ok((state, phis[index] * chain.arc_start_products[node.arc]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Cr3bp, IDX_V};
    use crate::systems::jacobi_constant;
    use nalgebra::Vector3;

    fn field(mu: f64) -> ExtremalField {
        ExtremalField {
            cr3bp: Cr3bp::new(mu),
            c_nu: 5.256,
            tmax_nu: 0.05,
        }
    }

    fn prop(mu: f64) -> Propagator {
        Propagator {
            field: field(mu),
            opts: PropagatorOptions::default(),
        }
    }

    fn coast_state(r: Vector3<f64>, v: Vector3<f64>) -> StateVector {
        CombinedState {
            r,
            v,
            m: 1.0,
            lam_r: Vector3::zeros(),
            lam_v: Vector3::new(0.0, 0.01, 0.0),
            lam_m: -1.0,
        }
        .to_vector()
    }

    // A costate whose primer rotates with period ~2π in the rotating frame,
    // giving a regular thrust/coast pattern.
    fn switching_state() -> StateVector {
        CombinedState {
            r: Vector3::new(1.05, 0.0, 0.0),
            v: Vector3::new(0.0, -0.15, 0.0),
            m: 1.0,
            lam_r: Vector3::new(0.02, 0.01, 0.0),
            lam_v: Vector3::new(0.19, 0.02, 0.0),
            lam_m: -1.0,
        }
        .to_vector()
    }

    #[test]
    fn circular_orbit_returns_in_two_body_limit() {
        // With μ = 0 the unit circular orbit is fixed in the rotating frame.
        let y0 = coast_state(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let traj = prop(0.0).run(&y0, 2.0 * std::f64::consts::PI).unwrap();
        let yf = traj.final_node().y;
        assert!((yf.fixed_rows::<6>(0) - y0.fixed_rows::<6>(0)).norm() < 1e-9);
    }

    #[test]
    fn zero_duration_is_identity() {
        let y0 = switching_state();
        let (traj, chain) = prop(0.01).run_with_stm(&y0, 0.0).unwrap();
        assert_eq!(traj.nodes.len(), 1);
        assert_eq!(chain.total, StateMatrix::identity());
        let s = extract_sensitivities(&chain);
        assert_eq!(s.g1.norm(), 0.0);
        assert_eq!(s.g2.norm(), 0.0);
    }

    #[test]
    fn coast_conserves_jacobi() {
        let mu = 2.525e-5;
        let y0 = coast_state(Vector3::new(1.0752, 0.0, 0.0), Vector3::new(0.0, -0.1499, 0.0));
        let traj = prop(mu).run(&y0, 10.0).unwrap();
        assert_eq!(traj.switch_count(), 0);
        let c0 = jacobi_constant(&Vector3::new(1.0752, 0.0, 0.0), &Vector3::new(0.0, -0.1499, 0.0), mu, 1e-6).unwrap();
        for n in &traj.nodes {
            let s = CombinedState::from_vector(&n.y);
            let c = jacobi_constant(&s.r, &s.v, mu, 1e-6).unwrap();
            assert!((c - c0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_nodes_land_exactly() {
        let p = prop(0.01);
        let traj = p.run(&switching_state(), 1.0).unwrap();
        let grid: Vec<f64> = traj.candidates().map(|(_, n)| n.t).collect();
        assert_eq!(grid.len(), 101);
        for (j, t) in grid.iter().enumerate().take(100) {
            assert_eq!(*t, j as f64 * 0.01);
        }
        assert_eq!(*grid.last().unwrap(), 1.0);
    }

    #[test]
    fn switches_are_located_and_arcs_are_consistent() {
        let p = prop(0.01);
        let traj = p.run(&switching_state(), 12.0).unwrap();
        assert!(traj.switch_count() >= 2, "{} switches", traj.switch_count());
        for w in traj.nodes.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(w[1].y[IDX_M] <= w[0].y[IDX_M]);
        }
        for n in &traj.nodes {
            let s = p.field.switching(&n.y);
            if n.kind == NodeKind::Switch {
                assert!(s.abs() <= 1e-13, "S = {s:e}");
            } else if n.kind != NodeKind::Start {
                assert_eq!(s > 0.0, n.thrust_on, "t = {}, S = {s:e}", n.t);
            }
        }
        assert_eq!(traj.arcs.len(), traj.switch_count() + 1);
    }

    #[test]
    fn stm_run_shares_the_node_sequence() {
        let p = prop(0.01);
        let plain = p.run(&switching_state(), 8.0).unwrap();
        let (with_stm, chain) = p.run_with_stm(&switching_state(), 8.0).unwrap();
        assert_eq!(plain, with_stm);
        assert_eq!(chain.phi_blocks.len(), plain.arcs.len());
        assert_eq!(chain.psi_maps.len(), plain.switch_count());
        let diff = (chain.product(true) - chain.total).abs().max();
        assert!(diff < 1e-9 * chain.total.abs().max());
    }

    #[test]
    fn deterministic() {
        let p = prop(0.01);
        let a = p.run(&switching_state(), 5.0).unwrap();
        let b = p.run(&switching_state(), 5.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shorter_horizon_is_a_prefix() {
        let p = prop(0.01);
        let long = p.run(&switching_state(), 6.0).unwrap();
        let short = p.run(&switching_state(), 3.0).unwrap();
        let i = long.node_at(3.0).unwrap();
        assert_eq!(&long.nodes[..=i].iter().map(|n| (n.t, n.y)).collect::<Vec<_>>()[..], &short
            .nodes
            .iter()
            .map(|n| (n.t, n.y))
            .collect::<Vec<_>>()[..]);
    }

    #[test]
    fn switch_map_identity_without_thrust_change() {
        let f = field(0.01);
        let psi = switch_map(&f, &switching_state(), 0.0, 0.0, 0, 0.0).unwrap();
        assert_eq!(psi, StateMatrix::identity());
    }

    #[test]
    fn switch_map_matches_block_form() {
        // Block form: only the v, m and λ_m rows pick up a correction, each
        // proportional to ΔT and to ∂S/∂y over the pre-switch rate of S.
        let f = field(0.01);
        let y = switching_state();
        let s = CombinedState::from_vector(&y);
        let tmax = f.tmax_nu;
        for (before, after) in [(tmax, 0.0), (0.0, tmax)] {
            let delta = before - after;
            let psi = switch_map(&f, &y, before, after, 0, 0.0).unwrap();
            let lam_hat = s.lam_v / s.lam_v.norm();
            let dlam_v = -s.lam_r - crate::dynamics::coriolis_matrix().transpose() * s.lam_v;
            let mdot = -before / f.c_nu;
            let lmdot = -s.lam_v.norm() * before / (s.m * s.m);
            let sdot = lam_hat.dot(&dlam_v) + (mdot * s.lam_m + lmdot * s.m) / f.c_nu;
            let mut row = SMatrix::<f64, 1, 14>::zeros();
            row[IDX_M] = s.lam_m / f.c_nu;
            for k in 0..3 {
                row[IDX_LV + k] = lam_hat[k];
            }
            row[IDX_LM] = s.m / f.c_nu;
            let mut col = StateVector::zeros();
            for k in 0..3 {
                col[IDX_V + k] = lam_hat[k] * delta / s.m;
            }
            col[IDX_M] = delta / f.c_nu;
            col[IDX_LM] = s.lam_v.norm() * delta / (s.m * s.m);
            let expected = StateMatrix::identity() + col * row / sdot;
            assert!((psi - expected).abs().max() < 1e-12 * expected.abs().max());
        }
    }

    #[test]
    fn grazing_switch_is_rejected() {
        let f = field(0.01);
        // λ̇_v = −λ_r − Hᵀλ_v chosen orthogonal to λ_v makes Ṡ vanish.
        let mut y = switching_state();
        let lam_v = Vector3::new(0.19, 0.0, 0.0);
        y.fixed_rows_mut::<3>(IDX_LV).copy_from(&lam_v);
        let h_t_lam = crate::dynamics::coriolis_matrix().transpose() * lam_v;
        y.fixed_rows_mut::<3>(7).copy_from(&(-h_t_lam));
        let err = switch_map(&f, &y, 0.0, f.tmax_nu, 3, 1.5).unwrap_err();
        assert!(matches!(err, PropagationError::GrazingSwitch { index: 3, .. }));
    }

    #[test]
    fn query_endpoints() {
        let mut p = prop(0.01);
        p.opts.node_stm = true;
        let (traj, chain) = p.run_with_stm(&switching_state(), 4.0).unwrap();
        let (s0, m0) = query_state_and_sensitivity_at(&chain, &traj, 0.0).unwrap();
        assert_eq!(s0.to_vector(), switching_state());
        assert_eq!(m0, StateMatrix::identity());
        let (_, mf) = query_state_and_sensitivity_at(&chain, &traj, 4.0).unwrap();
        assert_eq!(mf, chain.total);
        assert!(matches!(
            query_state_and_sensitivity_at(&chain, &traj, 0.005),
            Err(PropagationError::NotANode { .. })
        ));
    }

    #[test]
    fn rejects_bad_options() {
        let mut p = prop(0.01);
        p.opts.rel_tol = 0.0;
        assert!(matches!(p.run(&switching_state(), 1.0), Err(PropagationError::Options(_))));
    }
}
