//! Search for near-feasible starting costates. Each random start is moved
//! by an evolution-strategy search on the screened constraint violation,
//! then polished by Levenberg–Marquardt on the planar terminal mismatch,
//! first with free shooting time and target phase and then with both
//! frozen at the nearest grid node and orbit sample. Starts that end below
//! e = 5e-6 are shrunk along their costate ray and written out.
//!
//! cargo run --release -p costate-core --example seed_search -- \
//!     [alpha] [tau_s_max] [starts] [seed] [out.csv] [spread_scale] [cma_evals]
//!
//! Shrink an existing costate file only:
//!
//! cargo run --release -p costate-core --example seed_search -- \
//!     shrink in.csv out.csv [alpha] [tau_s_max]

use std::fs::File;
use std::sync::Arc;

use costate_core::dataset::{read_costates, write_costates};
use costate_core::orbits::{boundary_orbits_for_alpha, OrbitOptions, DEFAULT_ORBIT_POINTS};
use costate_core::screening::{Costate, ObjectiveWeights, ScreeningContext, ScreeningOptions, ScreeningResult};
use costate_core::systems::{SpacecraftConfig, SystemEndpoints};
use costate_core::dynamics::Cr3bp;
use costate_core::orbits::coast_states;
use nalgebra::{Matrix4, SMatrix, SVector, Vector3, Vector4, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const PLANAR_STATE: [usize; 4] = [0, 1, 3, 4];
const PLANAR_COSTATE: [usize; 4] = [7, 8, 10, 11];
const SPREAD: [f64; 4] = [0.0468, 0.0010, 0.0013, 0.0353];

/// Shooting time and target sample held fixed during a frozen solve.
#[derive(Clone, Copy)]
struct Anchor {
    tau_s: f64,
    sample: usize,
}

fn residual_and_jacobian(ctx: &ScreeningContext, lam: &Costate, a: &Anchor) -> Option<(Vector4<f64>, Matrix4<f64>)> {
    let y0 = ctx.initial_state(lam).ok()?;
    let (traj, chain) = ctx.propagator().run_with_stm(&y0, a.tau_s).ok()?;
    let y = traj.final_node().y;
    let s = ctx.target.samples[a.sample].planar();
    let res = Vector4::from_fn(|i, _| y[PLANAR_STATE[i]] - s[i]);
    let jac = Matrix4::from_fn(|i, j| chain.total[(PLANAR_STATE[i], PLANAR_COSTATE[j])]);
    Some((res, jac))
}

fn frozen_residual(ctx: &ScreeningContext, lam: &Costate, a: &Anchor) -> Option<Vector4<f64>> {
    let y0 = ctx.initial_state(lam).ok()?;
    let y = ctx.propagator().run(&y0, a.tau_s).ok()?.final_node().y;
    let s = ctx.target.samples[a.sample].planar();
    Some(Vector4::from_fn(|i, _| y[PLANAR_STATE[i]] - s[i]))
}

/// Levenberg–Marquardt on the mismatch with shooting node and target
/// sample held fixed.
fn solve_frozen(ctx: &ScreeningContext, mut lam: Costate, anchor: &Anchor) -> Costate {
    let mut damping = 1e-3;
    let Some(mut res) = frozen_residual(ctx, &lam, anchor) else {
        return lam;
    };
    for _ in 0..60 {
        if res.norm() < 1e-11 {
            break;
        }
        let Some((_, jac)) = residual_and_jacobian(ctx, &lam, anchor) else {
            break;
        };
        let jtj = jac.transpose() * jac;
        let rhs = -(jac.transpose() * res);
        let mut improved = false;
        for _ in 0..15 {
            let m = jtj + Matrix4::from_diagonal(&jtj.diagonal()) * damping;
            if let Some(step) = m.lu().solve(&rhs) {
                let cand = lam + step;
                if let Some(rc) = frozen_residual(ctx, &cand, anchor) {
                    if rc.norm() < res.norm() {
                        lam = cand;
                        res = rc;
                        damping = (damping / 5.0).max(1e-12);
                        improved = true;
                        break;
                    }
                }
            }
            damping *= 8.0;
        }
        if !improved {
            break;
        }
    }
    lam
}

/// Target orbit state at phase `tau_f` (wrapped to one period) and its
/// planar time derivative.
fn target_state(ctx: &ScreeningContext, tau_f: f64) -> Option<([f64; 4], [f64; 4])> {
    let orbit = &ctx.target;
    let phase = tau_f.rem_euclid(orbit.period);
    let k = orbit.samples.partition_point(|s| s.tau_f <= phase).saturating_sub(1);
    let s = &orbit.samples[k];
    let x0 = Vector6::new(s.r[0], s.r[1], s.r[2], s.v[0], s.v[1], s.v[2]);
    let dt = phase - s.tau_f;
    let x = if dt > 0.0 {
        coast_states(&x0, &[dt], orbit.mu, &OrbitOptions::default()).ok()?[0]
    } else {
        x0
    };
    let r = Vector3::new(x[0], x[1], x[2]);
    let v = Vector3::new(x[3], x[4], x[5]);
    let a = Cr3bp::new(orbit.mu).acceleration(&r, &v).ok()?;
    Some(([x[0], x[1], x[3], x[4]], [v.x, v.y, a.x, a.y]))
}

type Unknowns = SVector<f64, 6>;

fn continuous_residual(ctx: &ScreeningContext, z: &Unknowns) -> Option<Vector4<f64>> {
    let lam = Costate::new(z[0], z[1], z[2], z[3]);
    let y0 = ctx.initial_state(&lam).ok()?;
    let y = ctx.propagator().run(&y0, z[4]).ok()?.final_node().y;
    let (s, _) = target_state(ctx, z[5])?;
    Some(Vector4::from_fn(|i, _| y[PLANAR_STATE[i]] - s[i]))
}

/// Levenberg–Marquardt with the shooting time and the target phase free,
/// so the terminal point may slide along both curves.
fn solve_continuous(ctx: &ScreeningContext, mut z: Unknowns, tau_s_max: f64) -> (Unknowns, f64) {
    let Some(mut res) = continuous_residual(ctx, &z) else {
        return (z, f64::INFINITY);
    };
    let mut damping = 1e-3;
    for _ in 0..200 {
        if res.norm() < 1e-11 {
            break;
        }
        let lam = Costate::new(z[0], z[1], z[2], z[3]);
        let Ok(y0) = ctx.initial_state(&lam) else { break };
        let Ok((traj, chain)) = ctx.propagator().run_with_stm(&y0, z[4]) else { break };
        let node = traj.final_node();
        let field = ctx.propagator().field;
        let Ok(ydot) = field.eval(&node.y, field.thrust(node.thrust_on)) else { break };
        let Some((_, sdot)) = target_state(ctx, z[5]) else { break };
        let jac = SMatrix::<f64, 4, 6>::from_fn(|i, j| match j {
            0..=3 => chain.total[(PLANAR_STATE[i], PLANAR_COSTATE[j])],
            4 => ydot[PLANAR_STATE[i]],
            _ => -sdot[i],
        });
        let jtj = jac.transpose() * jac;
        let rhs = -(jac.transpose() * res);
        let scale = SMatrix::<f64, 6, 6>::from_diagonal(&jtj.diagonal().map(|d| d.max(1e-12)));
        let mut improved = false;
        for _ in 0..20 {
            if let Some(step) = (jtj + scale * damping).lu().solve(&rhs) {
                let mut cand = z + step;
                cand[4] = cand[4].clamp(0.5, tau_s_max);
                if let Some(rc) = continuous_residual(ctx, &cand) {
                    if rc.norm() < res.norm() {
                        z = cand;
                        res = rc;
                        damping = (damping / 5.0).max(1e-12);
                        improved = true;
                        break;
                    }
                }
            }
            damping *= 8.0;
        }
        if !improved {
            break;
        }
    }
    (z, res.norm())
}

/// Evolution-strategy search on the screened log-violation; robust to the
/// kinks that grazing switches put into the terminal map.
fn cma_search(ctx: &ScreeningContext, lam: &Costate, step: f64, evals: usize) -> Costate {
    let objective = |x: &cmaes::DVector<f64>| {
        let lam = Costate::new(x[0], x[1], x[2], x[3]);
        match ctx.evaluate(&lam) {
            Ok(r) => (r.e + 1e-14).ln(),
            Err(_) => 10.0,
        }
    };
    let Ok(mut state) = cmaes::CMAESOptions::new(lam.as_slice().to_vec(), step)
        .fun_target(1e-7f64.ln())
        .max_function_evals(evals)
        .build(objective)
    else {
        return *lam;
    };
    match state.run().overall_best {
        Some(best) => Costate::new(best.point[0], best.point[1], best.point[2], best.point[3]),
        None => *lam,
    }
}

/// Solve with free times, then snap to the nearest grid node and target
/// sample and finish with the frozen solve.
fn refine(ctx: &ScreeningContext, lam: Costate, tau_s_max: f64) -> Option<(Costate, ScreeningResult)> {
    let r = ctx.evaluate(&lam).ok()?;
    let (tau_s, tau_f) = if r.tau_s_star > 0.0 {
        (r.tau_s_star, r.tau_f_star)
    } else {
        (0.5 * tau_s_max, 0.0)
    };
    let z0 = Unknowns::from_column_slice(&[lam[0], lam[1], lam[2], lam[3], tau_s, tau_f]);
    let (z, _) = solve_continuous(ctx, z0, tau_s_max);
    let grid = ctx.opts.propagator.max_step_nu;
    let orbit = &ctx.target;
    let phase = z[5].rem_euclid(orbit.period);
    let sample = (0..orbit.samples.len())
        .min_by(|&a, &b| (orbit.samples[a].tau_f - phase).abs().total_cmp(&(orbit.samples[b].tau_f - phase).abs()))?;
    let anchor = Anchor {
        tau_s: ((z[4] / grid).round() * grid).min(tau_s_max),
        sample,
    };
    let lam = solve_frozen(ctx, Costate::new(z[0], z[1], z[2], z[3]), &anchor);
    let r = ctx.evaluate(&lam).ok()?;
    Some((lam, r))
}

const FEASIBLE: f64 = 5e-6;

/// Full-thrust solutions only fix the direction of the costate, so the
/// search can wander far out along a ray. Returns the costate scaled to
/// one grid step above the smallest scale that keeps it feasible without
/// switches.
fn shrink_along_ray(ctx: &ScreeningContext, lam: &Costate) -> Costate {
    let keeps = |c: f64| ctx.evaluate(&(lam * c)).is_ok_and(|r| r.e < FEASIBLE && r.switch_count == 0);
    if !keeps(1.0) {
        return *lam;
    }
    let factor = 0.8;
    let mut c = 1.0;
    while c > 1e-9 && keeps(c * factor) {
        c *= factor;
    }
    let margin = (c / factor).min(1.0);
    lam * margin
}

fn context(alpha: f64, tau_s_max: f64) -> ScreeningContext {
    let endpoints = SystemEndpoints::default();
    let sys = endpoints.interpolate(alpha).unwrap();
    let (dep, tgt) = boundary_orbits_for_alpha(&endpoints, alpha, DEFAULT_ORBIT_POINTS, &OrbitOptions::default()).unwrap();
    let weights = ObjectiveWeights {
        kappa1: 1e-3,
        kappa2: 1e-6,
        beta: 1e4,
    };
    let opts = ScreeningOptions {
        tau_s_max,
        ..Default::default()
    };
    ScreeningContext::new(sys, SpacecraftConfig::reference(), &dep, Arc::new(tgt), weights, opts).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    if arg(1, "") == "shrink" {
        let ctx = context(arg(4, "0").parse().unwrap(), arg(5, "30").parse().unwrap());
        let lams = read_costates(File::open(arg(2, "seeds.csv")).unwrap()).unwrap();
        let out: Vec<[f64; 4]> = lams
            .iter()
            .map(|l| {
                let s = shrink_along_ray(&ctx, &Costate::from_row_slice(l));
                [s[0], s[1], s[2], s[3]]
            })
            .collect();
        write_costates(File::create(arg(3, "shrunk.csv")).unwrap(), &out).unwrap();
        return;
    }
    let alpha: f64 = arg(1, "0").parse().unwrap();
    let tau_s_max: f64 = arg(2, "30").parse().unwrap();
    let starts: usize = arg(3, "200").parse().unwrap();
    let seed: u64 = arg(4, "1").parse().unwrap();
    let out = arg(5, "seeds.csv");
    let spread_scale: f64 = arg(6, "1").parse().unwrap();
    let cma_evals: usize = arg(7, "0").parse().unwrap();
    let ctx = context(alpha, tau_s_max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found = Vec::new();
    for k in 0..starts {
        let lam = Costate::from_fn(|i, _| spread_scale * SPREAD[i] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        let lam = if cma_evals > 0 {
            cma_search(&ctx, &lam, spread_scale * 0.02, cma_evals)
        } else {
            lam
        };
        if let Some((lam, r)) = refine(&ctx, lam, tau_s_max) {
            eprintln!(
                "start {k}: e {:.3e} tau_s {:.2} dm {:.3e} switches {}",
                r.e, r.tau_s_star, r.dm_frac, r.switch_count
            );
            if r.e < FEASIBLE {
                let lam = shrink_along_ray(&ctx, &lam);
                found.push([lam[0], lam[1], lam[2], lam[3]]);
            }
        }
    }
    eprintln!("{} of {starts} starts converged", found.len());
    write_costates(File::create(&out).unwrap(), &found).unwrap();
}
