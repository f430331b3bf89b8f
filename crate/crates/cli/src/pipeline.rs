//! Screening-objective homotopy: builds per-stage targets from a run config
//! and turns chain records into a rewarded dataset.

use std::sync::Arc;

use costate_core::dataset::{stamp_rewards, CostateSample};
use costate_core::mcmc::{
    run_homotopy, step_rng, HomotopyError, HomotopyOutput, ScreeningTarget, Snapshot, StageSpec, TargetError,
};
use costate_core::orbits::boundary_orbits_for_alpha;
use costate_core::screening::{ObjectiveWeights, RewardCalibration, ScreeningContext, ScreeningResult};
use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::error::CliError;

/// Stream index reserved for drawing initial costates.
const INITIAL_DRAW_STREAM: usize = usize::MAX;

pub type ScreeningSnapshot = Snapshot<ScreeningResult>;

pub fn screening_context(cfg: &RunConfig, alpha: f64, weights: ObjectiveWeights) -> Result<ScreeningContext, String> {
    let sys = cfg.system.interpolate(alpha).map_err(|e| e.to_string())?;
    let (departure, target) = boundary_orbits_for_alpha(&cfg.system, alpha, cfg.orbits.points, &cfg.orbits.options)
        .map_err(|e| format!("boundary orbits at alpha = {alpha}: {e}"))?;
    let sc = cfg.spacecraft_nu().map_err(|e| e.to_string())?;
    ScreeningContext::new(sys, sc, &departure, Arc::new(target), weights, cfg.screening).map_err(|e| e.to_string())
}

/// One starting costate per chain: the given costates cycled in order, or
/// zero-mean normal draws with the configured spread.
pub fn initial_costates(cfg: &RunConfig, given: Option<&[[f64; 4]]>) -> Result<Vec<DVector<f64>>, CliError> {
    let n = cfg.homotopy.chains;
    match given {
        Some([]) => Err(CliError::Config("the initial costate file is empty".into())),
        Some(lams) => Ok((0..n).map(|i| DVector::from_row_slice(&lams[i % lams.len()])).collect()),
        None => {
            let mut rng = step_rng(cfg.seed, INITIAL_DRAW_STREAM, 0);
            let spread = cfg.homotopy.initial_spread;
            Ok((0..n)
                .map(|_| {
                    DVector::from_iterator(
                        4,
                        spread.iter().map(|s| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            s * z
                        }),
                    )
                })
                .collect())
        }
    }
}

/// Componentwise sample standard deviation of the starting costates. Used
/// as the unit for every stage's proposal scale.
pub fn spread_of(initial: &[DVector<f64>]) -> Result<[f64; 4], CliError> {
    if initial.len() < 2 {
        return Err(CliError::Config("at least two starting costates are needed to set the proposal scale".into()));
    }
    let n = initial.len() as f64;
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let mean = initial.iter().map(|x| x[k]).sum::<f64>() / n;
        let var = initial.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        *o = var.sqrt();
    }
    if out.iter().any(|s| !(*s > 0.0)) {
        return Err(CliError::Config(format!(
            "starting costates have zero spread in some component ({out:?}); supply distinct costates"
        )));
    }
    Ok(out)
}

pub struct HomotopyRun {
    pub samples: Vec<CostateSample>,
    pub output: HomotopyOutput<ScreeningResult>,
    pub calibration: Option<RewardCalibration>,
    pub stages: Vec<StageSpec>,
}

pub fn homotopy_error(e: HomotopyError) -> CliError {
    match e {
        HomotopyError::Schedule(m) => CliError::Config(m),
        HomotopyError::SnapshotMismatch(m) => CliError::ResumeMismatch(m),
        e @ (HomotopyError::Target { .. } | HomotopyError::Callback(_)) => CliError::Numerical(e.to_string()),
    }
}

/// Runs the configured schedule. `on_stage` sees a snapshot after every
/// completed stage.
pub fn run_screening_homotopy<C>(
    cfg: &RunConfig,
    initial: &[DVector<f64>],
    sigma_init: &[f64; 4],
    fingerprint: &str,
    resume: Option<ScreeningSnapshot>,
    on_stage: C,
) -> Result<HomotopyRun, HomotopyError>
where
    C: FnMut(&ScreeningSnapshot) -> Result<(), String>,
{
    let stages = cfg.stage_specs(sigma_init);
    let make_target = |i: usize, spec: &StageSpec| {
        let weights = cfg.stage_weights(&cfg.homotopy.stages[i]);
        screening_context(cfg, spec.alpha, weights)
            .map(ScreeningTarget)
            .map_err(TargetError)
    };
    let output = run_homotopy(
        initial,
        &stages,
        cfg.homotopy.burn_in,
        cfg.seed,
        fingerprint,
        make_target,
        resume,
        on_stage,
    )?;
    let (samples, calibration) = stamp_rewards(&output.records);
    Ok(HomotopyRun {
        samples,
        output,
        calibration,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn given_costates_are_cycled() {
        let mut cfg = RunConfig::default();
        cfg.homotopy.chains = 5;
        let lams = [[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]];
        let init = initial_costates(&cfg, Some(&lams)).unwrap();
        assert_eq!(init.len(), 5);
        assert_eq!(init[4].as_slice(), &lams[0]);
        assert_eq!(init[3].as_slice(), &lams[1]);
    }

    #[test]
    fn drawn_costates_depend_on_the_seed_only() {
        let mut cfg = RunConfig::default();
        cfg.homotopy.chains = 3;
        let a = initial_costates(&cfg, None).unwrap();
        assert_eq!(a, initial_costates(&cfg, None).unwrap());
        cfg.seed = 9;
        assert_ne!(a, initial_costates(&cfg, None).unwrap());
    }

    #[test]
    fn spread_matches_two_point_formula() {
        let init = vec![DVector::from_row_slice(&[0.0, 1.0, 2.0, 3.0]), DVector::from_row_slice(&[2.0, 1.5, 2.5, 7.0])];
        let s = spread_of(&init).unwrap();
        // Two points: sample std = |a − b| / √2.
        for (k, d) in [2.0, 0.5, 0.5, 4.0].iter().enumerate() {
            assert!((s[k] - d / 2f64.sqrt()).abs() < 1e-15);
        }
        assert!(spread_of(&init[..1]).is_err());
        assert!(spread_of(&[init[0].clone(), init[0].clone()]).is_err());
    }
}
