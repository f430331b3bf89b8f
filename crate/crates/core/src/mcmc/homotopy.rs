//! Staged sampling along the system homotopy, with snapshot and resume.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kernels::KernelConfig;
use super::runner::{run_stage, IterationTrace};
use super::{ChainState, LogTarget, SampleInfo, TargetError};

/// One sampling stage: the system parameter, how long to run, which kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub alpha: f64,
    pub iterations: usize,
    pub kernel: KernelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyRecord<I> {
    pub alpha: f64,
    pub stage: usize,
    pub chain_id: usize,
    pub iteration: u64,
    pub x: Vec<f64>,
    pub info: I,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotChain {
    pub id: usize,
    pub x: Vec<f64>,
    pub counter: u64,
    pub objective_evals: u64,
    pub gradient_evals: u64,
}

/// Dropped chain: id, stage at which it was dropped, reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadChain {
    pub id: usize,
    pub stage: usize,
    pub reason: String,
    pub objective_evals: u64,
    pub gradient_evals: u64,
}

/// Everything needed to continue a run after `completed_stages` stages.
/// Targets are rebuilt and chains re-evaluated on resume, so only
/// positions and counters are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<I> {
    pub fingerprint: String,
    pub completed_stages: usize,
    pub chains: Vec<SnapshotChain>,
    pub dead: Vec<DeadChain>,
    pub traces: Vec<IterationTrace>,
    pub records: Vec<HomotopyRecord<I>>,
    pub accepted: u64,
    pub proposals: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyOutput<I> {
    pub records: Vec<HomotopyRecord<I>>,
    pub traces: Vec<IterationTrace>,
    pub dead: Vec<DeadChain>,
    pub surviving_chains: usize,
    pub objective_evals: u64,
    pub gradient_evals: u64,
    pub accepted: u64,
    pub proposals: u64,
    pub failures: u64,
}

#[derive(Debug, Error)]
pub enum HomotopyError {
    #[error("invalid stage schedule: {0}")]
    Schedule(String),
    #[error("building the target for stage {stage} (alpha = {alpha}) failed: {source}")]
    Target {
        stage: usize,
        alpha: f64,
        source: TargetError,
    },
    #[error("snapshot does not match this run: {0}")]
    SnapshotMismatch(String),
    #[error("snapshot callback failed: {0}")]
    Callback(String),
}

fn validate(stages: &[StageSpec], dim: usize) -> Result<(), HomotopyError> {
    let bad = |m: String| Err(HomotopyError::Schedule(m));
    if stages.is_empty() {
        return bad("no stages".into());
    }
    let mut prev = f64::NEG_INFINITY;
    for (i, s) in stages.iter().enumerate() {
        if !(0.0..=1.0).contains(&s.alpha) || s.alpha < prev {
            return bad(format!("stage {i}: alpha {} must lie in [0, 1] and not decrease", s.alpha));
        }
        prev = s.alpha;
        if s.kernel.sigma.len() != dim || s.kernel.sigma.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad(format!("stage {i}: sigma must have {dim} positive entries"));
        }
        if !(s.kernel.epsilon.is_finite() && s.kernel.epsilon >= 0.0) {
            return bad(format!("stage {i}: epsilon must be finite and non-negative"));
        }
    }
    Ok(())
}

/// Run `stages` in order starting from `initial`. Each stage rebuilds its
/// target through `make_target` and re-evaluates every chain at the new
/// system; chains that cannot be evaluated are dropped. States after
/// cumulative iteration `burn_in` are retained. A schedule with no
/// iterations at all returns the evaluated starting points.
///
/// `on_stage` receives a snapshot after every completed stage.
#[allow(clippy::too_many_arguments)]
pub fn run_homotopy<T, F, C>(
    initial: &[DVector<f64>],
    stages: &[StageSpec],
    burn_in: u64,
    master_seed: u64,
    fingerprint: &str,
    make_target: F,
    resume: Option<Snapshot<T::Info>>,
    mut on_stage: C,
) -> Result<HomotopyOutput<T::Info>, HomotopyError>
where
    T: LogTarget,
    F: Fn(usize, &StageSpec) -> Result<T, TargetError>,
    C: FnMut(&Snapshot<T::Info>) -> Result<(), String>,
{
    let dim = initial.first().map_or(0, |x| x.len());
    if initial.iter().any(|x| x.len() != dim) {
        return Err(HomotopyError::Schedule("initial points differ in dimension".into()));
    }
    validate(stages, dim)?;
    let total_iterations: usize = stages.iter().map(|s| s.iterations).sum();

    let mut snap = match resume {
        Some(s) => {
            if s.fingerprint != fingerprint {
                return Err(HomotopyError::SnapshotMismatch(format!(
                    "fingerprint {} != {}",
                    s.fingerprint, fingerprint
                )));
            }
            if s.completed_stages > stages.len() {
                return Err(HomotopyError::SnapshotMismatch(format!(
                    "{} stages completed but the schedule has {}",
                    s.completed_stages,
                    stages.len()
                )));
            }
            s
        }
        None => Snapshot {
            fingerprint: fingerprint.to_string(),
            completed_stages: 0,
            chains: initial
                .iter()
                .enumerate()
                .map(|(id, x)| SnapshotChain {
                    id,
                    x: x.as_slice().to_vec(),
                    counter: 0,
                    objective_evals: 0,
                    gradient_evals: 0,
                })
                .collect(),
            dead: Vec::new(),
            traces: Vec::new(),
            records: Vec::new(),
            accepted: 0,
            proposals: 0,
            failures: 0,
        },
    };

    for (index, spec) in stages.iter().enumerate().skip(snap.completed_stages) {
        let target = make_target(index, spec).map_err(|source| HomotopyError::Target {
            stage: index,
            alpha: spec.alpha,
            source,
        })?;
        let with_gradient = spec.kernel.kind.uses_gradient();
        let mut chains = Vec::with_capacity(snap.chains.len());
        for c in &snap.chains {
            match ChainState::start(&target, c.id, DVector::from_column_slice(&c.x), c.counter, with_gradient) {
                Ok(mut state) => {
                    state.objective_evals += c.objective_evals;
                    state.gradient_evals += c.gradient_evals;
                    chains.push(state);
                }
                Err(e) => snap.dead.push(DeadChain {
                    id: c.id,
                    stage: index,
                    reason: e.to_string(),
                    objective_evals: c.objective_evals + 1,
                    gradient_evals: c.gradient_evals,
                }),
            }
        }

        if total_iterations == 0 {
            snap.records.extend(chains.iter().map(|c| HomotopyRecord {
                alpha: spec.alpha,
                stage: index,
                chain_id: c.id,
                iteration: 0,
                x: c.x.as_slice().to_vec(),
                info: c.eval.info.clone(),
            }));
        } else {
            let out = run_stage(&target, &mut chains, &spec.kernel, spec.iterations, master_seed, index, burn_in);
            snap.traces.extend(out.traces);
            snap.records.extend(out.records.into_iter().map(|r| HomotopyRecord {
                alpha: spec.alpha,
                stage: index,
                chain_id: r.chain_id,
                iteration: r.iteration,
                x: r.x,
                info: r.info,
            }));
            snap.accepted += out.accepted;
            snap.proposals += out.proposals;
            snap.failures += out.failures;
        }

        snap.chains = chains
            .iter()
            .map(|c| SnapshotChain {
                id: c.id,
                x: c.x.as_slice().to_vec(),
                counter: c.counter,
                objective_evals: c.objective_evals,
                gradient_evals: c.gradient_evals,
            })
            .collect();
        snap.completed_stages = index + 1;
        on_stage(&snap).map_err(HomotopyError::Callback)?;
        if total_iterations == 0 {
            break;
        }
    }

    let objective_evals =
        snap.chains.iter().map(|c| c.objective_evals).sum::<u64>() + snap.dead.iter().map(|d| d.objective_evals).sum::<u64>();
    let gradient_evals =
        snap.chains.iter().map(|c| c.gradient_evals).sum::<u64>() + snap.dead.iter().map(|d| d.gradient_evals).sum::<u64>();
    Ok(HomotopyOutput {
        surviving_chains: snap.chains.len(),
        records: snap.records,
        traces: snap.traces,
        dead: snap.dead,
        objective_evals,
        gradient_evals,
        accepted: snap.accepted,
        proposals: snap.proposals,
        failures: snap.failures,
    })
}

impl<I: SampleInfo> Snapshot<I> {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}
