use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::{step, KernelConfig};
use crate::rng::step_rng;
use super::{ChainState, LogTarget, SampleInfo, TraceValues};

/// Chain-averaged values after one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub stage: usize,
    /// Cumulative iteration count, starting at 1.
    pub iteration: u64,
    pub mean: TraceValues,
    pub acceptance: f64,
    pub chains: usize,
}

/// A retained post-burn-in state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<I> {
    pub chain_id: usize,
    pub iteration: u64,
    pub x: Vec<f64>,
    pub info: I,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageOutput<I> {
    pub traces: Vec<IterationTrace>,
    pub records: Vec<StageRecord<I>>,
    pub accepted: u64,
    pub proposals: u64,
    pub failures: u64,
}

struct ChainRun<I> {
    per_iter: Vec<(TraceValues, bool)>,
    records: Vec<StageRecord<I>>,
    failures: u64,
}

/// Advance every chain by `iterations` kernel steps in parallel. States
/// reached after iteration `burn_in` (cumulative) are kept.
pub fn run_stage<T: LogTarget>(
    target: &T,
    chains: &mut [ChainState<T::Info>],
    cfg: &KernelConfig,
    iterations: usize,
    master_seed: u64,
    stage: usize,
    burn_in: u64,
) -> StageOutput<T::Info> {
    let runs: Vec<ChainRun<T::Info>> = chains
        .par_iter_mut()
        .map(|chain| {
            let mut run = ChainRun {
                per_iter: Vec::with_capacity(iterations),
                records: Vec::new(),
                failures: 0,
            };
            for _ in 0..iterations {
                let mut rng = step_rng(master_seed, chain.id, chain.counter);
                let outcome = step(target, chain, cfg, &mut rng);
                chain.counter += 1;
                run.failures += u64::from(outcome.failed);
                run.per_iter.push((chain.eval.info.trace_values(), outcome.accepted));
                if chain.counter > burn_in {
                    run.records.push(StageRecord {
                        chain_id: chain.id,
                        iteration: chain.counter,
                        x: chain.x.as_slice().to_vec(),
                        info: chain.eval.info.clone(),
                    });
                }
            }
            run
        })
        .collect();

    let mut out = StageOutput {
        traces: Vec::with_capacity(iterations),
        records: Vec::new(),
        accepted: 0,
        proposals: (runs.len() * iterations) as u64,
        failures: runs.iter().map(|r| r.failures).sum(),
    };
    let n = runs.len();
    let first_iteration = chains.first().map_or(0, |c| c.counter - iterations as u64);
    for k in 0..iterations {
        let mut sum = TraceValues::default();
        let mut acc = 0usize;
        for run in &runs {
            let (v, a) = run.per_iter[k];
            sum.j += v.j;
            sum.e += v.e;
            sum.dm += v.dm;
            sum.tau_s += v.tau_s;
            acc += usize::from(a);
        }
        out.accepted += acc as u64;
        let nf = n.max(1) as f64;
        out.traces.push(IterationTrace {
            stage,
            iteration: first_iteration + k as u64 + 1,
            mean: TraceValues {
                j: sum.j / nf,
                e: sum.e / nf,
                dm: sum.dm / nf,
                tau_s: sum.tau_s / nf,
            },
            acceptance: acc as f64 / nf,
            chains: n,
        });
    }
    // Iteration-major order, then chain order.
    let mut cursors: Vec<_> = runs.into_iter().map(|r| r.records.into_iter().peekable()).collect();
    loop {
        let mut progressed = false;
        for c in &mut cursors {
            if let Some(r) = c.next() {
                out.records.push(r);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}
