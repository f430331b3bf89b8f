//! Costate–reward dataset records and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::mcmc::{HomotopyRecord, IterationTrace};
use crate::screening::{calibrate_reward, RewardCalibration, ScreeningResult};

/// One collected sample. Floats are written in shortest round-trip form,
/// so a write/read cycle reproduces every value exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostateSample {
    pub alpha: f64,
    pub lam_r1: f64,
    pub lam_r2: f64,
    pub lam_v1: f64,
    pub lam_v2: f64,
    pub tau_s_star: f64,
    pub tau_f_star: f64,
    pub e: f64,
    pub dm_frac: f64,
    pub j_star: f64,
    pub reward: f64,
    pub chain_id: usize,
    pub stage: usize,
    pub iteration: u64,
}

impl CostateSample {
    pub fn lam(&self) -> [f64; 4] {
        [self.lam_r1, self.lam_r2, self.lam_v1, self.lam_v2]
    }

    pub fn from_record(r: &HomotopyRecord<ScreeningResult>, reward: f64) -> Self {
        let i = &r.info;
        Self {
            alpha: r.alpha,
            lam_r1: r.x[0],
            lam_r2: r.x[1],
            lam_v1: r.x[2],
            lam_v2: r.x[3],
            tau_s_star: i.tau_s_star,
            tau_f_star: i.tau_f_star,
            e: i.e,
            dm_frac: i.dm_frac,
            j_star: i.j_star,
            reward,
            chain_id: r.chain_id,
            stage: r.stage,
            iteration: r.iteration,
        }
    }
}

/// Calibrate rewards over all collected objective values and stamp each
/// record. Returns `None` for the calibration when there are no finite
/// values; rewards are then left at 1.
pub fn stamp_rewards(records: &[HomotopyRecord<ScreeningResult>]) -> (Vec<CostateSample>, Option<RewardCalibration>) {
    let j: Vec<f64> = records.iter().map(|r| r.info.j_star).collect();
    let cal = calibrate_reward(&j);
    let samples = records
        .iter()
        .map(|r| CostateSample::from_record(r, cal.map_or(1.0, |c| c.stamp(r.info.j_star))))
        .collect();
    (samples, cal)
}

/// Lines starting with `#` are comments (run provenance headers).
fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

pub fn write_samples<W: Write>(w: W, samples: &[CostateSample]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in samples {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(r: R) -> csv::Result<Vec<CostateSample>> {
    reader(r).deserialize().collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    stage: usize,
    iteration: u64,
    #[serde(rename = "mean_J")]
    mean_j: f64,
    mean_e: f64,
    mean_dm: f64,
    mean_tau_s: f64,
    acceptance: f64,
    chains: usize,
}

pub fn write_traces<W: Write>(w: W, traces: &[IterationTrace]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for t in traces {
        out.serialize(TraceRow {
            stage: t.stage,
            iteration: t.iteration,
            mean_j: t.mean.j,
            mean_e: t.mean.e,
            mean_dm: t.mean.dm,
            mean_tau_s: t.mean.tau_s,
            acceptance: t.acceptance,
            chains: t.chains,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces<R: Read>(r: R) -> csv::Result<Vec<IterationTrace>> {
    reader(r)
        .deserialize::<TraceRow>()
        .map(|row| {
            row.map(|t| IterationTrace {
                stage: t.stage,
                iteration: t.iteration,
                mean: crate::mcmc::TraceValues {
                    j: t.mean_j,
                    e: t.mean_e,
                    dm: t.mean_dm,
                    tau_s: t.mean_tau_s,
                },
                acceptance: t.acceptance,
                chains: t.chains,
            })
        })
        .collect()
}

/// Plain costate list: header `lam_r1,lam_r2,lam_v1,lam_v2`.
pub fn write_costates<W: Write>(w: W, lams: &[[f64; 4]]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["lam_r1", "lam_r2", "lam_v1", "lam_v2"])?;
    for l in lams {
        out.serialize(l)?;
    }
    out.flush()?;
    Ok(())
}

/// Read costates from any CSV with the four `lam_*` columns (a sample file
/// or a dataset).
pub fn read_costates<R: Read>(r: R) -> csv::Result<Vec<[f64; 4]>> {
    #[derive(Deserialize)]
    struct Row {
        lam_r1: f64,
        lam_r2: f64,
        lam_v1: f64,
        lam_v2: f64,
    }
    reader(r)
        .deserialize::<Row>()
        .map(|r| r.map(|r| [r.lam_r1, r.lam_r2, r.lam_v1, r.lam_v2]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_f64() -> impl Strategy<Value = f64> {
        prop_oneof![prop::num::f64::NORMAL, prop::num::f64::SUBNORMAL, Just(0.0), Just(-0.0)]
    }

    proptest! {
        #[test]
        fn samples_round_trip_exactly(vals in prop::collection::vec(any_f64(), 11), ids in (0usize..5000, 0usize..20, 0u64..10_000)) {
            let s = CostateSample {
                alpha: vals[0], lam_r1: vals[1], lam_r2: vals[2], lam_v1: vals[3], lam_v2: vals[4],
                tau_s_star: vals[5], tau_f_star: vals[6], e: vals[7], dm_frac: vals[8], j_star: vals[9],
                reward: vals[10], chain_id: ids.0, stage: ids.1, iteration: ids.2,
            };
            let mut buf = Vec::new();
            write_samples(&mut buf, &[s, s]).unwrap();
            let back = read_samples(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for b in back {
                prop_assert_eq!(b.alpha.to_bits(), s.alpha.to_bits());
                prop_assert_eq!(b.lam(), s.lam());
                prop_assert_eq!(b.j_star.to_bits(), s.j_star.to_bits());
                prop_assert_eq!(b, s);
            }
        }
    }

    #[test]
    fn costate_files_accept_datasets() {
        let s = CostateSample {
            alpha: 0.1,
            lam_r1: 1.0,
            lam_r2: 2.0,
            lam_v1: 3.0,
            lam_v2: 4.0,
            tau_s_star: 0.0,
            tau_f_star: 0.0,
            e: 0.0,
            dm_frac: 0.0,
            j_star: 0.0,
            reward: 1.0,
            chain_id: 0,
            stage: 0,
            iteration: 0,
        };
        let mut buf = Vec::new();
        write_samples(&mut buf, &[s]).unwrap();
        assert_eq!(read_costates(buf.as_slice()).unwrap(), vec![[1.0, 2.0, 3.0, 4.0]]);
        let mut buf = Vec::new();
        write_costates(&mut buf, &[[0.5, -0.25, 1e-300, 3.0]]).unwrap();
        assert_eq!(read_costates(buf.as_slice()).unwrap(), vec![[0.5, -0.25, 1e-300, 3.0]]);
    }
}
