//! Subcommand implementations.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use costate_core::analysis::{
    feasible_filter, hypervolume, hypervolume_normalized, objective_point, pareto_front, summarize_traces,
    HypervolumeConfig, ObjectivePoint, StageSummary,
};
use costate_core::dataset::{read_costates, read_samples, read_traces, write_costates, write_samples, write_traces, CostateSample};
use costate_core::diffusion::{finetune, sample, train, Checkpoint, TrainingExample, TrainingReport};
use costate_core::mcmc::Snapshot;
use costate_core::orbits::{boundary_orbits_for_alpha, discretize_orbit, periodicity_defect, PeriodicOrbit};
use costate_core::propagator::Propagator;
use costate_core::screening::{calibrate_reward, Costate, ScreeningContext, ScreeningResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::RunRecorder;
use crate::pipeline::{homotopy_error, initial_costates, run_screening_homotopy, screening_context, spread_of};

pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// Settings shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    /// Extra inputs hashed into the manifest (the config file, if any).
    pub config_file: Option<PathBuf>,
}

impl Context {
    fn recorder(&self, command: &str, inputs: &[&Path]) -> Result<RunRecorder, CliError> {
        let mut all: Vec<&Path> = self.config_file.iter().map(PathBuf::as_path).collect();
        all.extend_from_slice(inputs);
        RunRecorder::new(command, &self.config.to_toml(), self.config.seed, &all, &self.out_dir)
    }

    fn context_at(&self, alpha: f64) -> Result<ScreeningContext, CliError> {
        screening_context(&self.config, alpha, self.config.weights).map_err(CliError::Numerical)
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn load_costates(path: &Path) -> Result<Vec<[f64; 4]>, CliError> {
    read_costates(open(path)?).map_err(|e| CliError::io(path, e))
}

fn load_samples(path: &Path) -> Result<Vec<CostateSample>, CliError> {
    read_samples(open(path)?).map_err(|e| CliError::io(path, e))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(CliError::Config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Writes a serializable row type as CSV.
fn write_rows<T: Serialize>(w: &mut dyn Write, rows: &[T]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct OrbitRow {
    tau_f: f64,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
}

fn orbit_rows(o: &PeriodicOrbit) -> Vec<OrbitRow> {
    o.samples
        .iter()
        .map(|s| OrbitRow {
            tau_f: s.tau_f,
            x: s.r[0],
            y: s.r[1],
            z: s.r[2],
            vx: s.v[0],
            vy: s.v[1],
            vz: s.v[2],
        })
        .collect()
}

#[derive(Serialize)]
struct OrbitSummary {
    x0: [f64; 6],
    period: f64,
    periodicity_defect: f64,
    samples: usize,
}

pub fn orbits(ctx: &Context, alpha: f64) -> Result<(), CliError> {
    check_alpha(alpha)?;
    let cfg = &ctx.config;
    let mut rec = ctx.recorder("orbits", &[])?;
    let (departure, target) = boundary_orbits_for_alpha(&cfg.system, alpha, cfg.orbits.points, &cfg.orbits.options)
        .map_err(CliError::numerical)?;
    let departure = discretize_orbit(&departure, cfg.orbits.points, &cfg.orbits.options).map_err(CliError::numerical)?;
    let summary = |o: &PeriodicOrbit| -> Result<OrbitSummary, CliError> {
        Ok(OrbitSummary {
            x0: o.x0,
            period: o.period,
            periodicity_defect: periodicity_defect(o, &cfg.orbits.options).map_err(CliError::numerical)?,
            samples: o.samples.len(),
        })
    };
    let json = serde_json::json!({
        "fingerprint": rec.id(),
        "alpha": alpha,
        "mass_ratio": departure.mu,
        "departure": summary(&departure)?,
        "target": summary(&target)?,
    });
    println!(
        "alpha {alpha}: departure period {:.10} TU, target period {:.10} TU",
        departure.period, target.period
    );
    rec.write_text("orbits.json", &serde_json::to_string_pretty(&json).expect("json"))?;
    rec.write_csv("departure_orbit.csv", |w| write_rows(w, &orbit_rows(&departure)))?;
    rec.write_csv("target_orbit.csv", |w| write_rows(w, &orbit_rows(&target)))?;
    rec.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct PropagationSummary {
    index: usize,
    final_time: f64,
    final_mass: f64,
    switch_count: usize,
    nodes: usize,
}

pub fn propagate(ctx: &Context, costate_file: &Path, alpha: f64, duration: Option<f64>) -> Result<(), CliError> {
    check_alpha(alpha)?;
    let cfg = &ctx.config;
    let lams = load_costates(costate_file)?;
    let mut rec = ctx.recorder("propagate", &[costate_file])?;
    let screening = ctx.context_at(alpha)?;
    let duration = duration.unwrap_or(cfg.screening.tau_s_max);
    if !(duration > 0.0) {
        return Err(CliError::Config(format!("duration must be positive, got {duration}")));
    }
    let prop = Propagator::new(&screening.sys, &screening.sc, cfg.screening.propagator);
    let mut summary = Vec::new();
    for (i, lam) in lams.iter().enumerate() {
        let y0 = screening
            .initial_state(&Costate::from_row_slice(lam))
            .map_err(CliError::numerical)?;
        let traj = prop.run(&y0, duration).map_err(|e| CliError::Numerical(format!("costate {i}: {e}")))?;
        rec.write_csv(&format!("trajectory_{i:04}.csv"), |w| traj.write_dump(&prop.field, w))?;
        let last = traj.final_node();
        summary.push(PropagationSummary {
            index: i,
            final_time: last.t,
            final_mass: last.y[6],
            switch_count: traj.switch_count(),
            nodes: traj.nodes.len(),
        });
    }
    rec.write_csv("propagation_summary.csv", |w| write_rows(w, &summary))?;
    rec.finish()?;
    Ok(())
}

/// Screens every costate in `samples` at `alpha`. Failed evaluations are
/// listed in the manifest and make the command fail after the successful
/// rows are written.
pub fn screen(ctx: &Context, samples: &Path, alpha: f64) -> Result<(), CliError> {
    check_alpha(alpha)?;
    let lams = load_costates(samples)?;
    let mut rec = ctx.recorder("screen", &[samples])?;
    let screening = ctx.context_at(alpha)?;
    let results: Vec<Result<ScreeningResult, String>> = lams
        .par_iter()
        .map(|lam| screening.evaluate(&Costate::from_row_slice(lam)).map_err(|e| e.to_string()))
        .collect();
    let ok: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().map(|r| r.j_star)).collect();
    let cal = calibrate_reward(&ok);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, (lam, r)) in lams.iter().zip(&results).enumerate() {
        match r {
            Ok(r) => rows.push(CostateSample {
                alpha,
                lam_r1: lam[0],
                lam_r2: lam[1],
                lam_v1: lam[2],
                lam_v2: lam[3],
                tau_s_star: r.tau_s_star,
                tau_f_star: r.tau_f_star,
                e: r.e,
                dm_frac: r.dm_frac,
                j_star: r.j_star,
                reward: cal.map_or(1.0, |c| c.stamp(r.j_star)),
                chain_id: i,
                stage: 0,
                iteration: 0,
            }),
            Err(e) => failures.push(serde_json::json!({ "index": i, "error": e })),
        }
    }
    rec.write_csv("screening.csv", |w| write_samples(w, &rows))?;
    let failed = failures.len();
    rec.note("failures", failures);
    rec.finish()?;
    println!("screened {} costates, {failed} failed", lams.len());
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} of {} costates failed to screen", lams.len())));
    }
    Ok(())
}

pub struct HomotopyArgs {
    pub initial: Option<PathBuf>,
    pub resume: bool,
    /// Stop cleanly after this many completed stages (for staged runs).
    pub stop_after: Option<usize>,
}

const STOP_MARKER: &str = "stop requested";

pub fn homotopy(ctx: &Context, args: &HomotopyArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let initial_file = args.initial.clone().or_else(|| cfg.homotopy.initial.clone());
    let given = initial_file.as_deref().map(load_costates).transpose()?;
    let inputs: Vec<&Path> = initial_file.iter().map(PathBuf::as_path).collect();
    let mut rec = ctx.recorder("homotopy", &inputs)?;
    let initial = initial_costates(cfg, given.as_deref())?;
    let sigma_init = spread_of(&initial)?;
    rec.note("sigma_init", sigma_init);

    let snapshot_path = ctx.out_dir.join(SNAPSHOT_FILE);
    let resume = if args.resume {
        let text = std::fs::read_to_string(&snapshot_path).map_err(|e| CliError::io(&snapshot_path, e))?;
        let snap: Snapshot<ScreeningResult> =
            Snapshot::from_json(&text).map_err(|e| CliError::ResumeMismatch(format!("unreadable snapshot: {e}")))?;
        if snap.fingerprint != rec.id() {
            return Err(CliError::ResumeMismatch(format!(
                "snapshot belongs to run {}, this run is {}",
                snap.fingerprint,
                rec.id()
            )));
        }
        Some(snap)
    } else {
        None
    };

    let stop_after = args.stop_after;
    let on_stage = |snap: &Snapshot<ScreeningResult>| -> Result<(), String> {
        let tmp = snapshot_path.with_extension("json.tmp");
        let text = snap.to_json().map_err(|e| e.to_string())?;
        std::fs::write(&tmp, text).map_err(|e| e.to_string())?;
        std::fs::rename(&tmp, &snapshot_path).map_err(|e| e.to_string())?;
        eprintln!("stage {} done", snap.completed_stages);
        if stop_after == Some(snap.completed_stages) {
            return Err(STOP_MARKER.into());
        }
        Ok(())
    };
    let run = match run_screening_homotopy(cfg, &initial, &sigma_init, rec.id(), resume, on_stage) {
        Ok(run) => run,
        Err(costate_core::mcmc::HomotopyError::Callback(m)) if m == STOP_MARKER => {
            println!("stopped after stage {}; continue with --resume", stop_after.unwrap_or(0));
            rec.finish()?;
            return Ok(());
        }
        Err(e) => return Err(homotopy_error(e)),
    };
    let out = &run.output;
    rec.write_csv("samples.csv", |w| write_samples(w, &run.samples))?;
    rec.write_csv("traces.csv", |w| write_traces(w, &out.traces))?;
    let feasible = feasible_filter(&run.samples, costate_core::analysis::DEFAULT_FEASIBILITY_TOL).len();
    rec.note("records", run.samples.len());
    rec.note("feasible_records", feasible);
    rec.note("surviving_chains", out.surviving_chains);
    rec.note("dead_chains", &out.dead);
    rec.note("objective_evals", out.objective_evals);
    rec.note("gradient_evals", out.gradient_evals);
    rec.note("acceptance", out.accepted as f64 / out.proposals.max(1) as f64);
    rec.note("failed_proposals", out.failures);
    rec.note("reward_calibration", run.calibration);
    rec.note("stages", &run.stages);
    rec.finish()?;
    println!(
        "{} records ({feasible} feasible), {} of {} chains survived, acceptance {:.3}",
        run.samples.len(),
        out.surviving_chains,
        cfg.homotopy.chains,
        out.accepted as f64 / out.proposals.max(1) as f64
    );
    if out.surviving_chains == 0 {
        return Err(CliError::Numerical("every chain failed".into()));
    }
    Ok(())
}

fn training_examples(samples: &[CostateSample]) -> Vec<TrainingExample> {
    samples
        .iter()
        .map(|s| TrainingExample {
            x: s.lam().to_vec(),
            alpha: s.alpha,
            reward: s.reward,
            j_star: Some(s.j_star),
        })
        .collect()
}

#[derive(Serialize)]
struct LossRow {
    window: usize,
    loss: f64,
}

fn write_model(rec: &mut RunRecorder, name: &str, ck: &Checkpoint, report: &TrainingReport) -> Result<(), CliError> {
    rec.write_text(name, &ck.to_json().map_err(CliError::numerical)?)?;
    let rows: Vec<LossRow> = report
        .loss_history
        .iter()
        .enumerate()
        .map(|(window, &loss)| LossRow { window, loss })
        .collect();
    rec.write_csv(&format!("{}_loss.csv", name.trim_end_matches(".json")), |w| write_rows(w, &rows))?;
    rec.note("steps", report.steps);
    rec.note("examples", report.examples);
    Ok(())
}

fn diffusion_config(cfg: &RunConfig) -> costate_core::diffusion::DiffusionConfig {
    // One master seed drives every stage of a run.
    costate_core::diffusion::DiffusionConfig {
        seed: cfg.seed,
        ..cfg.diffusion.clone()
    }
}

pub fn train_model(ctx: &Context, dataset: &Path) -> Result<(), CliError> {
    let samples = load_samples(dataset)?;
    let mut rec = ctx.recorder("train", &[dataset])?;
    let (ck, report) = train(&training_examples(&samples), &diffusion_config(&ctx.config), rec.id())
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_model(&mut rec, "model.json", &ck, &report)?;
    rec.finish()?;
    println!("trained on {} records", report.examples);
    Ok(())
}

pub fn finetune_model(ctx: &Context, dataset: &Path, model: &Path) -> Result<(), CliError> {
    let samples = load_samples(dataset)?;
    let baseline = load_checkpoint(model)?;
    let mut rec = ctx.recorder("finetune", &[dataset, model])?;
    let (ck, report) = finetune(&baseline, &training_examples(&samples), &diffusion_config(&ctx.config), rec.id())
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_model(&mut rec, "finetuned.json", &ck, &report)?;
    rec.finish()?;
    println!("fine-tuned on {} records", report.examples);
    Ok(())
}

pub fn sample_model(ctx: &Context, model: &Path, alpha: f64, count: usize, guidance: Option<f64>) -> Result<(), CliError> {
    check_alpha(alpha)?;
    let ck = load_checkpoint(model)?;
    if ck.stats.dim() != 4 {
        return Err(CliError::Config(format!("model generates {}-D vectors, costates are 4-D", ck.stats.dim())));
    }
    let mut rec = ctx.recorder("sample", &[model])?;
    let w = guidance.unwrap_or(ck.config.guidance);
    let lams: Vec<[f64; 4]> = sample(&ck, alpha, w, count, ctx.config.seed)
        .into_iter()
        .map(|v| [v[0], v[1], v[2], v[3]])
        .collect();
    if lams.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("the model produced non-finite samples".into()));
    }
    rec.note("alpha", alpha);
    rec.note("guidance", w);
    rec.write_csv("samples.csv", |w| write_costates(w, &lams))?;
    rec.finish()?;
    println!("wrote {count} samples at alpha {alpha}");
    Ok(())
}

pub fn analyze_feasible(ctx: &Context, dataset: &Path, tol: f64) -> Result<(), CliError> {
    let samples = load_samples(dataset)?;
    let mut rec = ctx.recorder("analyze-feasible", &[dataset])?;
    let kept = feasible_filter(&samples, tol);
    rec.note("tolerance", tol);
    rec.write_csv("feasible.csv", |w| write_samples(w, &kept))?;
    rec.finish()?;
    println!("{} of {} records feasible at e < {tol:e}", kept.len(), samples.len());
    Ok(())
}

fn objective_points(cfg: &RunConfig, samples: &[CostateSample]) -> Result<Vec<ObjectivePoint>, CliError> {
    let sc = cfg.spacecraft_nu()?;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let units = cfg.system.interpolate(s.alpha).map_err(|e| CliError::Config(e.to_string()))?.units;
            objective_point(s, i, &sc, &units).map_err(CliError::numerical)
        })
        .collect()
}

#[derive(Serialize)]
struct ParetoRow {
    source_id: usize,
    alpha: f64,
    dv_mps: f64,
    tof_days: f64,
    pareto: bool,
    hamiltonian: Option<f64>,
}

/// Hamiltonian at the end of the screened transfer (a local-optimality
/// indicator for free-final-time problems).
fn terminal_hamiltonian(cfg: &RunConfig, s: &CostateSample) -> Result<f64, CliError> {
    let ctx = screening_context(cfg, s.alpha, cfg.weights).map_err(CliError::Numerical)?;
    let y0 = ctx.initial_state(&Costate::from_row_slice(&s.lam())).map_err(CliError::numerical)?;
    let traj = ctx.propagator().run(&y0, s.tau_s_star).map_err(CliError::numerical)?;
    let node = traj.final_node();
    let field = ctx.propagator().field;
    field
        .hamiltonian(&node.y, field.thrust(node.thrust_on))
        .map_err(CliError::numerical)
}

pub fn analyze_pareto(ctx: &Context, dataset: &Path, with_hamiltonian: bool) -> Result<(), CliError> {
    let samples = load_samples(dataset)?;
    let mut rec = ctx.recorder("analyze-pareto", &[dataset])?;
    let points = objective_points(&ctx.config, &samples)?;
    let front = pareto_front(&points);
    let mut on_front = vec![false; points.len()];
    for p in &front {
        on_front[p.source_id] = true;
    }
    let rows = points
        .iter()
        .zip(&samples)
        .map(|(p, s)| {
            let hamiltonian = with_hamiltonian
                .then(|| terminal_hamiltonian(&ctx.config, s))
                .transpose()?;
            Ok(ParetoRow {
                source_id: p.source_id,
                alpha: s.alpha,
                dv_mps: p.dv_mps,
                tof_days: p.tof_days,
                pareto: on_front[p.source_id],
                hamiltonian,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rec.write_csv("objectives.csv", |w| write_rows(w, &rows))?;
    rec.finish()?;
    println!("{} points, {} on the Pareto front", points.len(), front.len());
    Ok(())
}

#[derive(serde::Deserialize)]
struct PointRow {
    dv: f64,
    tof: f64,
}

/// Shortest decimal that survives 12 significant digits; keeps printed
/// values like 0.55 free of binary noise.
fn tidy(v: f64) -> String {
    let s = format!("{:.12}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

pub enum HypervolumeInput<'a> {
    Dataset(&'a Path),
    /// Columns `dv,tof`; raw units unless `normalized`.
    Points { path: &'a Path, normalized: bool },
}

pub fn analyze_hypervolume(ctx: &Context, input: HypervolumeInput<'_>) -> Result<(), CliError> {
    let hv_cfg = HypervolumeConfig::default();
    let (path, value, clipped, front) = match input {
        HypervolumeInput::Dataset(path) => {
            let points = objective_points(&ctx.config, &load_samples(path)?)?;
            let hv = hypervolume(&points, &hv_cfg).map_err(|e| CliError::Config(e.to_string()))?;
            (path, hv.value, hv.clipped, hv.front_size)
        }
        HypervolumeInput::Points { path, normalized } => {
            let rows: Vec<PointRow> = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .from_reader(open(path)?)
                .deserialize()
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::io(path, e))?;
            if normalized {
                let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.dv, r.tof)).collect();
                (path, hypervolume_normalized(&pts, hv_cfg.reference), 0, pts.len())
            } else {
                let points: Vec<ObjectivePoint> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| ObjectivePoint {
                        dv_mps: r.dv,
                        tof_days: r.tof,
                        source_id: i,
                    })
                    .collect();
                let hv = hypervolume(&points, &hv_cfg).map_err(|e| CliError::Config(e.to_string()))?;
                (path, hv.value, hv.clipped, hv.front_size)
            }
        }
    };
    let mut rec = ctx.recorder("analyze-hypervolume", &[path])?;
    rec.note("hypervolume", value);
    rec.note("clipped_points", clipped);
    rec.note("front_size", front);
    rec.write_csv("hypervolume.csv", |w| -> std::io::Result<()> {
        writeln!(w, "hypervolume,front_size,clipped")?;
        writeln!(w, "{value},{front},{clipped}")
    })?;
    rec.finish()?;
    println!("{}", tidy(value));
    if clipped > 0 {
        eprintln!("{clipped} front points fell outside the normalization bounds and were clipped");
    }
    Ok(())
}

pub fn analyze_traces(ctx: &Context, traces: &Path) -> Result<Vec<StageSummary>, CliError> {
    let rows = read_traces(open(traces)?).map_err(|e| CliError::io(traces, e))?;
    let mut rec = ctx.recorder("analyze-traces", &[traces])?;
    let summary = summarize_traces(&rows);
    rec.write_csv("stage_summary.csv", |w| write_rows(w, &summary))?;
    rec.finish()?;
    println!("stage  iters  mean_J      min_J       mean_e      mean_dm     mean_tau_s  acceptance");
    for s in &summary {
        println!(
            "{:<6} {:<6} {:<11.4e} {:<11.4e} {:<11.4e} {:<11.4e} {:<11.4} {:.3}",
            s.stage, s.iterations, s.mean_j, s.min_j, s.mean_e, s.mean_dm, s.mean_tau_s, s.acceptance
        );
    }
    Ok(summary)
}
