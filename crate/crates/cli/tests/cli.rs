//! End-to-end checks of the `costate` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use costate_cli::config::RunConfig;
use costate_core::dataset::{read_samples, write_costates};

fn costate(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costate"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("COSTATE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.seed = 5;
    cfg.screening.tau_s_max = 20.0;
    cfg.orbits.points = 500;
    cfg.homotopy.chains = 4;
    cfg.homotopy.burn_in = 1;
    cfg.homotopy.stages = cfg.homotopy.stages[..2].to_vec();
    for s in &mut cfg.homotopy.stages {
        s.iterations = 2;
    }
    cfg.homotopy.stages[0].alpha = 0.0;
    cfg.validate().unwrap();
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn hypervolume_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("front.csv");
    fs::write(&points, "dv,tof\n0.2,0.5\n0.5,0.2\n").unwrap();
    let o = costate(
        &["analyze", "hypervolume", "--points", points.to_str().unwrap(), "--normalized"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "0.55");
    assert!(dir.path().join("analyze-hypervolume.manifest.json").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = costate(&["screen", "--samples", "/nonexistent/lam.csv", "--alpha", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nnot_a_key = 3\n").unwrap();
    let o = costate(&["--config", cfg.to_str().unwrap(), "orbits", "--alpha", "0.0"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = costate(&["orbits", "--alpha", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_reference_config_matches_defaults() {
    let cfg = RunConfig::load(&repo_file("configs/jupiter_europa_to_saturn_titan_mala.toml")).unwrap();
    let def = RunConfig::default();
    assert_eq!(cfg.system, def.system);
    assert_eq!(cfg.spacecraft, def.spacecraft);
    assert_eq!(cfg.weights, def.weights);
    assert_eq!(cfg.homotopy.chains, def.homotopy.chains);
    assert_eq!(cfg.homotopy.burn_in, def.homotopy.burn_in);
    assert_eq!(cfg.homotopy.stages, def.homotopy.stages);
    assert_eq!(cfg.diffusion, def.diffusion);
}

#[test]
fn resumed_homotopy_matches_uninterrupted_and_rescreens() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    // The shipped seeds give switching extremals rather than the flat
    // start-node region that random draws mostly land in.
    let seeds = repo_file("data/seeds_alpha0.csv");
    let seeds = seeds.to_str().unwrap();
    let full = dir.path().join("full");
    let staged = dir.path().join("staged");

    let o = costate(&["--config", cfg, "homotopy", "--initial", seeds], &full);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = costate(&["--config", cfg, "homotopy", "--initial", seeds, "--stop-after", "1"], &staged);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!staged.join("samples.csv").exists());
    let o = costate(&["--config", cfg, "homotopy", "--initial", seeds, "--resume"], &staged);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let a = fs::read(full.join("samples.csv")).unwrap();
    let b = fs::read(staged.join("samples.csv")).unwrap();
    assert_eq!(a, b);
    let samples = read_samples(a.as_slice()).unwrap();
    assert!(!samples.is_empty());
    assert!(samples.iter().all(|s| s.tau_s_star > 0.0));

    // A different config must not pick up the snapshot.
    let other = dir.path().join("other.toml");
    let text = fs::read_to_string(cfg).unwrap().replacen("seed = 5", "seed = 6", 1);
    fs::write(&other, text).unwrap();
    let o = costate(&["--config", other.to_str().unwrap(), "homotopy", "--initial", seeds, "--resume"], &staged);
    assert_eq!(o.status.code(), Some(4));

    // Stored objective values agree with a fresh screening of the same costates.
    let alpha = samples.last().unwrap().alpha;
    let last: Vec<_> = samples.iter().filter(|s| s.alpha == alpha).collect();
    let lam_file = dir.path().join("lam.csv");
    let lams: Vec<[f64; 4]> = last.iter().map(|s| s.lam()).collect();
    write_costates(fs::File::create(&lam_file).unwrap(), &lams).unwrap();
    let rescreen = dir.path().join("rescreen");
    let o = costate(
        &["--config", cfg, "screen", "--samples", lam_file.to_str().unwrap(), "--alpha", &alpha.to_string()],
        &rescreen,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fresh = read_samples(fs::File::open(rescreen.join("screening.csv")).unwrap()).unwrap();
    assert_eq!(fresh.len(), last.len());
    for (s, f) in last.iter().zip(&fresh) {
        assert!((s.j_star - f.j_star).abs() <= 1e-10 * s.j_star.abs().max(1.0), "{} vs {}", s.j_star, f.j_star);
        assert!((s.e - f.e).abs() <= 1e-10);
        assert_eq!(s.tau_s_star, f.tau_s_star);
    }
}
