//! Run configuration file.

use std::path::{Path, PathBuf};

use costate_core::diffusion::DiffusionConfig;
use costate_core::mcmc::{KernelConfig, KernelKind, StageSpec};
use costate_core::orbits::{OrbitOptions, DEFAULT_ORBIT_POINTS};
use costate_core::screening::{ObjectiveWeights, ScreeningOptions};
use costate_core::systems::{spacecraft_to_nu, SpacecraftConfig, SpacecraftSi, SystemEndpoints};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs. Every section is optional and falls back to the
/// reference mission values; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub system: SystemEndpoints,
    pub spacecraft: SpacecraftSi,
    pub orbits: OrbitConfig,
    pub screening: ScreeningOptions,
    pub weights: ObjectiveWeights,
    pub homotopy: HomotopyConfig,
    pub diffusion: DiffusionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitConfig {
    /// Samples per target orbit period.
    pub points: usize,
    pub options: OrbitOptions,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            points: DEFAULT_ORBIT_POINTS,
            options: OrbitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomotopyConfig {
    pub chains: usize,
    /// Cumulative iterations discarded before records are collected.
    pub burn_in: u64,
    /// Costate file that seeds the chains (cycled if shorter than `chains`).
    /// Relative paths resolve against the config file.
    pub initial: Option<PathBuf>,
    /// Spread of the normal draw used when no initial file is given.
    pub initial_spread: [f64; 4],
    pub stages: Vec<StageConfig>,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        let sigma_init = [0.0468, 0.0010, 0.0013, 0.0353];
        let mala = |alpha: f64, iterations: usize| StageConfig {
            alpha,
            iterations,
            kind: KernelKind::Mala,
            sigma_factor: 0.02,
            epsilon: 2.5,
            leapfrog_steps: 1,
            beta: None,
        };
        let mut stages: Vec<StageConfig> = (1..=10).map(|k| mala(k as f64 / 10.0, 25)).collect();
        stages.push(StageConfig {
            sigma_factor: 0.005,
            epsilon: 0.1,
            beta: Some(200_000.0),
            ..mala(1.0, 100)
        });
        Self {
            chains: 1920,
            burn_in: 270,
            initial: None,
            initial_spread: sigma_init,
            stages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub kind: KernelKind,
    /// Proposal standard deviations as a multiple of the initial spread.
    pub sigma_factor: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub leapfrog_steps: usize,
    /// Overrides `weights.beta` for this stage.
    #[serde(default)]
    pub beta: Option<f64>,
}

fn one() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            system: SystemEndpoints::default(),
            spacecraft: SpacecraftSi::default(),
            orbits: OrbitConfig::default(),
            screening: ScreeningOptions::default(),
            weights: ObjectiveWeights {
                kappa1: 1.2,
                kappa2: 1e-6,
                beta: 10_000.0,
            },
            homotopy: HomotopyConfig::default(),
            diffusion: DiffusionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config and resolves the initial-sample path against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(initial) = &cfg.homotopy.initial {
            if initial.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.homotopy.initial = Some(base.join(initial));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.system.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.spacecraft_nu()?;
        self.weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.screening
            .propagator
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.screening.tau_s_max > 0.0) {
            return bad(format!("screening.tau_s_max must be positive, got {}", self.screening.tau_s_max));
        }
        if self.orbits.points < 2 {
            return bad("orbits.points must be at least 2".into());
        }
        self.diffusion.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let h = &self.homotopy;
        if h.chains == 0 {
            return bad("homotopy.chains must be positive".into());
        }
        if h.stages.is_empty() {
            return bad("homotopy.stages is empty".into());
        }
        let total: u64 = h.stages.iter().map(|s| s.iterations as u64).sum();
        if total > 0 && h.burn_in >= total {
            return bad(format!("homotopy.burn_in ({}) must be below the total iterations ({total})", h.burn_in));
        }
        if h.initial.is_none() && h.initial_spread.iter().any(|s| !(*s > 0.0)) {
            return bad("homotopy.initial_spread entries must be positive".into());
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, s) in h.stages.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.alpha) || s.alpha < prev {
                return bad(format!("stage {i}: alpha {} must lie in [0, 1] and not decrease", s.alpha));
            }
            prev = s.alpha;
            if !(s.sigma_factor > 0.0) {
                return bad(format!("stage {i}: sigma_factor must be positive"));
            }
            if !(s.epsilon >= 0.0) {
                return bad(format!("stage {i}: epsilon must be non-negative"));
            }
            if s.leapfrog_steps == 0 {
                return bad(format!("stage {i}: leapfrog_steps must be at least 1"));
            }
            if s.beta.is_some_and(|b| !(b > 0.0)) {
                return bad(format!("stage {i}: beta must be positive"));
            }
        }
        Ok(())
    }

    /// Spacecraft constants in the natural units of the first endpoint; the
    /// same values are used at every α.
    pub fn spacecraft_nu(&self) -> Result<SpacecraftConfig, CliError> {
        let si = &self.spacecraft;
        let sc = spacecraft_to_nu(si.m0_kg, si.isp_s, si.tmax_n, &self.system.units_start)
            .map(|s| SpacecraftConfig {
                dry_mass_kg: si.dry_mass_kg,
                ..s
            })
            .map_err(|e| CliError::Config(e.to_string()))?;
        sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sc)
    }

    pub fn stage_weights(&self, stage: &StageConfig) -> ObjectiveWeights {
        ObjectiveWeights {
            beta: stage.beta.unwrap_or(self.weights.beta),
            ..self.weights
        }
    }

    /// Kernel stages with proposal scales `sigma_factor × sigma_init`.
    pub fn stage_specs(&self, sigma_init: &[f64; 4]) -> Vec<StageSpec> {
        self.homotopy
            .stages
            .iter()
            .map(|s| StageSpec {
                alpha: s.alpha,
                iterations: s.iterations,
                kernel: KernelConfig {
                    kind: s.kind,
                    sigma: sigma_init.iter().map(|v| v * s.sigma_factor).collect(),
                    epsilon: s.epsilon,
                    leapfrog_steps: s.leapfrog_steps,
                },
            })
            .collect()
    }
}
