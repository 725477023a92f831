//! Run configuration: one strict JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{validate_potential, LangevinParams, Potential};
use crate::error::{Error, Result};
use crate::evaluate::EvalSettings;
use crate::msm::MsmParams;
use crate::network::NetConfig;
use crate::rng::stage_seed;
use crate::sampling::{OdeOptions, Scheme};
use crate::system::{Conformation, SystemSpec};
use crate::train::{TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSelection {
    Mars,
    FixedLag,
    Both,
}

impl TrainSelection {
    pub fn modes(self) -> Vec<TrainMode> {
        match self {
            TrainSelection::Mars => vec![TrainMode::Mars],
            TrainSelection::FixedLag => vec![TrainMode::FixedLag],
            TrainSelection::Both => vec![TrainMode::Mars, TrainMode::FixedLag],
        }
    }
}

/// One ensemble to generate: which checkpoint drives which scheme. The
/// hybrid scheme always uses both checkpoints and ignores `model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlan {
    pub model: TrainMode,
    pub scheme: Scheme,
}

impl SamplePlan {
    pub fn label(&self) -> String {
        match self.scheme {
            Scheme::Hybrid => "hybrid".to_string(),
            s => format!(
                "{}_{}",
                self.model.name(),
                serde_json::to_value(s).unwrap().as_str().unwrap()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleParams {
    pub plans: Vec<SamplePlan>,
    pub budget: usize,
    pub first_layer: usize,
    pub n_anchors: usize,
    pub rollout_len: usize,
    pub ode: OdeOptions,
    /// Conditioning frame; defaults to the first frame of the first replica.
    pub x0: Option<Vec<f64>>,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            plans: vec![
                SamplePlan {
                    model: TrainMode::Mars,
                    scheme: Scheme::Tree,
                },
                SamplePlan {
                    model: TrainMode::FixedLag,
                    scheme: Scheme::Autoregressive,
                },
            ],
            budget: 100,
            first_layer: 200,
            n_anchors: 10,
            rollout_len: 9,
            ode: OdeOptions::default(),
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub system: SystemSpec,
    pub potential: Potential,
    /// `langevin.seed` is not used: replica seeds derive from the global seed.
    pub langevin: LangevinParams,
    pub n_replicas: usize,
    /// Starting coordinates of every replica; defaults to a local minimum of
    /// the potential.
    pub initial: Option<Vec<f64>>,
    pub msm: MsmParams,
    pub train_mode: TrainSelection,
    pub train: TrainConfig,
    pub sample: SampleParams,
    pub metrics: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            system: SystemSpec::uniform(1, 2),
            potential: Potential::default(),
            langevin: LangevinParams::default(),
            n_replicas: 5,
            initial: None,
            msm: MsmParams {
                n_macro: 3,
                lag: 50,
                ..MsmParams::default()
            },
            train_mode: TrainSelection::Both,
            train: TrainConfig {
                lr: 1e-3,
                ema_decay: 0.995,
                batch_size: 32,
                epochs: 60,
                steps_per_epoch: 50,
                net: NetConfig {
                    hidden: 64,
                    n_blocks: 2,
                    ..NetConfig::default()
                },
                ..TrainConfig::default()
            },
            sample: SampleParams::default(),
            metrics: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_json(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        stage_seed(self.seed, stage)
    }

    pub fn kt(&self) -> f64 {
        self.langevin.temperature
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.system.validate().map_err(cfg_err)?;
        validate_potential(&self.potential, &self.system, self.kt()).map_err(cfg_err)?;
        self.langevin.validate().map_err(cfg_err)?;
        if self.n_replicas == 0 {
            return Err(Error::Config("n_replicas must be at least 1".into()));
        }
        if let Some(x) = &self.initial {
            if x.len() != self.system.n_coords() {
                return Err(Error::Config(format!(
                    "initial has {} coordinates, system needs {}",
                    x.len(),
                    self.system.n_coords()
                )));
            }
        }
        let m = &self.msm;
        if m.n_micro == 0 || m.n_macro == 0 || m.n_macro > m.n_micro {
            return Err(Error::Config("msm needs 1 <= n_macro <= n_micro".into()));
        }
        if m.lag == 0 {
            return Err(Error::Config("msm.lag must be at least 1".into()));
        }
        if !(m.variance_cut > 0.0 && m.variance_cut <= 1.0) {
            return Err(Error::Config("msm.variance_cut must lie in (0, 1]".into()));
        }
        self.train.validate()?;
        let s = &self.sample;
        if s.budget == 0 || s.first_layer == 0 || s.n_anchors == 0 || s.ode.n_steps == 0 {
            return Err(Error::Config(
                "sample.budget, first_layer, n_anchors and ode.n_steps must be at least 1".into(),
            ));
        }
        if let Some(x) = &s.x0 {
            if x.len() != self.system.n_coords() {
                return Err(Error::Config("sample.x0 does not match the system".into()));
            }
        }
        self.metrics.histogram.validate().map_err(cfg_err)?;
        Ok(())
    }

    /// Replica starting point.
    pub fn initial_conformation(&self) -> Conformation {
        if let Some(x) = &self.initial {
            return Conformation::new(x.clone());
        }
        let sys = &self.system;
        let d = sys.dim;
        let guess: Vec<f64> = match &self.potential {
            Potential::TripleWell2d { radius, .. } => (0..sys.n_particles).flat_map(|_| [0.0, *radius]).collect(),
            Potential::DoubleWell1d { .. } => vec![-1.0; sys.n_coords()],
            Potential::Harmonic { .. } => vec![0.0; sys.n_coords()],
            Potential::TorsionChain { bond_length, .. } => (0..sys.n_particles)
                .flat_map(|i| {
                    let mut p = vec![0.0; d];
                    p[0] = 0.8 * bond_length * i as f64;
                    if d > 1 {
                        p[1] = 0.6 * bond_length * (i % 2) as f64;
                    }
                    if d > 2 {
                        p[2] = 0.3 * bond_length * ((i / 2) % 2) as f64;
                    }
                    p
                })
                .collect(),
        };
        Conformation::new(self.potential.local_minimum(&guess, d))
    }
}
