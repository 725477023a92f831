//! The six pipeline commands over an output directory:
//!
//! ```text
//! data/replica_{i}.mset, data/manifest.json      simulate
//! msm.json                                       build-msm
//! checkpoint_{mode}.msem, train_log_{mode}.json  train
//! samples/{label}_run{r}.mset + .json            sample
//! reports/{label}.json                           evaluate
//! report/summary.md, report/*.svg                report
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SamplePlan};
use crate::dynamics::{simulate, LangevinParams, Potential};
use crate::error::{Error, Result};
use crate::evaluate::{aggregate, evaluate_ensemble, oracle_reports, EvaluationReport};
use crate::io::{read_json, write_atomic, write_json, FrameSet};
use crate::msm::{build_msm, MarkovStateModel};
use crate::report::{render_histogram_svg, render_markdown};
use crate::rng::{hash_key, hash_str};
use crate::sampling::{
    autoregressive_sample, hybrid_sample, parallel_sample, tree_sample, GeneratedEnsemble, NetField, SampleContext,
    Scheme,
};
use crate::system::{Conformation, SystemSpec, Trajectory};
use crate::train::{read_checkpoint, train_epochs, write_checkpoint, TrainData, TrainLog, TrainMode, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub global_seed: u64,
    pub replica_seeds: Vec<u64>,
    pub files: Vec<String>,
    pub n_frames: Vec<usize>,
    pub system: SystemSpec,
    pub potential: Potential,
    pub langevin: LangevinParams,
    pub initial: Vec<f64>,
}

pub fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("data")
}

pub fn msm_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("msm.json")
}

pub fn checkpoint_path(cfg: &RunConfig, mode: TrainMode) -> PathBuf {
    cfg.out_dir.join(format!("checkpoint_{}.msem", mode.name()))
}

pub fn train_log_path(cfg: &RunConfig, mode: TrainMode) -> PathBuf {
    cfg.out_dir.join(format!("train_log_{}.json", mode.name()))
}

/// Wall-clock times are kept out of the training log so that the log is
/// reproducible byte for byte.
pub fn train_timing_path(cfg: &RunConfig, mode: TrainMode) -> PathBuf {
    cfg.out_dir.join(format!("train_timing_{}.json", mode.name()))
}

pub fn ensemble_path(cfg: &RunConfig, label: &str, run: usize) -> PathBuf {
    cfg.out_dir.join("samples").join(format!("{label}_run{run}.mset"))
}

pub fn report_path(cfg: &RunConfig, label: &str) -> PathBuf {
    cfg.out_dir.join("reports").join(format!("{label}.json"))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulationManifest> {
    cfg.validate()?;
    let x0 = cfg.initial_conformation();
    let stage = cfg.stage_seed("simulate");
    let seeds: Vec<u64> = (0..cfg.n_replicas as u64).map(|r| hash_key(stage, &[r])).collect();
    let trajs: Vec<Trajectory> = seeds
        .par_iter()
        .map(|&seed| {
            let lp = LangevinParams {
                seed,
                ..cfg.langevin.clone()
            };
            simulate(&cfg.potential, &cfg.system, &lp, &x0)
        })
        .collect::<Result<_>>()?;
    let dir = data_dir(cfg);
    let mut files = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        let name = format!("replica_{i}.mset");
        FrameSet::from_trajectory(t).write(&dir.join(&name))?;
        files.push(name);
    }
    let manifest = SimulationManifest {
        global_seed: cfg.seed,
        replica_seeds: seeds,
        files,
        n_frames: trajs.iter().map(|t| t.frames.len()).collect(),
        system: cfg.system.clone(),
        potential: cfg.potential.clone(),
        langevin: cfg.langevin.clone(),
        initial: x0.positions,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_replicas(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    let dir = data_dir(cfg);
    let manifest: SimulationManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.system != cfg.system {
        return Err(Error::InvalidArgument(
            "trajectories were simulated for a different system than the config describes".into(),
        ));
    }
    manifest
        .files
        .iter()
        .map(|f| {
            let path = dir.join(f);
            FrameSet::read(&path)?
                .into_trajectory(&cfg.system)
                .map_err(|e| Error::format(&path, e.to_string()))
        })
        .collect()
}

pub fn cmd_build_msm(cfg: &RunConfig) -> Result<MarkovStateModel> {
    cfg.validate()?;
    let trajs = load_replicas(cfg)?;
    let shortest = trajs.iter().map(|t| t.frames.len()).min().unwrap_or(0);
    let tica_lag = cfg.msm.tica_lag.unwrap_or(cfg.msm.lag);
    if cfg.msm.lag >= shortest || tica_lag >= shortest {
        return Err(Error::Config(format!(
            "msm lag {} (tica lag {tica_lag}) must be shorter than the shortest trajectory ({shortest} frames)",
            cfg.msm.lag
        )));
    }
    let seed = cfg.msm.seed.unwrap_or_else(|| cfg.stage_seed("msm"));
    let msm = build_msm(&trajs, &cfg.msm, seed)?;
    write_json(&msm_path(cfg), &msm)?;
    Ok(msm)
}

pub fn load_msm(cfg: &RunConfig) -> Result<MarkovStateModel> {
    read_json(&msm_path(cfg))
}

fn train_seed(cfg: &RunConfig, mode: TrainMode) -> u64 {
    cfg.stage_seed(&format!("train_{}", mode.name()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTiming {
    pub mode: TrainMode,
    pub epoch_seconds: Vec<f64>,
}

/// Trains every configured mode up to `train.epochs`, continuing from a
/// compatible checkpoint when one exists. The checkpoint and log are
/// rewritten after each epoch, so an abort keeps the last good weights.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<(TrainMode, TrainLog)>> {
    cfg.validate()?;
    let trajs = load_replicas(cfg)?;
    let msm = load_msm(cfg)?;
    let shortest = trajs.iter().map(|t| t.frames.len()).min().unwrap_or(0);
    let mut out = Vec::new();
    for mode in cfg.train_mode.modes() {
        if mode == TrainMode::FixedLag && cfg.train.fixed_lag >= shortest {
            return Err(Error::Config(format!(
                "train.fixed_lag {} must be shorter than the shortest trajectory ({shortest} frames)",
                cfg.train.fixed_lag
            )));
        }
        let seed = train_seed(cfg, mode);
        let ck = checkpoint_path(cfg, mode);
        let log_path = train_log_path(cfg, mode);
        let fresh = || -> Result<(TrainState, TrainLog)> {
            let state = TrainState::new(mode, cfg.train.net.clone(), cfg.system.n_labels(), seed)?;
            let log = TrainLog {
                mode,
                seed,
                n_params: state.live.len(),
                epochs: Vec::new(),
            };
            Ok((state, log))
        };
        let (mut state, mut log) = match (read_checkpoint(&ck), read_json::<TrainLog>(&log_path)) {
            (Ok(s), Ok(l))
                if s.mode == mode
                    && s.seed == seed
                    && s.net_config == cfg.train.net
                    && s.n_labels == cfg.system.n_labels()
                    && l.epochs.len() as u64 == s.epochs_done
                    && s.epochs_done <= cfg.train.epochs as u64 =>
            {
                (s, l)
            }
            _ => fresh()?,
        };
        let mut timing = TrainTiming {
            mode,
            epoch_seconds: match read_json::<TrainTiming>(&train_timing_path(cfg, mode)) {
                Ok(t) if t.epoch_seconds.len() as u64 == state.epochs_done => t.epoch_seconds,
                _ => vec![f64::NAN; state.epochs_done as usize],
            },
        };
        let data = TrainData::new(&trajs, (mode == TrainMode::Mars).then_some(&msm))?;
        let remaining = cfg.train.epochs - state.epochs_done as usize;
        write_checkpoint(&ck, &state)?;
        write_json(&log_path, &log)?;
        let mut clock = Instant::now();
        train_epochs(&mut state, &data, &cfg.train, remaining, &mut log, |s, l| {
            timing.epoch_seconds.push(clock.elapsed().as_secs_f64());
            clock = Instant::now();
            write_checkpoint(&ck, s)?;
            write_json(&log_path, l)?;
            write_json(&train_timing_path(cfg, mode), &timing)
        })?;
        out.push((mode, log));
    }
    Ok(out)
}

fn load_field(cfg: &RunConfig, mode: TrainMode) -> Result<NetField> {
    let path = checkpoint_path(cfg, mode);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "missing {} checkpoint {}",
            mode.name(),
            path.display()
        )));
    }
    let state = read_checkpoint(&path)?;
    if state.mode != mode {
        return Err(Error::format(&path, format!("checkpoint holds mode {}", state.mode.name())));
    }
    NetField::from_state(&state, cfg.system.labels.clone())
}

pub fn sample_origin(cfg: &RunConfig) -> Result<Conformation> {
    match &cfg.sample.x0 {
        Some(x) => Ok(Conformation::new(x.clone())),
        None => {
            let dir = data_dir(cfg);
            let manifest: SimulationManifest = read_json(&dir.join("manifest.json"))?;
            let first = manifest
                .files
                .first()
                .ok_or_else(|| Error::InvalidArgument("no replicas listed in the manifest".into()))?;
            let fs = FrameSet::read(&dir.join(first))?;
            fs.frames
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidArgument("first replica is empty".into()))
        }
    }
}

fn run_seed(cfg: &RunConfig, label: &str, run: usize) -> u64 {
    hash_key(cfg.stage_seed("sample"), &[hash_str(label), run as u64])
}

/// Generates one ensemble for `plan` with the seed of inference run `run`.
pub fn sample_plan(cfg: &RunConfig, plan: &SamplePlan, run: usize, x0: &Conformation) -> Result<GeneratedEnsemble> {
    let label = plan.label();
    let ctx = SampleContext {
        system: &cfg.system,
        ode: cfg.sample.ode,
        seed: run_seed(cfg, &label, run),
    };
    let s = &cfg.sample;
    match plan.scheme {
        Scheme::Hybrid => {
            let mars = load_field(cfg, TrainMode::Mars)?;
            let base = load_field(cfg, TrainMode::FixedLag)?;
            hybrid_sample(&mars, &base, &ctx, x0, s.n_anchors, s.rollout_len)
        }
        Scheme::Tree => tree_sample(&load_field(cfg, plan.model)?, &ctx, x0, s.budget, s.first_layer),
        Scheme::Parallel => parallel_sample(&load_field(cfg, plan.model)?, &ctx, x0, s.budget),
        Scheme::Autoregressive => autoregressive_sample(&load_field(cfg, plan.model)?, &ctx, x0, s.budget),
    }
}

pub fn write_ensemble(path: &Path, ens: &GeneratedEnsemble, system: &SystemSpec, temperature: f64) -> Result<()> {
    let fs = FrameSet {
        n_particles: system.n_particles,
        dim: system.dim,
        save_interval: 0.0,
        temperature,
        seed: ens.seed,
        frames: ens.frames.clone(),
    };
    fs.write(path)?;
    write_json(&path.with_extension("json"), &ens.sidecar())
}

pub fn cmd_sample(cfg: &RunConfig, runs: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let x0 = sample_origin(cfg)?;
    x0.check(&cfg.system)?;
    let mut written = Vec::new();
    for plan in &cfg.sample.plans {
        for run in 0..runs.max(1) {
            let ens = sample_plan(cfg, plan, run, &x0)?;
            let path = ensemble_path(cfg, &plan.label(), run);
            write_ensemble(&path, &ens, &cfg.system, cfg.kt())?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_ensemble_frames(path: &Path, system: &SystemSpec) -> Result<Vec<Conformation>> {
    let fs = FrameSet::read(path)?;
    if fs.n_particles != system.n_particles || fs.dim != system.dim {
        return Err(Error::Shape(format!(
            "{}: {} particles in {}D, the system has {} in {}D",
            path.display(),
            fs.n_particles,
            fs.dim,
            system.n_particles,
            system.dim
        )));
    }
    Ok(fs.frames)
}

pub fn cmd_evaluate(cfg: &RunConfig, runs: usize, oracle: bool) -> Result<Vec<EvaluationReport>> {
    cfg.validate()?;
    let trajs = load_replicas(cfg)?;
    let msm = load_msm(cfg)?;
    if msm.assigner.system != cfg.system {
        return Err(Error::Shape("msm.json was built for a different system".into()));
    }
    let reference: Vec<Conformation> = trajs.iter().flat_map(|t| t.frames.iter().cloned()).collect();
    let mut out = Vec::new();
    for plan in &cfg.sample.plans {
        let label = plan.label();
        let mut reports = Vec::new();
        for run in 0..runs.max(1) {
            let frames = read_ensemble_frames(&ensemble_path(cfg, &label, run), &cfg.system)?;
            reports.push(evaluate_ensemble(
                &format!("{label}_run{run}"),
                &reference,
                &frames,
                &msm,
                cfg.kt(),
                &cfg.metrics,
            )?);
        }
        let agg = aggregate(&label, reports);
        write_json(&report_path(cfg, &label), &agg)?;
        out.push(agg);
    }
    if oracle {
        let agg = aggregate("oracle", oracle_reports(&trajs, &msm, cfg.kt(), &cfg.metrics)?);
        write_json(&report_path(cfg, "oracle"), &agg)?;
        out.push(agg);
    }
    Ok(out)
}

/// Renders the given report files, or every file under `reports/` when
/// none are given; columns are ordered by file name.
pub fn cmd_report(cfg: &RunConfig, files: &[PathBuf]) -> Result<PathBuf> {
    let mut paths: Vec<PathBuf> = if files.is_empty() {
        let dir = cfg.out_dir.join("reports");
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect()
    } else {
        files.to_vec()
    };
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no reports to render".into()));
    }
    let reports: Vec<EvaluationReport> = paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let dir = cfg.out_dir.join("report");
    let mut md = render_markdown(&reports);
    md.push_str("\n## Histograms\n\n");
    for r in &reports {
        let Some(first) = r.runs.first() else { continue };
        for (obs, h) in &first.histograms {
            let name = format!("{}__{}.svg", r.label, obs.replace(['/', '.'], "_"));
            write_atomic(&dir.join(&name), render_histogram_svg(&format!("{} {}", r.label, obs), h).as_bytes())?;
            md.push_str(&format!("![{} {}]({})\n", r.label, obs, name));
        }
    }
    let out = dir.join("summary.md");
    write_atomic(&out, md.as_bytes())?;
    Ok(out)
}
