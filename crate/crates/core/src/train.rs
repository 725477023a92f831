//! Optimizer, weight averaging, the training loop and the MSEM checkpoint.
//!
//! Checkpoint layout, little-endian: magic `MSEM`, version `u32`, mode tag
//! `u32` (0 mars, 1 fixed_lag), the six network dims and the label count as
//! `u32`, seed / Adam step / completed epochs as `u64`, a manifest
//! (`u32` tensor count, then per tensor `u32` name length, name bytes,
//! `u32` rank, `u64` dims), `u64` parameter count, and finally the live,
//! EMA, Adam first-moment and Adam second-moment arrays as `f64`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    draw_noise, loss_and_grad_with_noise, loss_only, sample_fixedlag_pairs, sample_msm_pairs_with, tokenize_pairs,
    FanOut, NoiseDraw, StatePools, TokenPair, TrainingPair,
};
use crate::io::write_atomic;
use crate::msm::MarkovStateModel;
use crate::network::{NetConfig, VelocityNet};
use crate::rng::keyed_rng;
use crate::system::{SystemSpec, Trajectory};

pub const MSEM_MAGIC: &[u8; 4] = b"MSEM";
pub const MSEM_VERSION: u32 = 1;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const KEY_PAIRS: u64 = 1;
const KEY_SHUFFLE: u64 = 2;
const KEY_NOISE: u64 = 3;
const KEY_HELD_OUT: u64 = 4;
const KEY_INIT: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "params {}, grad {}, moments {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * (mh / (vh.sqrt() + ADAM_EPS) + weight_decay * params[i]);
    }
    Ok(())
}

pub fn ema_update(live: &[f64], shadow: &mut [f64], decay: f64) {
    for (s, l) in shadow.iter_mut().zip(live) {
        *s = decay * *s + (1.0 - decay) * l;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Mars,
    FixedLag,
}

impl TrainMode {
    pub fn tag(self) -> u32 {
        match self {
            TrainMode::Mars => 0,
            TrainMode::FixedLag => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(TrainMode::Mars),
            1 => Some(TrainMode::FixedLag),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Mars => "mars",
            TrainMode::FixedLag => "fixed_lag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub n_src_states: usize,
    pub n_dst_per_src: usize,
    pub frames_per_pair: usize,
    /// Lag of the baseline, in saved frames.
    pub fixed_lag: usize,
    pub weight_decay: f64,
    pub held_out_pairs: usize,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            ema_decay: 0.999,
            batch_size: 32,
            epochs: 20,
            steps_per_epoch: 50,
            n_src_states: 2,
            n_dst_per_src: 2,
            frames_per_pair: 12,
            fixed_lag: 1,
            weight_decay: 0.0,
            held_out_pairs: 64,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("steps_per_epoch", self.steps_per_epoch),
            ("n_src_states", self.n_src_states),
            ("n_dst_per_src", self.n_dst_per_src),
            ("frames_per_pair", self.frames_per_pair),
            ("held_out_pairs", self.held_out_pairs),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("train.{name} must be at least 1")));
            }
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("train.ema_decay {} outside (0, 1)", self.ema_decay)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        self.net.validate()
    }

    pub fn fan_out(&self) -> FanOut {
        FanOut {
            n_src_states: self.n_src_states,
            n_dst_per_src: self.n_dst_per_src,
            frames_per_pair: self.frames_per_pair,
        }
    }
}

/// Everything needed to continue or sample from a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub mode: TrainMode,
    pub net_config: NetConfig,
    pub n_labels: usize,
    pub seed: u64,
    pub live: Vec<f64>,
    pub ema: Vec<f64>,
    pub adam: AdamState,
    pub epochs_done: u64,
}

impl TrainState {
    pub fn new(mode: TrainMode, net_config: NetConfig, n_labels: usize, seed: u64) -> Result<Self> {
        let net = VelocityNet::new(net_config.clone(), n_labels)?;
        let live = net.init_params(crate::rng::hash_key(seed, &[KEY_INIT]));
        Ok(TrainState {
            mode,
            net_config,
            n_labels,
            seed,
            ema: live.clone(),
            adam: AdamState::new(live.len()),
            live,
            epochs_done: 0,
        })
    }

    pub fn network(&self) -> Result<VelocityNet> {
        VelocityNet::new(self.net_config.clone(), self.n_labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub loss: f64,
    pub held_out_loss: f64,
    pub held_out_loss_ema: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: TrainMode,
    pub seed: u64,
    pub n_params: usize,
    pub epochs: Vec<EpochRecord>,
}

/// Training data with the per-run preprocessing done once.
pub struct TrainData<'a> {
    pub trajs: &'a [Trajectory],
    pub msm: Option<&'a MarkovStateModel>,
    pools: Option<StatePools>,
    pub labels: Vec<usize>,
}

impl<'a> TrainData<'a> {
    pub fn new(trajs: &'a [Trajectory], msm: Option<&'a MarkovStateModel>) -> Result<Self> {
        let system: &SystemSpec = &trajs
            .first()
            .ok_or_else(|| Error::InvalidArgument("no training trajectories".into()))?
            .system;
        if trajs.iter().any(|t| &t.system != system) {
            return Err(Error::InvalidArgument("training trajectories disagree on the system".into()));
        }
        if let Some(m) = msm {
            if m.frame_states.len() != trajs.len()
                || m.frame_states.iter().zip(trajs).any(|(s, t)| s.len() != t.frames.len())
            {
                return Err(Error::Shape("MSM frame assignments do not match the trajectories".into()));
            }
        }
        Ok(TrainData {
            trajs,
            msm,
            pools: msm.map(StatePools::new),
            labels: system.labels.clone(),
        })
    }

    fn draw_pairs(&self, mode: TrainMode, cfg: &TrainConfig, n: usize, seed: u64, key: &[u64]) -> Result<Vec<TrainingPair>> {
        match mode {
            TrainMode::Mars => {
                let msm = self
                    .msm
                    .ok_or_else(|| Error::InvalidArgument("mars training needs an MSM".into()))?;
                let pools = self.pools.as_ref().expect("pools exist with an MSM");
                let fan = cfg.fan_out();
                let mut out = Vec::with_capacity(n + fan.pairs_per_call());
                let mut call = 0u64;
                while out.len() < n {
                    let mut k = key.to_vec();
                    k.push(call);
                    let mut rng = keyed_rng(seed, &k);
                    out.extend(sample_msm_pairs_with(pools, msm, self.trajs, &fan, &mut rng)?);
                    call += 1;
                }
                let mut k = key.to_vec();
                k.push(u64::MAX);
                out.shuffle(&mut keyed_rng(seed, &k));
                out.truncate(n);
                Ok(out)
            }
            TrainMode::FixedLag => {
                let mut rng = keyed_rng(seed, key);
                sample_fixedlag_pairs(self.trajs, cfg.fixed_lag, n, &mut rng)
            }
        }
    }
}

/// Held-out pairs and their noise, fixed for the whole run.
pub struct HeldOut {
    pub pairs: Vec<TokenPair>,
    pub noise: Vec<NoiseDraw>,
}

pub fn held_out_set(data: &TrainData, mode: TrainMode, cfg: &TrainConfig, seed: u64) -> Result<HeldOut> {
    let pairs = data.draw_pairs(mode, cfg, cfg.held_out_pairs, seed, &[KEY_HELD_OUT])?;
    let pairs = tokenize_pairs(&pairs, data.trajs)?;
    let dim = pairs[0].target.len();
    let noise = draw_noise(seed, &[KEY_HELD_OUT, KEY_NOISE], pairs.len(), dim);
    Ok(HeldOut { pairs, noise })
}

/// Runs `n_epochs` further epochs. `on_epoch` sees the state after every
/// completed epoch, so a caller can persist the last good weights before a
/// later failure aborts the run.
pub fn train_epochs(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &TrainConfig,
    n_epochs: usize,
    log: &mut TrainLog,
    mut on_epoch: impl FnMut(&TrainState, &TrainLog) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if cfg.net != state.net_config {
        return Err(Error::Config("network dims differ from the checkpoint being trained".into()));
    }
    let net = state.network()?;
    let seed = state.seed;
    let held = held_out_set(data, state.mode, cfg, seed)?;
    let per_epoch = cfg.batch_size * cfg.steps_per_epoch;
    for _ in 0..n_epochs {
        let epoch = state.epochs_done;
        let pairs = data.draw_pairs(state.mode, cfg, per_epoch, seed, &[KEY_PAIRS, epoch])?;
        let mut pairs = tokenize_pairs(&pairs, data.trajs)?;
        pairs.shuffle(&mut keyed_rng(seed, &[KEY_SHUFFLE, epoch]));
        let dim = pairs[0].target.len();
        let mut params = state.live.clone();
        let mut ema = state.ema.clone();
        let mut adam = state.adam.clone();
        let mut total = 0.0;
        for (step, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            let noise = draw_noise(seed, &[KEY_NOISE, epoch, step as u64], batch.len(), dim);
            let (loss, grad) = loss_and_grad_with_noise(&net, &params, batch, &data.labels, &noise)?;
            adam_step(&mut params, &grad, &mut adam, cfg.lr, cfg.weight_decay)?;
            if let Some(i) = params.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLoss { index: i });
            }
            ema_update(&params, &mut ema, cfg.ema_decay);
            total += loss;
        }
        let held_live = loss_only(&net, &params, &held.pairs, &data.labels, &held.noise)?;
        let held_ema = loss_only(&net, &ema, &held.pairs, &data.labels, &held.noise)?;
        state.live = params;
        state.ema = ema;
        state.adam = adam;
        state.epochs_done += 1;
        log.epochs.push(EpochRecord {
            epoch: state.epochs_done,
            loss: total / cfg.steps_per_epoch as f64,
            held_out_loss: held_live,
            held_out_loss_ema: held_ema,
        });
        on_epoch(state, log)?;
    }
    Ok(())
}

/// Fresh run of `cfg.epochs` epochs.
pub fn train(
    trajs: &[Trajectory],
    msm: Option<&MarkovStateModel>,
    cfg: &TrainConfig,
    mode: TrainMode,
    seed: u64,
) -> Result<(TrainState, TrainLog)> {
    cfg.validate()?;
    let data = TrainData::new(trajs, msm)?;
    let mut state = TrainState::new(mode, cfg.net.clone(), trajs[0].system.n_labels(), seed)?;
    let mut log = TrainLog {
        mode,
        seed,
        n_params: state.live.len(),
        epochs: Vec::new(),
    };
    train_epochs(&mut state, &data, cfg, cfg.epochs, &mut log, |_, _| Ok(()))?;
    Ok((state, log))
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let net = state.network()?;
    let n = state.live.len();
    if n != net.n_params() || state.ema.len() != n || state.adam.m.len() != n || state.adam.v.len() != n {
        return Err(Error::Shape("checkpoint arrays do not match the network".into()));
    }
    let c = &state.net_config;
    let mut out = Vec::with_capacity(64 + 32 * n);
    out.extend_from_slice(MSEM_MAGIC);
    put_u32(&mut out, MSEM_VERSION as usize);
    put_u32(&mut out, state.mode.tag() as usize);
    for d in [c.time_dim, c.label_dim, c.hidden, c.n_enc, c.n_blocks, c.mlp_ratio, state.n_labels] {
        put_u32(&mut out, d);
    }
    put_u64(&mut out, state.seed);
    put_u64(&mut out, state.adam.step);
    put_u64(&mut out, state.epochs_done);
    put_u32(&mut out, net.layout.tensors.len());
    for t in &net.layout.tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u64(&mut out, d as u64);
        }
    }
    put_u64(&mut out, n as u64);
    for arr in [&state.live, &state.ema, &state.adam.m, &state.adam.v] {
        for x in arr.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .off
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.off..end];
        self.off = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<TrainState> {
    let mut r = Reader { bytes, off: 0, path };
    if r.take(4)? != MSEM_MAGIC {
        return Err(Error::format(path, "bad magic, expected MSEM"));
    }
    let version = r.u32()?;
    if version > MSEM_VERSION {
        return Err(Error::format(
            path,
            format!("format version {version} is newer than supported {MSEM_VERSION}"),
        ));
    }
    let tag = r.u32()?;
    let mode = TrainMode::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown mode tag {tag}")))?;
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let net_config = NetConfig {
        time_dim: dims[0],
        label_dim: dims[1],
        hidden: dims[2],
        n_enc: dims[3],
        n_blocks: dims[4],
        mlp_ratio: dims[5],
    };
    let n_labels = dims[6];
    let seed = r.u64()?;
    let step = r.u64()?;
    let epochs_done = r.u64()?;
    let net = VelocityNet::new(net_config.clone(), n_labels).map_err(|e| Error::format(path, e.to_string()))?;
    let n_tensors = r.u32()? as usize;
    if n_tensors != net.layout.tensors.len() {
        return Err(Error::format(path, "manifest does not match the architecture dims"));
    }
    for t in &net.layout.tensors {
        let len = r.u32()? as usize;
        let name = r.take(len)?.to_vec();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        if name != t.name.as_bytes() || shape != t.shape {
            return Err(Error::format(
                path,
                format!("manifest entry {} does not match the architecture", String::from_utf8_lossy(&name)),
            ));
        }
    }
    let n = r.u64()? as usize;
    if n != net.n_params() {
        return Err(Error::format(path, format!("{n} parameters, architecture needs {}", net.n_params())));
    }
    let live = r.f64s(n)?;
    let ema = r.f64s(n)?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    if r.off != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok(TrainState {
        mode,
        net_config,
        n_labels,
        seed,
        live,
        ema,
        adam: AdamState { m, v, step },
        epochs_done,
    })
}

pub fn write_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(state)?)
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Conformation;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.5];
        let before = p.clone();
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut st, 1e-3, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_constant_gradient_steps_approach_lr() {
        let lr = 1e-3;
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        let mut last = p.clone();
        for _ in 0..5000 {
            adam_step(&mut p, &[0.5, -3.0], &mut st, lr, 0.0).unwrap();
            let d0 = (p[0] - last[0]).abs();
            let d1 = (p[1] - last[1]).abs();
            // Bias correction makes every step exactly lr * g / (|g| + eps') here.
            assert!((d0 - lr).abs() < 1e-9 && (d1 - lr).abs() < 1e-9);
            last = p.clone();
        }
    }

    #[test]
    fn ema_examples() {
        let mut s = vec![0.0];
        ema_update(&[1.0], &mut s, 0.999);
        assert!((s[0] - 0.001).abs() < 1e-15);
        let mut same = vec![2.0, 3.0];
        ema_update(&[2.0, 3.0], &mut same, 0.9);
        assert_eq!(same, vec![2.0, 3.0]);
        let mut s = vec![0.0];
        for n in 1..=2000 {
            ema_update(&[4.0], &mut s, 0.999);
            let expect = 4.0 * (1.0 - 0.999f64.powi(n));
            assert!((s[0] - expect).abs() < 1e-12);
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            lr: 3e-3,
            batch_size: 4,
            epochs: 2,
            steps_per_epoch: 3,
            held_out_pairs: 4,
            net: NetConfig {
                time_dim: 4,
                label_dim: 2,
                hidden: 8,
                n_enc: 1,
                n_blocks: 1,
                mlp_ratio: 2,
            },
            ..TrainConfig::default()
        }
    }

    fn line_trajs() -> Vec<Trajectory> {
        (0..2)
            .map(|r| Trajectory {
                system: SystemSpec::uniform(1, 1),
                frames: (0..30)
                    .map(|i| Conformation::new(vec![((i * 7 + r * 3) % 11) as f64 * 0.1]))
                    .collect(),
                save_interval: 1.0,
                temperature: 1.0,
                seed: r as u64,
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let trajs = line_trajs();
        let cfg = tiny_cfg();
        let (a, log_a) = train(&trajs, None, &cfg, TrainMode::FixedLag, 7).unwrap();
        let (b, log_b) = train(&trajs, None, &cfg, TrainMode::FixedLag, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(a.epochs_done, 2);
        assert_eq!(a.adam.step, 6);

        // One epoch, checkpoint round trip, then one more epoch.
        let one = TrainConfig { epochs: 1, ..cfg.clone() };
        let (mut s, mut log) = train(&trajs, None, &one, TrainMode::FixedLag, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.msem");
        write_checkpoint(&path, &s).unwrap();
        s = read_checkpoint(&path).unwrap();
        let data = TrainData::new(&trajs, None).unwrap();
        let snapshot = s.clone();
        train_epochs(&mut s, &data, &cfg, 0, &mut log, |_, _| Ok(())).unwrap();
        assert_eq!(s, snapshot);
        train_epochs(&mut s, &data, &cfg, 1, &mut log, |_, _| Ok(())).unwrap();
        assert_eq!(s, a);
        assert_eq!(log.epochs, log_a.epochs);
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let s = TrainState::new(TrainMode::Mars, tiny_cfg().net, 3, 11).unwrap();
        let bytes = checkpoint_bytes(&s).unwrap();
        let p = Path::new("x.msem");
        assert_eq!(checkpoint_from_bytes(&bytes, p).unwrap(), s);
        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&(MSEM_VERSION + 1).to_le_bytes());
        assert!(checkpoint_from_bytes(&future, p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint_from_bytes(&bad, p).is_err());
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut tag = bytes;
        tag[8..12].copy_from_slice(&1u32.to_le_bytes());
        assert_eq!(checkpoint_from_bytes(&tag, p).unwrap().mode, TrainMode::FixedLag);
    }

    #[test]
    fn nan_data_aborts_after_last_good_epoch() {
        let mut trajs = line_trajs();
        let cfg = tiny_cfg();
        let data_ok = TrainData::new(&trajs, None).unwrap();
        let mut state = TrainState::new(TrainMode::FixedLag, cfg.net.clone(), 1, 3).unwrap();
        let mut log = TrainLog {
            mode: TrainMode::FixedLag,
            seed: 3,
            n_params: state.live.len(),
            epochs: vec![],
        };
        let mut saved = None;
        train_epochs(&mut state, &data_ok, &cfg, 1, &mut log, |s, _| {
            saved = Some(s.clone());
            Ok(())
        })
        .unwrap();
        for t in trajs.iter_mut() {
            for f in t.frames.iter_mut() {
                f.positions[0] = f64::NAN;
            }
        }
        let data_bad = TrainData::new(&trajs, None).unwrap();
        let err = train_epochs(&mut state, &data_bad, &cfg, 1, &mut log, |s, _| {
            saved = Some(s.clone());
            Ok(())
        });
        assert!(err.is_err());
        assert_eq!(saved.unwrap().epochs_done, 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { ema_decay: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let bad: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lrr": 1.0}"#);
        assert!(bad.is_err());
    }
}
