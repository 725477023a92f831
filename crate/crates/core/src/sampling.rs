//! Turning a velocity field into conformations: ODE transport and the
//! tree, parallel, autoregressive and hybrid schemes.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::VelocityNet;
use crate::rng::keyed_rng;
use crate::system::{decode_flat, encode_flat, Conformation, SystemSpec};
use crate::train::TrainState;

/// `v(s, x_s; cond)` in flat token space.
pub trait VelocityField: Sync {
    fn velocity(&self, s: f64, xs: &[f64], cond: &[f64]) -> Result<Vec<f64>>;
}

/// A network with a fixed parameter snapshot.
pub struct NetField {
    pub net: VelocityNet,
    pub params: Vec<f64>,
    pub labels: Vec<usize>,
}

impl NetField {
    /// Uses the EMA weights, as sampling always does.
    pub fn from_state(state: &TrainState, labels: Vec<usize>) -> Result<Self> {
        if labels.iter().any(|&l| l >= state.n_labels) {
            return Err(Error::InvalidArgument(format!(
                "system labels exceed the checkpoint's {} label slots",
                state.n_labels
            )));
        }
        Ok(NetField {
            net: state.network()?,
            params: state.ema.clone(),
            labels,
        })
    }
}

impl VelocityField for NetField {
    fn velocity(&self, s: f64, xs: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.params, s, xs, cond, &self.labels)
    }
}

impl<F: Fn(f64, &[f64], &[f64]) -> Vec<f64> + Sync> VelocityField for F {
    fn velocity(&self, s: f64, xs: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        Ok(self(s, xs, cond))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Euler,
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeOptions {
    pub n_steps: usize,
    pub solver: Solver,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            n_steps: 50,
            solver: Solver::Euler,
        }
    }
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// Integrates `dx/ds = v` from `s = 0` to `1` starting at `eps`.
pub fn transport(field: &impl VelocityField, cond: &[f64], eps: Vec<f64>, ode: &OdeOptions) -> Result<Vec<f64>> {
    if ode.n_steps == 0 {
        return Err(Error::InvalidArgument("ODE needs at least one step".into()));
    }
    let dt = 1.0 / ode.n_steps as f64;
    let mut x = eps;
    for k in 0..ode.n_steps {
        let s = k as f64 * dt;
        let v = field.velocity(s, &x, cond)?;
        match ode.solver {
            Solver::Euler => {
                for (xi, vi) in x.iter_mut().zip(&v) {
                    *xi += dt * vi;
                }
            }
            Solver::Heun => {
                let pred: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + dt * b).collect();
                let v2 = field.velocity(s + dt, &pred, cond)?;
                for ((xi, a), b) in x.iter_mut().zip(&v).zip(&v2) {
                    *xi += 0.5 * dt * (a + b);
                }
            }
        }
        check_finite(&x, k + 1)?;
    }
    Ok(x)
}

/// Standard-normal start point keyed by `(seed, key)`.
pub fn noise_for(seed: u64, key: &[u64], dim: usize) -> Vec<f64> {
    let mut rng = keyed_rng(seed, key);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Shared settings of one sampling run.
#[derive(Debug, Clone)]
pub struct SampleContext<'a> {
    pub system: &'a SystemSpec,
    pub ode: OdeOptions,
    pub seed: u64,
}

impl SampleContext<'_> {
    pub fn token_len(&self) -> usize {
        crate::system::TOKEN_DIM * self.system.n_particles
    }
}

/// One conditional draw: noise keyed by `key`, transport, decode.
pub fn integrate_ode(field: &impl VelocityField, ctx: &SampleContext, cond: &Conformation, key: &[u64]) -> Result<Conformation> {
    let c = encode_flat(cond, ctx.system)?;
    let eps = noise_for(ctx.seed, key, c.len());
    let x = transport(field, &c, eps, &ctx.ode)?;
    decode_flat(&x, ctx.system)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Tree,
    Parallel,
    Autoregressive,
    Hybrid,
}

impl Scheme {
    fn key_tag(self) -> u64 {
        match self {
            Scheme::Tree => 1,
            Scheme::Parallel => 2,
            Scheme::Autoregressive => 3,
            Scheme::Hybrid => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRole {
    Tree,
    Parallel,
    Autoregressive,
    Anchor,
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameProvenance {
    /// Index of the conditioning frame in the ensemble, -1 for `x0`.
    pub parent: i64,
    pub depth: usize,
    pub role: FrameRole,
    pub key: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedEnsemble {
    pub frames: Vec<Conformation>,
    pub provenance: Vec<FrameProvenance>,
    pub cond_origin: Conformation,
    pub scheme: Scheme,
    pub seed: u64,
    pub ode: OdeOptions,
}

/// JSON sidecar stored next to the generated frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceSidecar {
    pub scheme: Scheme,
    pub seed: u64,
    pub ode: OdeOptions,
    pub n_frames: usize,
    pub cond_origin: Vec<f64>,
    pub frames: Vec<FrameProvenance>,
}

impl GeneratedEnsemble {
    pub fn sidecar(&self) -> ProvenanceSidecar {
        ProvenanceSidecar {
            scheme: self.scheme,
            seed: self.seed,
            ode: self.ode,
            n_frames: self.frames.len(),
            cond_origin: self.cond_origin.positions.clone(),
            frames: self.provenance.clone(),
        }
    }

    /// Number of frames at each depth, starting from depth 1.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let max = self.provenance.iter().map(|p| p.depth).max().unwrap_or(0);
        let mut out = vec![0; max];
        for p in &self.provenance {
            out[p.depth - 1] += 1;
        }
        out
    }
}

/// Draws for a list of `(cond, key)` requests, in parallel and in request order.
fn draw_all(field: &impl VelocityField, ctx: &SampleContext, requests: &[(&Conformation, Vec<u64>)]) -> Result<Vec<Conformation>> {
    requests
        .par_iter()
        .map(|(c, k)| integrate_ode(field, ctx, c, k))
        .collect()
}

/// Layer 1 holds `first_layer` children of `x0` (capped at the budget);
/// afterwards every leaf gets one child per round, and the last round is
/// cut to the budget in node-index order.
pub fn tree_sample(
    field: &impl VelocityField,
    ctx: &SampleContext,
    x0: &Conformation,
    budget: usize,
    first_layer: usize,
) -> Result<GeneratedEnsemble> {
    if budget == 0 || first_layer == 0 {
        return Err(Error::InvalidArgument("tree sampling needs budget and first_layer of at least 1".into()));
    }
    let tag = Scheme::Tree.key_tag();
    let first = first_layer.min(budget);
    let mut frames: Vec<Conformation> = Vec::with_capacity(budget);
    let mut provenance = Vec::with_capacity(budget);
    let mut parents: Vec<i64> = vec![-1; first];
    let mut depth = 1;
    while frames.len() < budget {
        let take = parents.len().min(budget - frames.len());
        let requests: Vec<(&Conformation, Vec<u64>)> = parents[..take]
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let cond = if p < 0 { x0 } else { &frames[p as usize] };
                (cond, vec![tag, depth as u64, i as u64])
            })
            .collect();
        let keys: Vec<Vec<u64>> = requests.iter().map(|r| r.1.clone()).collect();
        let drawn = draw_all(field, ctx, &requests)?;
        let start = frames.len();
        for (i, (f, key)) in drawn.into_iter().zip(keys).enumerate() {
            frames.push(f);
            provenance.push(FrameProvenance {
                parent: parents[i],
                depth,
                role: FrameRole::Tree,
                key,
            });
        }
        parents = (start..frames.len()).map(|i| i as i64).collect();
        depth += 1;
    }
    Ok(GeneratedEnsemble {
        frames,
        provenance,
        cond_origin: x0.clone(),
        scheme: Scheme::Tree,
        seed: ctx.seed,
        ode: ctx.ode,
    })
}

fn parallel_keys(n: usize) -> Vec<Vec<u64>> {
    (0..n).map(|i| vec![Scheme::Parallel.key_tag(), i as u64]).collect()
}

pub fn parallel_sample(field: &impl VelocityField, ctx: &SampleContext, x0: &Conformation, budget: usize) -> Result<GeneratedEnsemble> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let keys = parallel_keys(budget);
    let requests: Vec<(&Conformation, Vec<u64>)> = keys.iter().map(|k| (x0, k.clone())).collect();
    let frames = draw_all(field, ctx, &requests)?;
    Ok(GeneratedEnsemble {
        frames,
        provenance: keys
            .into_iter()
            .map(|key| FrameProvenance {
                parent: -1,
                depth: 1,
                role: FrameRole::Parallel,
                key,
            })
            .collect(),
        cond_origin: x0.clone(),
        scheme: Scheme::Parallel,
        seed: ctx.seed,
        ode: ctx.ode,
    })
}

fn rollout(
    field: &impl VelocityField,
    ctx: &SampleContext,
    start: &Conformation,
    n: usize,
    key_prefix: &[u64],
) -> Result<Vec<Conformation>> {
    let mut out: Vec<Conformation> = Vec::with_capacity(n);
    for i in 0..n {
        let mut key = key_prefix.to_vec();
        key.push(i as u64);
        let cond = out.last().unwrap_or(start);
        let next = integrate_ode(field, ctx, cond, &key)?;
        out.push(next);
    }
    Ok(out)
}

pub fn autoregressive_sample(
    field: &impl VelocityField,
    ctx: &SampleContext,
    x0: &Conformation,
    budget: usize,
) -> Result<GeneratedEnsemble> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let tag = Scheme::Autoregressive.key_tag();
    let frames = rollout(field, ctx, x0, budget, &[tag])?;
    Ok(GeneratedEnsemble {
        frames,
        provenance: (0..budget)
            .map(|i| FrameProvenance {
                parent: i as i64 - 1,
                depth: i + 1,
                role: FrameRole::Autoregressive,
                key: vec![tag, i as u64],
            })
            .collect(),
        cond_origin: x0.clone(),
        scheme: Scheme::Autoregressive,
        seed: ctx.seed,
        ode: ctx.ode,
    })
}

/// `n_anchors` MarS draws from `x0` (keyed as the parallel scheme's), each
/// followed by an autoregressive baseline rollout of `rollout_len` frames.
/// Frames are stored anchor first, then its rollout.
pub fn hybrid_sample(
    mars: &impl VelocityField,
    baseline: &impl VelocityField,
    ctx: &SampleContext,
    x0: &Conformation,
    n_anchors: usize,
    rollout_len: usize,
) -> Result<GeneratedEnsemble> {
    if n_anchors == 0 {
        return Err(Error::InvalidArgument("hybrid sampling needs at least one anchor".into()));
    }
    let anchor_keys = parallel_keys(n_anchors);
    let requests: Vec<(&Conformation, Vec<u64>)> = anchor_keys.iter().map(|k| (x0, k.clone())).collect();
    let anchors = draw_all(mars, ctx, &requests)?;
    let tag = Scheme::Hybrid.key_tag();
    let rollouts: Vec<Vec<Conformation>> = anchors
        .par_iter()
        .enumerate()
        .map(|(a, anchor)| rollout(baseline, ctx, anchor, rollout_len, &[tag, a as u64]))
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(n_anchors * (1 + rollout_len));
    let mut provenance = Vec::with_capacity(frames.capacity());
    for (a, (anchor, roll)) in anchors.into_iter().zip(rollouts).enumerate() {
        let anchor_index = frames.len() as i64;
        frames.push(anchor);
        provenance.push(FrameProvenance {
            parent: -1,
            depth: 1,
            role: FrameRole::Anchor,
            key: anchor_keys[a].clone(),
        });
        for (j, f) in roll.into_iter().enumerate() {
            frames.push(f);
            provenance.push(FrameProvenance {
                parent: anchor_index + j as i64,
                depth: j + 2,
                role: FrameRole::Rollout,
                key: vec![tag, a as u64, j as u64],
            });
        }
    }
    Ok(GeneratedEnsemble {
        frames,
        provenance,
        cond_origin: x0.clone(),
        scheme: Scheme::Hybrid,
        seed: ctx.seed,
        ode: ctx.ode,
    })
}
