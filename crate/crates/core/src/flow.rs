//! Flow-matching objective: interpolation schedule, training-pair samplers
//! and the batched loss with its gradient.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msm::MarkovStateModel;
use crate::network::VelocityNet;
use crate::rng::keyed_rng;
use crate::system::{encode_flat, Conformation, Trajectory};

use std::f64::consts::FRAC_PI_2;

pub fn alpha(s: f64) -> f64 {
    (FRAC_PI_2 * s).sin()
}

pub fn sigma(s: f64) -> f64 {
    (FRAC_PI_2 * s).cos()
}

pub fn alpha_dot(s: f64) -> f64 {
    FRAC_PI_2 * (FRAC_PI_2 * s).cos()
}

pub fn sigma_dot(s: f64) -> f64 {
    -FRAC_PI_2 * (FRAC_PI_2 * s).sin()
}

fn check_flow_args(x1: &[f64], eps: &[f64], s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("flow time {s} outside [0, 1]")));
    }
    if x1.len() != eps.len() {
        return Err(Error::Shape(format!("token arrays of length {} and {}", x1.len(), eps.len())));
    }
    Ok(())
}

/// `x_s = sigma(s) eps + alpha(s) x1`.
pub fn interpolate(x1: &[f64], eps: &[f64], s: f64) -> Result<Vec<f64>> {
    check_flow_args(x1, eps, s)?;
    let (a, b) = (alpha(s), sigma(s));
    Ok(x1.iter().zip(eps).map(|(x, e)| b * e + a * x).collect())
}

/// `d x_s / ds = alpha'(s) x1 + sigma'(s) eps`.
pub fn target_velocity(x1: &[f64], eps: &[f64], s: f64) -> Result<Vec<f64>> {
    check_flow_args(x1, eps, s)?;
    let (a, b) = (alpha_dot(s), sigma_dot(s));
    Ok(x1.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Msm,
    FixedLag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub cond_frame: Conformation,
    pub target_frame: Conformation,
    pub src_state: Option<usize>,
    pub dst_state: Option<usize>,
    pub kind: PairKind,
    /// `(trajectory, frame)` of the conditioning and target frames.
    pub cond_index: (usize, usize),
    pub target_index: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FanOut {
    pub n_src_states: usize,
    pub n_dst_per_src: usize,
    pub frames_per_pair: usize,
}

impl Default for FanOut {
    fn default() -> Self {
        FanOut {
            n_src_states: 2,
            n_dst_per_src: 2,
            frames_per_pair: 12,
        }
    }
}

impl FanOut {
    pub fn pairs_per_call(&self) -> usize {
        self.n_src_states * self.n_dst_per_src * self.frames_per_pair
    }
}

/// Frames of every macrostate pooled across trajectories.
#[derive(Debug, Clone)]
pub struct StatePools {
    pub pools: Vec<Vec<(usize, usize)>>,
}

impl StatePools {
    pub fn new(msm: &MarkovStateModel) -> Self {
        let mut pools = vec![Vec::new(); msm.n_macro];
        for (t, states) in msm.frame_states.iter().enumerate() {
            for (f, &s) in states.iter().enumerate() {
                pools[s].push((t, f));
            }
        }
        StatePools { pools }
    }

    fn draw(&self, state: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
        let pool = &self.pools[state];
        if pool.is_empty() {
            return Err(Error::EmptyStatePool(state));
        }
        Ok(pool[rng.random_range(0..pool.len())])
    }
}

fn categorical(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Source states (the first frame's state plus uniform draws), destinations
/// from the transition rows, then uniform frames from the pooled state lists.
pub fn sample_msm_pairs_with(
    pools: &StatePools,
    msm: &MarkovStateModel,
    trajs: &[Trajectory],
    fan: &FanOut,
    rng: &mut impl Rng,
) -> Result<Vec<TrainingPair>> {
    if msm.frame_states.len() != trajs.len() {
        return Err(Error::Shape(format!(
            "MSM covers {} trajectories, {} given",
            msm.frame_states.len(),
            trajs.len()
        )));
    }
    let first = *msm.frame_states[0]
        .first()
        .ok_or_else(|| Error::InvalidArgument("first trajectory is empty".into()))?;
    let mut sources = vec![first];
    while sources.len() < fan.n_src_states {
        sources.push(rng.random_range(0..msm.n_macro));
    }
    let mut out = Vec::with_capacity(fan.pairs_per_call());
    for &i in &sources {
        let dests: Vec<usize> = (0..fan.n_dst_per_src).map(|_| categorical(&msm.transition[i], rng)).collect();
        for j in dests {
            for _ in 0..fan.frames_per_pair {
                let c = pools.draw(i, rng)?;
                let t = pools.draw(j, rng)?;
                out.push(TrainingPair {
                    cond_frame: trajs[c.0].frames[c.1].clone(),
                    target_frame: trajs[t.0].frames[t.1].clone(),
                    src_state: Some(i),
                    dst_state: Some(j),
                    kind: PairKind::Msm,
                    cond_index: c,
                    target_index: t,
                });
            }
        }
    }
    Ok(out)
}

pub fn sample_msm_pairs(
    msm: &MarkovStateModel,
    trajs: &[Trajectory],
    fan: &FanOut,
    rng: &mut impl Rng,
) -> Result<Vec<TrainingPair>> {
    sample_msm_pairs_with(&StatePools::new(msm), msm, trajs, fan, rng)
}

/// `n` pairs `(u, u + lag)`; trajectories weighted by their number of valid offsets.
pub fn sample_fixedlag_pairs(trajs: &[Trajectory], lag: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<TrainingPair>> {
    let valid: Vec<f64> = trajs
        .iter()
        .map(|t| t.frames.len().saturating_sub(lag) as f64)
        .collect();
    if valid.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument(format!("no trajectory is longer than lag {lag}")));
    }
    (0..n)
        .map(|_| {
            let t = categorical(&valid, rng);
            let u = rng.random_range(0..valid[t] as usize);
            Ok(TrainingPair {
                cond_frame: trajs[t].frames[u].clone(),
                target_frame: trajs[t].frames[u + lag].clone(),
                src_state: None,
                dst_state: None,
                kind: PairKind::FixedLag,
                cond_index: (t, u),
                target_index: (t, u + lag),
            })
        })
        .collect()
}

/// A pair in token space.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPair {
    pub cond: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn tokenize_pairs(pairs: &[TrainingPair], trajs: &[Trajectory]) -> Result<Vec<TokenPair>> {
    let system = &trajs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no trajectories".into()))?
        .system;
    pairs
        .iter()
        .map(|p| {
            Ok(TokenPair {
                cond: encode_flat(&p.cond_frame, system)?,
                target: encode_flat(&p.target_frame, system)?,
            })
        })
        .collect()
}

/// Flow time and Gaussian noise for one batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub s: f64,
    pub eps: Vec<f64>,
}

/// Independent draws keyed by `(seed, path, slot)`.
pub fn draw_noise(seed: u64, path: &[u64], n: usize, dim: usize) -> Vec<NoiseDraw> {
    (0..n)
        .map(|slot| {
            let mut key = path.to_vec();
            key.push(slot as u64);
            let mut rng = keyed_rng(seed, &key);
            let s = rng.random::<f64>();
            let eps = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            NoiseDraw { s, eps }
        })
        .collect()
}

/// Batch elements handled per work unit; partial results are summed in
/// chunk order, so the result does not depend on the thread count.
pub const GRAD_CHUNK: usize = 8;

/// Mean squared velocity error over batch and token coordinates, and its
/// gradient with respect to `params`.
pub fn loss_and_grad_with_noise(
    net: &VelocityNet,
    params: &[f64],
    batch: &[TokenPair],
    labels: &[usize],
    noise: &[NoiseDraw],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if noise.len() != batch.len() {
        return Err(Error::Shape("one noise draw per batch element is required".into()));
    }
    let n_total = batch.len() as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .zip(noise.par_chunks(GRAD_CHUNK))
        .enumerate()
        .map(|(c, (pairs, draws))| {
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for (k, (pair, nd)) in pairs.iter().zip(draws).enumerate() {
                let index = c * GRAD_CHUNK + k;
                let xs = interpolate(&pair.target, &nd.eps, nd.s)?;
                let tv = target_velocity(&pair.target, &nd.eps, nd.s)?;
                let (v, cache) = net.forward_cached(params, nd.s, &xs, &pair.cond, labels)?;
                let m = v.len() as f64;
                let diff: Vec<f64> = v.iter().zip(&tv).map(|(a, b)| a - b).collect();
                let li = diff.iter().map(|d| d * d).sum::<f64>() / m;
                if !li.is_finite() {
                    return Err(Error::NonFiniteLoss { index });
                }
                loss += li;
                let dout: Vec<f64> = diff.iter().map(|d| 2.0 * d / (m * n_total)).collect();
                net.backward(params, &cache, &pair.cond, &xs, &dout, &mut grad);
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss / n_total, grad))
}

/// Loss without the gradient (used for held-out evaluation).
pub fn loss_only(net: &VelocityNet, params: &[f64], batch: &[TokenPair], labels: &[usize], noise: &[NoiseDraw]) -> Result<f64> {
    let parts: Vec<Result<f64>> = batch
        .par_chunks(GRAD_CHUNK)
        .zip(noise.par_chunks(GRAD_CHUNK))
        .map(|(pairs, draws)| {
            let mut loss = 0.0;
            for (pair, nd) in pairs.iter().zip(draws) {
                let xs = interpolate(&pair.target, &nd.eps, nd.s)?;
                let tv = target_velocity(&pair.target, &nd.eps, nd.s)?;
                let v = net.forward(params, nd.s, &xs, &pair.cond, labels)?;
                loss += v.iter().zip(&tv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.len() as f64;
            }
            Ok(loss)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Draws `(s, eps)` for every element from `rng`, then evaluates the loss.
pub fn loss_and_grad(
    net: &VelocityNet,
    params: &[f64],
    batch: &[TokenPair],
    labels: &[usize],
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    let noise: Vec<NoiseDraw> = batch
        .iter()
        .map(|p| NoiseDraw {
            s: rng.random::<f64>(),
            eps: (0..p.target.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        })
        .collect();
    loss_and_grad_with_noise(net, params, batch, labels, &noise)
}

/// Outcome of comparing `loss_and_grad` with central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub n_coords: usize,
    /// Coordinates whose gradient lies below the rounding floor; for these the
    /// error is measured against the floor instead of the gradient.
    pub n_floored: usize,
    pub floor: f64,
}

/// Central differences with step `h` over the given coordinates. The floor is
/// the rounding level of the differenced loss, `1e5 eps sum (|v| + |target|)^2 / h`.
pub fn gradient_check(
    net: &VelocityNet,
    params: &[f64],
    batch: &[TokenPair],
    labels: &[usize],
    noise: &[NoiseDraw],
    coords: &[usize],
    h: f64,
) -> Result<GradientCheck> {
    let (_, g) = loss_and_grad_with_noise(net, params, batch, labels, noise)?;
    let mut magnitude = 0.0;
    for (pair, nd) in batch.iter().zip(noise) {
        let xs = interpolate(&pair.target, &nd.eps, nd.s)?;
        let tv = target_velocity(&pair.target, &nd.eps, nd.s)?;
        let v = net.forward(params, nd.s, &xs, &pair.cond, labels)?;
        magnitude += v.iter().zip(&tv).map(|(a, b)| (a.abs() + b.abs()).powi(2)).sum::<f64>() / v.len() as f64;
    }
    magnitude /= batch.len() as f64;
    let floor = (1e5 * f64::EPSILON * magnitude / h).max(1e-12);
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        n_coords: coords.len(),
        n_floored: 0,
        floor,
    };
    let mut q = params.to_vec();
    for &i in coords {
        q[i] = params[i] + h;
        let up = loss_only(net, &q, batch, labels, noise)?;
        q[i] = params[i] - h;
        let dn = loss_only(net, &q, batch, labels, noise)?;
        q[i] = params[i];
        let fd = (up - dn) / (2.0 * h);
        let scale = g[i].abs().max(fd.abs());
        if scale < floor {
            out.n_floored += 1;
        }
        out.max_rel_error = out.max_rel_error.max((g[i] - fd).abs() / scale.max(floor));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msm::{MsmDiagnostics, StateAssigner};
    use crate::network::NetConfig;
    use crate::system::{SystemSpec, TOKEN_DIM};

    #[test]
    fn schedule_identities() {
        for i in 0..1000 {
            let s = i as f64 / 999.0;
            assert!((alpha(s).powi(2) + sigma(s).powi(2) - 1.0).abs() < 1e-12);
        }
        assert_eq!(alpha(0.0), 0.0);
        assert_eq!(sigma(0.0), 1.0);
        assert!((alpha(1.0) - 1.0).abs() < 1e-15);
        assert!(sigma(1.0).abs() < 1e-15);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn interpolation_examples() {
        let x1 = [1.0, -2.0, 3.0];
        let eps = [0.5, 0.25, -1.0];
        assert_eq!(interpolate(&x1, &eps, 0.0).unwrap(), eps.to_vec());
        let at1 = interpolate(&x1, &eps, 1.0).unwrap();
        for (a, b) in at1.iter().zip(&x1) {
            assert!((a - b).abs() < 1e-15);
        }
        let mid = interpolate(&x1, &eps, 0.5).unwrap();
        for k in 0..3 {
            assert!((mid[k] - 0.5f64.sqrt() * (eps[k] + x1[k])).abs() < 1e-15);
        }
        assert!((0.5f64.sqrt() - 0.70711).abs() < 1e-5);
        assert!(interpolate(&x1, &eps, 1.5).is_err());
        assert!(target_velocity(&x1, &eps, -0.1).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn velocity_examples() {
        let x1 = [1.0, -2.0];
        let eps = [0.5, 0.25];
        let v0 = target_velocity(&x1, &eps, 0.0).unwrap();
        assert!((v0[0] - 1.5708).abs() < 1e-4 && v0[1] == FRAC_PI_2 * -2.0);
        let v1 = target_velocity(&x1, &eps, 1.0).unwrap();
        assert!((v1[0] + FRAC_PI_2 * 0.5).abs() < 1e-15);
        for s in [0.1, 0.37, 0.5, 0.9] {
            let h = 1e-6;
            let up = interpolate(&x1, &eps, s + h).unwrap();
            let dn = interpolate(&x1, &eps, s - h).unwrap();
            let v = target_velocity(&x1, &eps, s).unwrap();
            for k in 0..2 {
                assert!(((up[k] - dn[k]) / (2.0 * h) - v[k]).abs() < 1e-8);
            }
        }
    }

    pub(crate) fn toy_msm(states: Vec<Vec<usize>>, transition: Vec<Vec<f64>>) -> MarkovStateModel {
        let m = transition.len();
        MarkovStateModel {
            assigner: StateAssigner {
                system: SystemSpec::uniform(1, 1),
                feature: crate::msm::FeatureKind::Tica,
                window: Default::default(),
                feature_mean: vec![0.0],
                feature_scale: vec![1.0],
                tica: None,
                centroids: (0..m).map(|i| vec![i as f64]).collect(),
                micro_to_macro: (0..m).collect(),
            },
            n_macro: m,
            counts: vec![vec![0; m]; m],
            transition,
            stationary: vec![1.0 / m as f64; m],
            lag: 1,
            frame_states: states,
            seed: 0,
            diagnostics: MsmDiagnostics {
                tica_eigenvalues: vec![],
                micro_populations: vec![],
                macro_populations: vec![],
                micro_reducible: false,
                macro_reducible: false,
                inertia: 0.0,
            },
        }
    }

    fn traj_from(values: &[f64]) -> Trajectory {
        Trajectory {
            system: SystemSpec::uniform(1, 1),
            frames: values.iter().map(|&v| Conformation::new(vec![v])).collect(),
            save_interval: 1.0,
            temperature: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn msm_pairs_respect_states() {
        let states = vec![vec![0, 0, 1, 1, 0], vec![1, 0, 1]];
        let trajs = vec![traj_from(&[0.0, 0.1, 1.0, 1.1, 0.2]), traj_from(&[1.2, 0.3, 1.3])];
        let msm = toy_msm(states.clone(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut rng = keyed_rng(1, &[]);
        let pairs = sample_msm_pairs(&msm, &trajs, &FanOut::default(), &mut rng).unwrap();
        assert_eq!(pairs.len(), 48);
        for p in &pairs {
            assert_eq!(states[p.cond_index.0][p.cond_index.1], p.src_state.unwrap());
            assert_eq!(states[p.target_index.0][p.target_index.1], p.dst_state.unwrap());
            assert_eq!(p.src_state, p.dst_state);
        }
        assert_eq!(pairs[0].src_state, Some(0));
    }

    #[test]
    fn destination_frequencies_follow_rows() {
        let states = vec![vec![0, 1, 0, 1]];
        let trajs = vec![traj_from(&[0.0, 1.0, 0.0, 1.0])];
        let msm = toy_msm(states, vec![vec![0.8, 0.2], vec![0.5, 0.5]]);
        let pools = StatePools::new(&msm);
        let fan = FanOut {
            n_src_states: 1,
            n_dst_per_src: 100,
            frames_per_pair: 1,
        };
        let mut to_b = 0;
        let mut total = 0;
        for call in 0..100 {
            let mut rng = keyed_rng(3, &[call]);
            for p in sample_msm_pairs_with(&pools, &msm, &trajs, &fan, &mut rng).unwrap() {
                total += 1;
                to_b += (p.dst_state == Some(1)) as usize;
            }
        }
        assert_eq!(total, 10_000);
        assert!((to_b as f64 / total as f64 - 0.2).abs() < 0.02);
    }

    #[test]
    fn source_frequencies_favor_the_first_frame_state() {
        let states = vec![vec![2, 0, 1, 2, 0, 1]];
        let trajs = vec![traj_from(&[2.0, 0.0, 1.0, 2.1, 0.1, 1.1])];
        let third = vec![1.0 / 3.0; 3];
        let msm = toy_msm(states, vec![third.clone(), third.clone(), third]);
        let pools = StatePools::new(&msm);
        let fan = FanOut {
            n_src_states: 2,
            n_dst_per_src: 1,
            frames_per_pair: 1,
        };
        let calls = 6000;
        let mut counts = [0usize; 3];
        for call in 0..calls {
            let mut rng = keyed_rng(8, &[call]);
            for p in sample_msm_pairs_with(&pools, &msm, &trajs, &fan, &mut rng).unwrap() {
                counts[p.src_state.unwrap()] += 1;
            }
        }
        let n = (2 * calls) as f64;
        for (state, &c) in counts.iter().enumerate() {
            let expect = if state == 2 { 0.5 + 0.5 / 3.0 } else { 0.5 / 3.0 };
            let se = (expect * (1.0 - expect) / n).sqrt();
            assert!((c as f64 / n - expect).abs() < 4.0 * se, "state {state}: {c}");
        }
    }

    #[test]
    fn empty_pool_is_reported() {
        let msm = toy_msm(vec![vec![0, 0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let trajs = vec![traj_from(&[0.0, 0.1])];
        let mut rng = keyed_rng(1, &[]);
        assert!(matches!(
            sample_msm_pairs(&msm, &trajs, &FanOut::default(), &mut rng),
            Err(Error::EmptyStatePool(1))
        ));
    }

    #[test]
    fn fixed_lag_examples() {
        let t = traj_from(&[0.0, 1.0, 2.0]);
        let mut rng = keyed_rng(2, &[]);
        for p in sample_fixedlag_pairs(&[t.clone()], 1, 200, &mut rng).unwrap() {
            assert!(p.cond_index.1 < 2);
            assert_eq!(p.target_index.1, p.cond_index.1 + 1);
        }
        let constant = traj_from(&[4.0; 10]);
        for p in sample_fixedlag_pairs(&[constant], 3, 20, &mut rng).unwrap() {
            assert_eq!(p.cond_frame, p.target_frame);
        }
        let a = traj_from(&vec![0.0; 101]);
        let b = traj_from(&vec![1.0; 201]);
        let pairs = sample_fixedlag_pairs(&[a, b], 1, 10_000, &mut rng).unwrap();
        let frac = pairs.iter().filter(|p| p.cond_index.0 == 1).count() as f64 / 1e4;
        assert!((frac - 200.0 / 300.0).abs() < 0.02);
        assert!(sample_fixedlag_pairs(&[t], 3, 1, &mut rng).is_err());
    }

    fn tiny_net() -> VelocityNet {
        VelocityNet::new(
            NetConfig {
                time_dim: 4,
                label_dim: 3,
                hidden: 6,
                n_enc: 1,
                n_blocks: 1,
                mlp_ratio: 2,
            },
            2,
        )
        .unwrap()
    }

    fn random_pairs(n: usize, l: usize, seed: u64) -> Vec<TokenPair> {
        let mut rng = keyed_rng(seed, &[]);
        (0..n)
            .map(|_| TokenPair {
                cond: (0..l * TOKEN_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                target: (0..l * TOKEN_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            })
            .collect()
    }

    #[test]
    fn loss_is_mean_over_batch() {
        let net = tiny_net();
        let p = net.init_params(1);
        let batch = random_pairs(3, 2, 5);
        let noise = draw_noise(9, &[0], 3, 2 * TOKEN_DIM);
        let (l1, g1) = loss_and_grad_with_noise(&net, &p, &batch, &[0, 1], &noise).unwrap();
        let doubled: Vec<TokenPair> = batch.iter().chain(&batch).cloned().collect();
        let noise2: Vec<NoiseDraw> = noise.iter().chain(&noise).cloned().collect();
        let (l2, g2) = loss_and_grad_with_noise(&net, &p, &doubled, &[0, 1], &noise2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((loss_only(&net, &p, &batch, &[0, 1], &noise).unwrap() - l1).abs() < 1e-12);
    }

    #[test]
    fn rigged_output_gives_zero_loss() {
        // With every weight zero except the output bias, the field is that
        // bias; at s = 0 the target velocity is (pi/2) x1, so a batch whose
        // targets equal bias / (pi/2) is fit exactly.
        let net = tiny_net();
        let mut p = vec![0.0; net.n_params()];
        let bo = net.layout.tensors.iter().find(|t| t.name == "final.out.b").unwrap().offset;
        for k in 0..TOKEN_DIM {
            p[bo + k] = 0.1 * k as f64;
        }
        let target: Vec<f64> = (0..TOKEN_DIM).map(|k| 0.1 * k as f64 / FRAC_PI_2).collect();
        let batch = vec![TokenPair { cond: vec![0.3; TOKEN_DIM], target }];
        let noise = vec![NoiseDraw { s: 0.0, eps: vec![0.7; TOKEN_DIM] }];
        let (l, g) = loss_and_grad_with_noise(&net, &p, &batch, &[0], &noise).unwrap();
        assert!(l < 1e-30);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let net = tiny_net();
        for draw in 0..10u64 {
            for &bs in &[1usize, 4] {
                let mut rng = keyed_rng(100 + draw, &[bs as u64]);
                let mut p = net.init_params(draw);
                // Wake the zero-initialized tensors so every path carries gradient.
                for x in p.iter_mut() {
                    *x += 0.2 * rng.sample::<f64, _>(StandardNormal);
                }
                let batch = random_pairs(bs, 2, draw);
                let noise = draw_noise(draw, &[bs as u64], bs, 2 * TOKEN_DIM);
                let labels = [0, 1];
                let all: Vec<usize> = (0..p.len()).collect();
                let check = gradient_check(&net, &p, &batch, &labels, &noise, &all, 1e-5).unwrap();
                assert!(check.max_rel_error < 1e-4, "draw {draw} batch {bs}: {check:?}");
                assert!(check.n_floored * 10 < check.n_coords, "{check:?}");
            }
        }
    }

    #[test]
    fn nan_guard_names_the_element() {
        let net = tiny_net();
        let p = net.init_params(1);
        let mut batch = random_pairs(10, 1, 2);
        batch[9].target[0] = f64::NAN;
        let noise = draw_noise(1, &[], 10, TOKEN_DIM);
        assert!(matches!(
            loss_and_grad_with_noise(&net, &p, &batch, &[0], &noise),
            Err(Error::NonFiniteLoss { index: 9 })
        ));
    }

}
