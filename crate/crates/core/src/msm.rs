//! Markov state models: featurization, TICA, k-means, PCCA+ and transition
//! matrix estimation.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::metrics::{radius_of_gyration, ss_fraction, TorsionWindow};
use crate::rng::keyed_rng;
use crate::system::{Conformation, SystemSpec, Trajectory};

/// Column standardization with the population standard deviation.
/// Zero-variance columns map to zeros (their stored scale is 1).
pub fn standardize_features(raw: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let n = raw.nrows().max(1) as f64;
    let mut mean = Vec::with_capacity(raw.ncols());
    let mut scale = Vec::with_capacity(raw.ncols());
    for col in raw.column_iter() {
        let m = col.sum() / n;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mean.push(m);
        scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    let mut out = raw.clone();
    apply_standardization(&mut out, &mean, &scale);
    (out, mean, scale)
}

fn apply_standardization(x: &mut DMatrix<f64>, mean: &[f64], scale: &[f64]) {
    for (j, mut col) in x.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            let z = (*v - mean[j]) / scale[j];
            // Constant columns come out as exact zeros rather than roundoff.
            *v = if z.abs() < 1e-300 { 0.0 } else { z };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicaModel {
    pub mean: Vec<f64>,
    /// `components[j]` is the direction `w_j` in feature space.
    pub components: Vec<Vec<f64>>,
    pub eig_vals: Vec<f64>,
    pub lag: usize,
    pub n_kept: usize,
    pub ridge: f64,
}

/// Fraction of kinetic variance captured by each prefix of the spectrum.
pub fn cumulative_kinetic_variance(eig_vals: &[f64]) -> Vec<f64> {
    let total: f64 = eig_vals.iter().filter(|l| **l > 0.0).map(|l| l * l).sum();
    let mut acc = 0.0;
    eig_vals
        .iter()
        .map(|&l| {
            if l > 0.0 {
                acc += l * l;
            }
            if total > 0.0 {
                acc / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Time-lagged independent component analysis over one or more trajectories.
///
/// Covariances use the symmetric (reversible) estimator over all lagged pairs
/// of every trajectory, with the mean pooled over all frames.
pub fn compute_tica(features: &[DMatrix<f64>], lag: usize, variance_cut: f64, ridge: f64) -> Result<TicaModel> {
    let d = features.first().map(|f| f.ncols()).unwrap_or(0);
    if d == 0 {
        return Err(Error::Shape("TICA needs at least one feature".into()));
    }
    if features.iter().any(|f| f.ncols() != d) {
        return Err(Error::Shape("feature dimension differs between trajectories".into()));
    }
    if !features.iter().any(|f| f.nrows() > lag + 1) {
        return Err(Error::InvalidArgument(format!("TICA lag {lag} leaves no usable frame pairs")));
    }
    if !(0.0..=1.0).contains(&variance_cut) || ridge < 0.0 {
        return Err(Error::InvalidArgument("variance_cut must lie in [0,1] and ridge be nonnegative".into()));
    }

    let total: usize = features.iter().map(|f| f.nrows()).sum();
    let mut mean = vec![0.0; d];
    for f in features {
        for (j, col) in f.column_iter().enumerate() {
            mean[j] += col.sum();
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);

    let mut c0 = DMatrix::<f64>::zeros(d, d);
    let mut ct = DMatrix::<f64>::zeros(d, d);
    let mut n_pairs = 0usize;
    for f in features {
        if f.nrows() <= lag {
            continue;
        }
        let n = f.nrows() - lag;
        let mut a = f.rows(0, n).into_owned();
        let mut b = f.rows(lag, n).into_owned();
        for j in 0..d {
            a.column_mut(j).add_scalar_mut(-mean[j]);
            b.column_mut(j).add_scalar_mut(-mean[j]);
        }
        c0 += a.transpose() * &a + b.transpose() * &b;
        let ab = a.transpose() * &b;
        ct += &ab + ab.transpose();
        n_pairs += n;
    }
    let norm = 1.0 / (2.0 * n_pairs as f64);
    c0 *= norm;
    ct *= norm;
    for i in 0..d {
        c0[(i, i)] += ridge;
    }

    let chol = nalgebra::Cholesky::new(c0).ok_or(Error::SingularCovariance { ridge })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or(Error::SingularCovariance { ridge })?;
    let reduced = &l_inv * ct * l_inv.transpose();
    let (vals, vecs) = jacobi_eigen(&reduced);
    let w = l_inv.transpose() * vecs;

    let cum = cumulative_kinetic_variance(&vals);
    let n_kept = cum.iter().position(|&c| c >= variance_cut - 1e-12).map_or(d, |i| i + 1).max(1);
    let components = (0..d).map(|j| w.column(j).iter().copied().collect()).collect();
    Ok(TicaModel {
        mean,
        components,
        eig_vals: vals,
        lag,
        n_kept,
        ridge,
    })
}

pub fn project_tica(model: &TicaModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = model.mean.len();
    if features.ncols() != d {
        return Err(Error::Shape(format!(
            "TICA model expects {d} features, got {}",
            features.ncols()
        )));
    }
    let mut out = DMatrix::<f64>::zeros(features.nrows(), model.n_kept);
    for i in 0..features.nrows() {
        for (k, w) in model.components.iter().take(model.n_kept).enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                s += (features[(i, j)] - model.mean[j]) * w[j];
            }
            out[(i, k)] = s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
    pub seed: u64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
pub fn nearest_centroid(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, p);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn rows_of(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    points.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<Clustering> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} points")));
    }
    let pts = rows_of(points);
    let mut rng = keyed_rng(seed, &[0x6b6d]);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(pts[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(pts[pick].clone());
        for (i, p) in pts.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        pts.iter().map(|p| nearest_centroid(centroids, p)).unzip()
    };
    let (mut labels, mut dists) = assign(&centroids);
    for _ in 0..max_iter {
        fix_empty_clusters(&pts, &mut centroids, &mut labels, &mut dists)?;
        let dim = pts[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in pts.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            for s in sums[c].iter_mut() {
                *s /= counts[c] as f64;
            }
        }
        centroids = sums;
        let (next, next_d) = assign(&centroids);
        let done = next == labels;
        labels = next;
        dists = next_d;
        if done {
            break;
        }
    }
    fix_empty_clusters(&pts, &mut centroids, &mut labels, &mut dists)?;
    Ok(Clustering {
        centroids,
        assignments: labels,
        k,
        inertia: dists.iter().sum(),
        seed,
    })
}

/// Moves each empty cluster onto the point farthest from its own centroid.
fn fix_empty_clusters(
    pts: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) -> Result<()> {
    let k = centroids.len();
    for _ in 0..=k {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        let (far, &far_d) = dists
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[labels[*i]] > 1)
            .fold((usize::MAX, &-1.0f64), |best, cur| if cur.1 > best.1 { cur } else { best });
        if far == usize::MAX || far_d <= 0.0 {
            return Err(Error::InvalidArgument(format!("fewer than {k} distinct points to cluster")));
        }
        centroids[empty] = pts[far].clone();
        for (i, p) in pts.iter().enumerate() {
            let (c, d) = nearest_centroid(centroids, p);
            labels[i] = c;
            dists[i] = d;
        }
    }
    Err(Error::InvalidArgument("could not populate every cluster".into()))
}

/// Connected components of the graph with an edge wherever `T_ij > 0` or `T_ji > 0`.
pub fn connected_components(t: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = t.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![s];
        comp[s] = id;
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if comp[j] == usize::MAX && (t[(i, j)] > 0.0 || t[(j, i)] > 0.0) {
                    comp[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Stationary weights from detailed balance along a spanning tree of each
/// connected component; components are weighted by their size.
fn detailed_balance_weights(t: &DMatrix<f64>, comps: &[Vec<usize>]) -> Vec<f64> {
    let n = t.nrows();
    let mut pi = vec![0.0; n];
    for comp in comps {
        let root = comp[0];
        pi[root] = 1.0;
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for &j in comp {
                if !seen[j] && t[(i, j)] > 0.0 && t[(j, i)] > 0.0 {
                    seen[j] = true;
                    pi[j] = pi[i] * t[(i, j)] / t[(j, i)];
                    queue.push_back(j);
                }
            }
        }
        for &j in comp {
            if !seen[j] {
                pi[j] = 1.0;
            }
        }
        let z: f64 = comp.iter().map(|&j| pi[j]).sum();
        for &j in comp {
            pi[j] *= comp.len() as f64 / z;
        }
    }
    let z: f64 = pi.iter().sum();
    pi.iter().map(|p| p / z).collect()
}

/// PCCA+ coarse graining by the inner-simplex vertex construction.
///
/// Returns the crisp microstate to macrostate map. Macrostates are numbered
/// in order of their lowest microstate.
pub fn pcca_plus(t: &DMatrix<f64>, n_macro: usize) -> Result<Vec<usize>> {
    let k = t.nrows();
    if t.ncols() != k {
        return Err(Error::Shape("transition matrix must be square".into()));
    }
    if n_macro == 0 || n_macro > k {
        return Err(Error::InvalidArgument(format!(
            "cannot form {n_macro} macrostates from {k} microstates"
        )));
    }
    if n_macro == k {
        return Ok((0..k).collect());
    }
    let comps = connected_components(t);
    if comps.len() > n_macro {
        let largest = comps.iter().enumerate().max_by_key(|(i, c)| (c.len(), usize::MAX - i)).map(|(i, _)| i).unwrap();
        let orphans: Vec<usize> = comps
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != largest)
            .flat_map(|(_, c)| c.iter().copied())
            .collect();
        return Err(Error::Reducible { orphans });
    }
    if n_macro == 1 {
        return Ok(vec![0; k]);
    }

    let mut reg = t.clone();
    for i in 0..k {
        reg[(i, i)] += 1e-10;
        let s: f64 = reg.row(i).sum();
        reg.row_mut(i).scale_mut(1.0 / s);
    }
    let pi = detailed_balance_weights(&reg, &comps);
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let sym = DMatrix::from_fn(k, k, |i, j| reg[(i, j)] * sq[i] / sq[j]);
    let (_, u) = jacobi_eigen(&sym);
    let evecs = DMatrix::from_fn(k, n_macro, |i, j| u[(i, j)] / sq[i]);

    let index = inner_simplex_vertices(&evecs)?;
    let vertices = DMatrix::from_fn(n_macro, n_macro, |a, j| evecs[(index[a], j)]);
    let rot = vertices
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("PCCA+ simplex vertices are degenerate".into()))?;
    let chi = &evecs * rot;

    let raw: Vec<usize> = (0..k)
        .map(|i| {
            let mut best = 0;
            for a in 1..n_macro {
                if chi[(i, a)] > chi[(i, best)] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok(relabel_by_first_member(&raw))
}

/// Farthest-row search for the simplex vertices among the rows of `evecs`.
fn inner_simplex_vertices(evecs: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, m) = evecs.shape();
    let mut index = vec![0usize; m];
    let mut max_dist = 0.0;
    for i in 0..n {
        let d = evecs.row(i).norm();
        if d > max_dist {
            max_dist = d;
            index[0] = i;
        }
    }
    let first = evecs.row(index[0]).into_owned();
    let mut ortho = evecs.clone();
    for mut row in ortho.row_iter_mut() {
        row -= &first;
    }
    for k in 1..m {
        let temp = ortho.row(index[k - 1]).into_owned();
        max_dist = 0.0;
        for i in 0..n {
            let proj = temp.dot(&ortho.row(i));
            let mut row = ortho.row_mut(i);
            row -= &temp * proj;
            let d = row.norm();
            if d > max_dist && !index[..k].contains(&i) {
                max_dist = d;
                index[k] = i;
            }
        }
        if max_dist <= 0.0 {
            return Err(Error::InvalidArgument("spectrum too degenerate for PCCA+".into()));
        }
        ortho /= max_dist;
    }
    Ok(index)
}

fn relabel_by_first_member(raw: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|&r| {
            let next = map.len();
            *map.entry(r).or_insert(next)
        })
        .collect()
}

/// Lagged transition counts, summed over sequences; no pairs across sequences.
pub fn count_transitions(sequences: &[Vec<usize>], lag: usize, n_states: usize) -> Vec<Vec<u64>> {
    let mut c = vec![vec![0u64; n_states]; n_states];
    for seq in sequences {
        if seq.len() <= lag {
            continue;
        }
        for t in 0..seq.len() - lag {
            c[seq[t]][seq[t + lag]] += 1;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEstimate {
    pub transition: DMatrix<f64>,
    pub stationary: Vec<f64>,
    pub reducible: bool,
}

/// Row-normalize, symmetrize, renormalize; stationary law by power iteration.
pub fn estimate_transition_matrix(counts: &[Vec<u64>]) -> TransitionEstimate {
    let n = counts.len();
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut row: Vec<f64> = counts[i].iter().map(|&c| c as f64).collect();
        if row.iter().all(|&c| c == 0.0) {
            row[i] = 1.0;
        }
        let s: f64 = row.iter().sum();
        for j in 0..n {
            t[(i, j)] = row[j] / s;
        }
    }
    let sym = (&t + t.transpose()) * 0.5;
    let mut out = sym.clone();
    for i in 0..n {
        let s: f64 = sym.row(i).sum();
        out.row_mut(i).scale_mut(1.0 / s);
    }
    let reducible = connected_components(&out).len() > 1;
    let stationary = power_iteration(&out);
    TransitionEstimate {
        transition: out,
        stationary,
        reducible,
    }
}

/// Left fixed point of the lazy chain `(T + I)/2`, which shares the
/// stationary law of `T` but cannot be periodic.
pub fn power_iteration(t: &DMatrix<f64>) -> Vec<f64> {
    let n = t.nrows();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..2_000_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += pi[i] * t[(i, j)];
            }
        }
        let z: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= z);
        let resid = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if resid < 1e-13 {
            return next;
        }
        for j in 0..n {
            pi[j] = 0.5 * (pi[j] + next[j]);
        }
    }
    pi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Coordinates for a single particle, pairwise distances otherwise,
    /// projected onto the slow TICA components.
    #[default]
    Tica,
    /// Radius of gyration and structured fraction.
    Observables,
}

/// Raw per-frame features before standardization.
pub fn raw_features(kind: FeatureKind, window: &TorsionWindow, system: &SystemSpec, conf: &Conformation) -> Vec<f64> {
    match kind {
        FeatureKind::Tica => {
            if system.n_particles == 1 {
                conf.positions.clone()
            } else {
                let d = system.dim;
                let n = system.n_particles;
                let mut f = Vec::with_capacity(n * (n - 1) / 2);
                for i in 0..n {
                    for j in (i + 1)..n {
                        f.push(sq_dist(conf.particle(i, d), conf.particle(j, d)).sqrt());
                    }
                }
                f
            }
        }
        FeatureKind::Observables => vec![
            radius_of_gyration(conf, &system.masses, system.dim),
            ss_fraction(conf, system, window),
        ],
    }
}

fn feature_matrix(kind: FeatureKind, window: &TorsionWindow, traj: &Trajectory) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = traj.frames.iter().map(|f| raw_features(kind, window, &traj.system, f)).collect();
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// Everything needed to map a conformation to its macrostate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAssigner {
    pub system: SystemSpec,
    pub feature: FeatureKind,
    pub window: TorsionWindow,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub tica: Option<TicaModel>,
    pub centroids: Vec<Vec<f64>>,
    pub micro_to_macro: Vec<usize>,
}

impl StateAssigner {
    fn embed(&self, raw: DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut x = raw;
        apply_standardization(&mut x, &self.feature_mean, &self.feature_scale);
        match &self.tica {
            Some(t) => project_tica(t, &x),
            None => Ok(x),
        }
    }

    pub fn microstate(&self, conf: &Conformation) -> Result<usize> {
        conf.check(&self.system)?;
        let raw = raw_features(self.feature, &self.window, &self.system, conf);
        if raw.len() != self.feature_mean.len() {
            return Err(Error::Shape("feature dimension does not match the model".into()));
        }
        let y = self.embed(DMatrix::from_row_slice(1, raw.len(), &raw))?;
        let p: Vec<f64> = y.row(0).iter().copied().collect();
        Ok(nearest_centroid(&self.centroids, &p).0)
    }

    pub fn assign_state(&self, conf: &Conformation) -> Result<usize> {
        Ok(self.micro_to_macro[self.microstate(conf)?])
    }

    /// Frames in the clustering space: standardized features, TICA-projected
    /// when the model has TICA.
    pub fn embed_frames(&self, frames: &[Conformation]) -> Result<DMatrix<f64>> {
        let mut rows = Vec::with_capacity(frames.len());
        for f in frames {
            f.check(&self.system)?;
            rows.push(raw_features(self.feature, &self.window, &self.system, f));
        }
        let d = self.feature_mean.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("feature dimension does not match the model".into()));
        }
        self.embed(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n_macro(&self) -> usize {
        self.micro_to_macro.iter().max().map_or(0, |m| m + 1)
    }
}

pub fn assign_state(ctx: &StateAssigner, conf: &Conformation) -> Result<usize> {
    ctx.assign_state(conf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsmParams {
    pub feature: FeatureKind,
    pub n_micro: usize,
    pub n_macro: usize,
    /// MSM lag in saved frames.
    pub lag: usize,
    /// TICA lag in saved frames; defaults to the MSM lag.
    pub tica_lag: Option<usize>,
    pub variance_cut: f64,
    pub ridge: f64,
    pub max_iter: usize,
    pub window: TorsionWindow,
    pub seed: Option<u64>,
}

impl Default for MsmParams {
    fn default() -> Self {
        MsmParams {
            feature: FeatureKind::Tica,
            n_micro: 20,
            n_macro: 4,
            lag: 10,
            tica_lag: None,
            variance_cut: 0.95,
            ridge: 1e-8,
            max_iter: 300,
            window: TorsionWindow::default(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmDiagnostics {
    pub tica_eigenvalues: Vec<f64>,
    pub micro_populations: Vec<usize>,
    pub macro_populations: Vec<usize>,
    pub micro_reducible: bool,
    pub macro_reducible: bool,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovStateModel {
    pub assigner: StateAssigner,
    pub n_macro: usize,
    pub counts: Vec<Vec<u64>>,
    pub transition: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
    pub lag: usize,
    pub frame_states: Vec<Vec<usize>>,
    pub seed: u64,
    pub diagnostics: MsmDiagnostics,
}

impl MarkovStateModel {
    pub fn micro_to_macro(&self) -> &[usize] {
        &self.assigner.micro_to_macro
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let n = self.transition.len();
        DMatrix::from_fn(n, n, |i, j| self.transition[i][j])
    }

    /// Occupancy of each macrostate over all training frames.
    pub fn empirical_occupancy(&self) -> Vec<f64> {
        let mut occ = vec![0.0; self.n_macro];
        let mut n = 0.0f64;
        for s in self.frame_states.iter().flatten() {
            occ[*s] += 1.0;
            n += 1.0;
        }
        occ.iter().map(|c| c / n.max(1.0)).collect()
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Featurize, cluster, coarse grain and estimate the macrostate chain.
pub fn build_msm(trajs: &[Trajectory], params: &MsmParams, seed: u64) -> Result<MarkovStateModel> {
    let first = trajs.first().ok_or_else(|| Error::InvalidArgument("no trajectories".into()))?;
    let system = first.system.clone();
    if trajs.iter().any(|t| t.system != system) {
        return Err(Error::Shape("trajectories describe different systems".into()));
    }
    if params.lag == 0 {
        return Err(Error::InvalidArgument("MSM lag must be at least 1 frame".into()));
    }
    if trajs.iter().all(|t| t.frames.len() <= params.lag) {
        return Err(Error::InvalidArgument(format!(
            "lag {} is not shorter than any trajectory",
            params.lag
        )));
    }
    let seed = params.seed.unwrap_or(seed);

    let raw: Vec<DMatrix<f64>> = trajs.iter().map(|t| feature_matrix(params.feature, &params.window, t)).collect();
    let d = raw[0].ncols();
    let total: usize = raw.iter().map(|r| r.nrows()).sum();
    let mut pooled = DMatrix::<f64>::zeros(total, d);
    let mut row = 0;
    for r in &raw {
        pooled.rows_mut(row, r.nrows()).copy_from(r);
        row += r.nrows();
    }
    let (_, mean, scale) = standardize_features(&pooled);
    let standardized: Vec<DMatrix<f64>> = raw
        .iter()
        .map(|r| {
            let mut x = r.clone();
            apply_standardization(&mut x, &mean, &scale);
            x
        })
        .collect();

    let tica = match params.feature {
        FeatureKind::Tica => Some(compute_tica(
            &standardized,
            params.tica_lag.unwrap_or(params.lag),
            params.variance_cut,
            params.ridge,
        )?),
        FeatureKind::Observables => None,
    };
    let embedded: Vec<DMatrix<f64>> = match &tica {
        Some(t) => standardized.iter().map(|x| project_tica(t, x)).collect::<Result<_>>()?,
        None => standardized,
    };
    let e_dim = embedded[0].ncols();
    let mut all = DMatrix::<f64>::zeros(total, e_dim);
    let mut row = 0;
    for e in &embedded {
        all.rows_mut(row, e.nrows()).copy_from(e);
        row += e.nrows();
    }
    let clustering = kmeans(&all, params.n_micro, seed, params.max_iter)?;

    let mut micro_seqs = Vec::with_capacity(trajs.len());
    let mut offset = 0;
    for t in trajs {
        micro_seqs.push(clustering.assignments[offset..offset + t.frames.len()].to_vec());
        offset += t.frames.len();
    }
    let micro_counts = count_transitions(&micro_seqs, params.lag, params.n_micro);
    let micro = estimate_transition_matrix(&micro_counts);
    let micro_to_macro = pcca_plus(&micro.transition, params.n_macro)?;

    let frame_states: Vec<Vec<usize>> = micro_seqs
        .iter()
        .map(|s| s.iter().map(|&m| micro_to_macro[m]).collect())
        .collect();
    let counts = count_transitions(&frame_states, params.lag, params.n_macro);
    let est = estimate_transition_matrix(&counts);

    let mut micro_pop = vec![0usize; params.n_micro];
    clustering.assignments.iter().for_each(|&m| micro_pop[m] += 1);
    let mut macro_pop = vec![0usize; params.n_macro];
    frame_states.iter().flatten().for_each(|&m| macro_pop[m] += 1);

    Ok(MarkovStateModel {
        assigner: StateAssigner {
            system,
            feature: params.feature,
            window: params.window.clone(),
            feature_mean: mean,
            feature_scale: scale,
            tica: tica.clone(),
            centroids: clustering.centroids.clone(),
            micro_to_macro,
        },
        n_macro: params.n_macro,
        counts,
        transition: matrix_rows(&est.transition),
        stationary: est.stationary,
        lag: params.lag,
        frame_states,
        seed,
        diagnostics: MsmDiagnostics {
            tica_eigenvalues: tica.map(|t| t.eig_vals).unwrap_or_default(),
            micro_populations: micro_pop,
            macro_populations: macro_pop,
            micro_reducible: micro.reducible,
            macro_reducible: est.reducible,
            inertia: clustering.inertia,
        },
    })
}
