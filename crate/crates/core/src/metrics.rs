//! Ensemble comparison metrics: histogram divergences, free-energy errors,
//! structural observables, flexibility correlations and folding scores.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pearson;
use crate::msm::{project_tica, StateAssigner, TicaModel};
use crate::system::{chain_torsion, kabsch_align, rmsd, Conformation, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSpec {
    pub n_bins: usize,
    pub floor_kl: f64,
    pub floor_mmae: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            n_bins: 100,
            floor_kl: 1e-5,
            floor_mmae: 1e-4,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 || !(self.floor_kl > 0.0) || !(self.floor_mmae > 0.0) {
            return Err(Error::InvalidArgument(
                "histogram spec needs n_bins >= 2 and positive floors".into(),
            ));
        }
        Ok(())
    }
}

/// Two normalized histograms over shared edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedHistogram {
    pub lo: f64,
    pub hi: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

fn bin_of(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((x - lo) / (hi - lo) * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize
}

fn normalized_counts(xs: &[f64], lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n];
    for &x in xs {
        c[bin_of(x, lo, hi, n)] += 1.0;
    }
    let total = xs.len().max(1) as f64;
    c.iter().map(|v| v / total).collect()
}

/// Histograms of `a` and `b` on edges spanning their pooled range. When every
/// value is identical the pair collapses to a single bin.
pub fn paired_histogram(a: &[f64], b: &[f64], n_bins: usize) -> PairedHistogram {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let n = if hi > lo { n_bins } else { 1 };
    PairedHistogram {
        lo,
        hi,
        p: normalized_counts(a, lo, hi, n),
        q: normalized_counts(b, lo, hi, n),
    }
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        x * (x / y).ln()
    } else {
        0.0
    }
}

/// Jensen-Shannon divergence of two discrete distributions, natural log.
pub fn jsd_discrete(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        s += 0.5 * (xlogy_ratio(pi, m) + xlogy_ratio(qi, m));
    }
    s.max(0.0)
}

/// `KL(P||Q)` with `Q` floored elementwise and not renormalized.
pub fn kl_discrete(p: &[f64], q: &[f64], floor: f64) -> f64 {
    p.iter().zip(q).map(|(&pi, &qi)| xlogy_ratio(pi, qi.max(floor))).sum()
}

pub fn histogram_jsd(a: &[f64], b: &[f64], spec: &HistogramSpec) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("JSD needs two non-empty samples".into()));
    }
    let h = paired_histogram(a, b, spec.n_bins);
    Ok(jsd_discrete(&h.p, &h.q))
}

pub fn forward_kl(p_ref: &[f64], q_model: &[f64], spec: &HistogramSpec) -> Result<f64> {
    if p_ref.is_empty() || q_model.is_empty() {
        return Err(Error::InvalidArgument("KL needs two non-empty samples".into()));
    }
    let h = paired_histogram(p_ref, q_model, spec.n_bins);
    Ok(kl_discrete(&h.p, &h.q, spec.floor_kl))
}

/// Mean absolute error of macrostate free energies `-kT ln max(pi, floor)`.
pub fn macrostate_mae(pi_model: &[f64], pi_ref: &[f64], kt: f64, floor: f64) -> Result<f64> {
    if pi_model.len() != pi_ref.len() || pi_ref.is_empty() {
        return Err(Error::Shape(format!(
            "distributions have {} and {} states",
            pi_model.len(),
            pi_ref.len()
        )));
    }
    let g = |p: f64| -kt * p.max(floor).ln();
    Ok(pi_model.iter().zip(pi_ref).map(|(&a, &b)| (g(a) - g(b)).abs()).sum::<f64>() / pi_ref.len() as f64)
}

pub fn radius_of_gyration(conf: &Conformation, masses: &[f64], dim: usize) -> f64 {
    let n = masses.len();
    let m_tot: f64 = masses.iter().sum();
    let mut com = vec![0.0; dim];
    for i in 0..n {
        for a in 0..dim {
            com[a] += masses[i] * conf.positions[i * dim + a];
        }
    }
    com.iter_mut().for_each(|c| *c /= m_tot);
    let mut s = 0.0;
    for i in 0..n {
        for a in 0..dim {
            let d = conf.positions[i * dim + a] - com[a];
            s += masses[i] * d * d;
        }
    }
    (s / m_tot).sqrt()
}

/// Per-residue structured/unstructured labels.
pub trait ResidueClassifier {
    fn classify(&self, conf: &Conformation, system: &SystemSpec) -> Vec<bool>;
}

/// A residue is structured when its backbone torsion lies within
/// `half_width` radians of `theta_ref`. Residues without a defined torsion
/// are not classified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorsionWindow {
    pub theta_ref: f64,
    pub half_width: f64,
}

impl Default for TorsionWindow {
    fn default() -> Self {
        TorsionWindow {
            theta_ref: 0.0,
            half_width: 0.5,
        }
    }
}

pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let y = (x + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if y <= -std::f64::consts::PI {
        y + two_pi
    } else {
        y
    }
}

impl ResidueClassifier for TorsionWindow {
    fn classify(&self, conf: &Conformation, system: &SystemSpec) -> Vec<bool> {
        (0..system.n_particles)
            .filter_map(|l| chain_torsion(conf, system, l, 0))
            .map(|t| wrap_angle(t - self.theta_ref).abs() <= self.half_width)
            .collect()
    }
}

/// Fraction of classified residues in a structured state; 0 when no residue
/// can be classified.
pub fn ss_fraction(conf: &Conformation, system: &SystemSpec, classifier: &impl ResidueClassifier) -> f64 {
    let labels = classifier.classify(conf, system);
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|&&b| b).count() as f64 / labels.len() as f64
}

/// Every frame rigidly superposed onto `reference`.
pub fn align_ensemble(frames: &[Conformation], reference: &Conformation, dim: usize) -> Result<Vec<Conformation>> {
    frames.iter().map(|f| kabsch_align(f, reference, dim)).collect()
}

/// Per-particle root-mean-square fluctuation about the ensemble mean.
pub fn rmsf(frames: &[Conformation], dim: usize) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument("RMSF needs at least two frames".into()));
    }
    let nc = frames[0].positions.len();
    let nf = frames.len() as f64;
    let mut mean = vec![0.0; nc];
    for f in frames {
        for (m, x) in mean.iter_mut().zip(&f.positions) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let np = nc / dim;
    let mut out = vec![0.0; np];
    for f in frames {
        for i in 0..np {
            for a in 0..dim {
                let d = f.positions[i * dim + a] - mean[i * dim + a];
                out[i] += d * d;
            }
        }
    }
    Ok(out.iter().map(|s| (s / nf).sqrt()).collect())
}

pub const MAX_RMSD_PAIRS: usize = 10_000;

/// Mean RMSD over frame pairs `i < j`; beyond `MAX_RMSD_PAIRS` pairs an evenly
/// strided subset of the lexicographic pair order is used.
pub fn mean_pairwise_rmsd(frames: &[Conformation], dim: usize) -> Result<f64> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::InvalidArgument("pairwise RMSD needs at least two frames".into()));
    }
    let total = n * (n - 1) / 2;
    let take = total.min(MAX_RMSD_PAIRS);
    let mut sum = 0.0;
    let mut row = 0usize;
    let mut row_start = 0usize;
    for k in 0..take {
        let idx = ((k as u128 * total as u128) / take as u128) as usize;
        while idx >= row_start + (n - 1 - row) {
            row_start += n - 1 - row;
            row += 1;
        }
        let col = row + 1 + (idx - row_start);
        sum += rmsd(&frames[row], &frames[col], dim)?;
    }
    Ok(sum / take as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityCorrelations {
    /// Across targets; absent with fewer than two targets.
    pub pairwise_rmsd: Option<f64>,
    pub global_rmsf: Option<f64>,
    pub pertarget_rmsf: Option<f64>,
}

/// Both ensembles of every target are aligned to the first reference frame.
pub fn flexibility_correlations(
    refs: &[Vec<Conformation>],
    gens: &[Vec<Conformation>],
    dim: usize,
) -> Result<FlexibilityCorrelations> {
    if refs.len() != gens.len() || refs.is_empty() {
        return Err(Error::Shape("reference and generated target lists differ".into()));
    }
    let mut pr = Vec::new();
    let mut pg = Vec::new();
    let mut fr = Vec::new();
    let mut fg = Vec::new();
    let mut within = Vec::new();
    for (r, g) in refs.iter().zip(gens) {
        if r.len() < 2 || g.len() < 2 {
            return Err(Error::InvalidArgument("every target needs at least two frames".into()));
        }
        let r = align_ensemble(r, &r[0], dim)?;
        let g = align_ensemble(g, &r[0], dim)?;
        pr.push(mean_pairwise_rmsd(&r, dim)?);
        pg.push(mean_pairwise_rmsd(&g, dim)?);
        let rr = rmsf(&r, dim)?;
        let rg = rmsf(&g, dim)?;
        if let Some(c) = pearson(&rr, &rg) {
            within.push(c);
        }
        fr.extend(rr);
        fg.extend(rg);
    }
    Ok(FlexibilityCorrelations {
        pairwise_rmsd: pearson(&pr, &pg),
        global_rmsf: pearson(&fr, &fg),
        pertarget_rmsf: if within.is_empty() {
            None
        } else {
            Some(within.iter().sum::<f64>() / within.len() as f64)
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FncParams {
    pub beta: f64,
    pub lam: f64,
    pub cutoff: f64,
    pub min_sep: usize,
    /// Use the sign as printed, `[1 + exp(-beta (d - lam d_ref))]^-1`, which
    /// approaches 1 for broken contacts.
    pub printed_sign: bool,
}

impl Default for FncParams {
    fn default() -> Self {
        FncParams {
            beta: 5.0,
            lam: 1.2,
            cutoff: 10.0,
            min_sep: 3,
            printed_sign: false,
        }
    }
}

fn dist(conf: &Conformation, i: usize, j: usize, dim: usize) -> f64 {
    let a = conf.particle(i, dim);
    let b = conf.particle(j, dim);
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Native contacts `(i, j, d_ref)` with `|i - j| > min_sep` and `d_ref < cutoff`.
pub fn native_contacts(reference: &Conformation, system: &SystemSpec, p: &FncParams) -> Vec<(usize, usize, f64)> {
    let n = system.n_particles;
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + p.min_sep + 1)..n {
            let d = dist(reference, i, j, system.dim);
            if d < p.cutoff {
                out.push((i, j, d));
            }
        }
    }
    out
}

pub fn fnc_from_contacts(conf: &Conformation, dim: usize, contacts: &[(usize, usize, f64)], p: &FncParams) -> Result<f64> {
    if contacts.is_empty() {
        return Err(Error::EmptyNativeSet);
    }
    let sign = if p.printed_sign { -1.0 } else { 1.0 };
    let s: f64 = contacts
        .iter()
        .map(|&(i, j, d_ref)| 1.0 / (1.0 + (sign * p.beta * (dist(conf, i, j, dim) - p.lam * d_ref)).exp()))
        .sum();
    Ok(s / contacts.len() as f64)
}

pub fn fnc_score(conf: &Conformation, reference: &Conformation, system: &SystemSpec, p: &FncParams) -> Result<f64> {
    fnc_from_contacts(conf, system.dim, &native_contacts(reference, system, p), p)
}

pub const Q_HALF_FALLBACK: f64 = 0.70;
pub const KDE_GRID: usize = 512;

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`, falling back to the
/// standard deviation when the IQR vanishes.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gaussian KDE of `xs` on the uniform grid `i / (KDE_GRID - 1)`.
pub fn kde_on_unit_grid(xs: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..KDE_GRID)
        .map(|i| {
            let g = i as f64 / (KDE_GRID - 1) as f64;
            xs.iter().map(|x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>() * norm
        })
        .collect()
}

/// Deepest local minimum of the reference Q density in `[0.45, 0.90]`.
pub fn q_half_threshold(q_values: &[f64]) -> f64 {
    if q_values.len() < 2 {
        return Q_HALF_FALLBACK;
    }
    let h = silverman_bandwidth(q_values);
    if !(h > 0.0) {
        return Q_HALF_FALLBACK;
    }
    let f = kde_on_unit_grid(q_values, h);
    let mut best: Option<(usize, f64)> = None;
    for i in 1..KDE_GRID - 1 {
        let g = i as f64 / (KDE_GRID - 1) as f64;
        if !(0.45..=0.90).contains(&g) {
            continue;
        }
        if f[i] < f[i - 1] && f[i] < f[i + 1] && best.is_none_or(|(_, v)| f[i] < v) {
            best = Some((i, f[i]));
        }
    }
    best.map_or(Q_HALF_FALLBACK, |(i, _)| i as f64 / (KDE_GRID - 1) as f64)
}

pub fn p_fold(q: f64, q_half: f64, steepness: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * steepness * (q - q_half)).exp())
}

pub fn delta_g_from_pbar(p_bar: f64, kt: f64) -> f64 {
    let p = p_bar.clamp(1e-6, 1.0 - 1e-6);
    -kt * (p.ln() - (1.0 - p).ln())
}

pub fn delta_g_fold(q_values: &[f64], q_half: f64, kt: f64, steepness: f64) -> f64 {
    let p_bar = q_values.iter().map(|&q| p_fold(q, q_half, steepness)).sum::<f64>() / q_values.len().max(1) as f64;
    delta_g_from_pbar(p_bar, kt)
}

/// Empirical macrostate occupancy of a set of frames.
pub fn occupancy(assigner: &StateAssigner, frames: &[Conformation], n_macro: usize) -> Result<Vec<f64>> {
    let mut occ = vec![0.0; n_macro];
    for f in frames {
        occ[assigner.assign_state(f)?] += 1.0;
    }
    let n = frames.len().max(1) as f64;
    Ok(occ.iter().map(|c| c / n).collect())
}

pub fn msm_recovery_jsd(assigner: &StateAssigner, generated: &[Conformation], reference_pi: &[f64]) -> Result<f64> {
    let occ = occupancy(assigner, generated, reference_pi.len())?;
    Ok(jsd_discrete(&occ, reference_pi))
}

/// JSD over a 2D histogram with pooled ranges per axis.
pub fn histogram2d_jsd(a: &[[f64; 2]], b: &[[f64; 2]], n_bins: usize) -> f64 {
    let range = |k: usize| {
        a.iter()
            .chain(b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[k]), h.max(p[k])))
    };
    let (lx, hx) = range(0);
    let (ly, hy) = range(1);
    let nx = if hx > lx { n_bins } else { 1 };
    let ny = if hy > ly { n_bins } else { 1 };
    let hist = |pts: &[[f64; 2]]| {
        let mut c = vec![0.0; nx * ny];
        for p in pts {
            c[bin_of(p[0], lx, hx, nx) * ny + bin_of(p[1], ly, hy, ny)] += 1.0;
        }
        let n = pts.len().max(1) as f64;
        c.iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    jsd_discrete(&hist(a), &hist(b))
}

/// JSD on the first TICA component and jointly on the first two; the joint
/// value is absent for single-component models.
pub fn tica_jsd_projected(r: &DMatrix<f64>, g: &DMatrix<f64>, spec: &HistogramSpec) -> Result<(f64, Option<f64>)> {
    let c0r: Vec<f64> = r.column(0).iter().copied().collect();
    let c0g: Vec<f64> = g.column(0).iter().copied().collect();
    let j0 = histogram_jsd(&c0r, &c0g, spec)?;
    if r.ncols() < 2 {
        return Ok((j0, None));
    }
    let pr: Vec<[f64; 2]> = r.row_iter().map(|x| [x[0], x[1]]).collect();
    let pg: Vec<[f64; 2]> = g.row_iter().map(|x| [x[0], x[1]]).collect();
    Ok((j0, Some(histogram2d_jsd(&pr, &pg, spec.n_bins))))
}

pub fn tica_jsd(
    model: &TicaModel,
    ref_features: &DMatrix<f64>,
    gen_features: &DMatrix<f64>,
    spec: &HistogramSpec,
) -> Result<(f64, Option<f64>)> {
    tica_jsd_projected(&project_tica(model, ref_features)?, &project_tica(model, gen_features)?, spec)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub ref_mean: f64,
    pub ref_std: f64,
    pub gen_mean: f64,
    pub gen_std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

impl SummaryStats {
    pub fn of(r: &[f64], g: &[f64]) -> Self {
        let (ref_mean, ref_std) = mean_std(r);
        let (gen_mean, gen_std) = mean_std(g);
        SummaryStats {
            ref_mean,
            ref_std,
            gen_mean,
            gen_std,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub n_reference_frames: usize,
    pub n_generated_frames: usize,
    pub kt: f64,
    pub spec: HistogramSpec,
    pub jsd_per_observable: BTreeMap<String, f64>,
    pub kl_per_observable: BTreeMap<String, f64>,
    /// Free-energy units of `kt`.
    pub mmae: f64,
    pub pearson_pairwise_rmsd: Option<f64>,
    pub pearson_global_rmsf: Option<f64>,
    pub pearson_pertarget_rmsf: Option<f64>,
    pub msm_recovery_jsd: f64,
    pub delta_g_fold_mae: Option<f64>,
    pub rg_stats: Option<SummaryStats>,
    pub ss_stats: Option<SummaryStats>,
    pub tica_jsd_0: Option<f64>,
    pub tica_jsd_01: Option<f64>,
    pub macrostates_visited: usize,
    pub reference_occupancy: Vec<f64>,
    pub generated_occupancy: Vec<f64>,
    pub histograms: BTreeMap<String, PairedHistogram>,
}
