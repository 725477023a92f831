//! Assembles a `MetricReport` for one generated ensemble against a
//! reference ensemble, and aggregates repeated runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    delta_g_fold, flexibility_correlations, fnc_from_contacts, forward_kl, histogram_jsd, macrostate_mae,
    native_contacts, occupancy, paired_histogram, q_half_threshold, radius_of_gyration, ss_fraction,
    tica_jsd_projected, FncParams, HistogramSpec, MetricReport, SummaryStats,
};
use crate::msm::MarkovStateModel;
use crate::system::{chain_torsion, Conformation, SystemSpec, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub histogram: HistogramSpec,
    pub fnc: FncParams,
    pub steepness: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            histogram: HistogramSpec::default(),
            fnc: FncParams::default(),
            steepness: 10.0,
        }
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];

fn has_torsions(frame: &Conformation, system: &SystemSpec) -> bool {
    (0..system.n_particles).any(|l| chain_torsion(frame, system, l, 0).is_some())
}

/// Per-frame scalar observables, keyed by name.
fn observables(
    frames: &[Conformation],
    system: &SystemSpec,
    msm: &MarkovStateModel,
    contacts: &[(usize, usize, f64)],
    settings: &EvalSettings,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if system.n_particles == 1 {
        for a in 0..system.dim {
            out.insert(format!("coord_{}", AXES[a]), frames.iter().map(|f| f.positions[a]).collect());
        }
    } else {
        out.insert(
            "rg".into(),
            frames.iter().map(|f| radius_of_gyration(f, &system.masses, system.dim)).collect(),
        );
        if frames.first().is_some_and(|f| has_torsions(f, system)) {
            let w = &msm.assigner.window;
            out.insert("ss".into(), frames.iter().map(|f| ss_fraction(f, system, w)).collect());
        }
        if !contacts.is_empty() {
            let q: Result<Vec<f64>> = frames
                .iter()
                .map(|f| fnc_from_contacts(f, system.dim, contacts, &settings.fnc))
                .collect();
            out.insert("fnc".into(), q?);
        }
    }
    if msm.assigner.tica.is_some() {
        let y = msm.assigner.embed_frames(frames)?;
        if y.ncols() > 0 {
            out.insert("tica0".into(), y.column(0).iter().copied().collect());
        }
    }
    Ok(out)
}

/// Reference and generated frames must share `msm.assigner.system`.
/// The reference macrostate distribution is the reference occupancy under
/// the MSM's state assignment.
pub fn evaluate_ensemble(
    label: &str,
    reference: &[Conformation],
    generated: &[Conformation],
    msm: &MarkovStateModel,
    kt: f64,
    settings: &EvalSettings,
) -> Result<MetricReport> {
    settings.histogram.validate()?;
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::InvalidArgument("reference and generated ensembles must be non-empty".into()));
    }
    let system = &msm.assigner.system;
    for f in reference.iter().chain(generated) {
        f.check(system)?;
    }
    let spec = &settings.histogram;
    let contacts = if system.n_particles > 1 {
        native_contacts(&reference[0], system, &settings.fnc)
    } else {
        Vec::new()
    };
    let obs_r = observables(reference, system, msm, &contacts, settings)?;
    let obs_g = observables(generated, system, msm, &contacts, settings)?;

    let mut report = MetricReport {
        label: label.to_string(),
        n_reference_frames: reference.len(),
        n_generated_frames: generated.len(),
        kt,
        spec: spec.clone(),
        ..Default::default()
    };
    for (name, r) in &obs_r {
        let g = &obs_g[name];
        report.jsd_per_observable.insert(name.clone(), histogram_jsd(r, g, spec)?);
        report.kl_per_observable.insert(name.clone(), forward_kl(r, g, spec)?);
        report.histograms.insert(name.clone(), paired_histogram(r, g, spec.n_bins));
    }

    let m = msm.n_macro;
    let pi_ref = occupancy(&msm.assigner, reference, m)?;
    let pi_gen = occupancy(&msm.assigner, generated, m)?;
    report.mmae = macrostate_mae(&pi_gen, &pi_ref, kt, spec.floor_mmae)?;
    report.msm_recovery_jsd = crate::metrics::jsd_discrete(&pi_gen, &pi_ref);
    report.macrostates_visited = pi_gen.iter().filter(|&&p| p > 0.0).count();
    report.reference_occupancy = pi_ref;
    report.generated_occupancy = pi_gen;

    if reference.len() >= 2 && generated.len() >= 2 {
        let fc = flexibility_correlations(&[reference.to_vec()], &[generated.to_vec()], system.dim)?;
        report.pearson_pairwise_rmsd = fc.pairwise_rmsd;
        report.pearson_global_rmsf = fc.global_rmsf;
        report.pearson_pertarget_rmsf = fc.pertarget_rmsf;
    }

    if let (Some(qr), Some(qg)) = (obs_r.get("fnc"), obs_g.get("fnc")) {
        let q_half = q_half_threshold(qr);
        let dr = delta_g_fold(qr, q_half, kt, settings.steepness);
        let dg = delta_g_fold(qg, q_half, kt, settings.steepness);
        report.delta_g_fold_mae = Some((dg - dr).abs());
    }
    if let (Some(r), Some(g)) = (obs_r.get("rg"), obs_g.get("rg")) {
        report.rg_stats = Some(SummaryStats::of(r, g));
    }
    if let (Some(r), Some(g)) = (obs_r.get("ss"), obs_g.get("ss")) {
        report.ss_stats = Some(SummaryStats::of(r, g));
    }

    if msm.assigner.tica.is_some() {
        let yr = msm.assigner.embed_frames(reference)?;
        let yg = msm.assigner.embed_frames(generated)?;
        if yr.ncols() > 0 {
            let (j0, j01) = tica_jsd_projected(&yr, &yg, spec)?;
            report.tica_jsd_0 = Some(j0);
            report.tica_jsd_01 = j01;
        }
    }
    Ok(report)
}

/// Every numeric field of a report, flattened to `name -> value`; absent
/// optional fields are omitted.
pub fn report_scalars(r: &MetricReport) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (k, v) in &r.jsd_per_observable {
        out.insert(format!("jsd.{k}"), *v);
    }
    for (k, v) in &r.kl_per_observable {
        out.insert(format!("kl.{k}"), *v);
    }
    out.insert("mmae".into(), r.mmae);
    out.insert("msm_recovery_jsd".into(), r.msm_recovery_jsd);
    out.insert("macrostates_visited".into(), r.macrostates_visited as f64);
    let optional = [
        ("pearson_pairwise_rmsd", r.pearson_pairwise_rmsd),
        ("pearson_global_rmsf", r.pearson_global_rmsf),
        ("pearson_pertarget_rmsf", r.pearson_pertarget_rmsf),
        ("delta_g_fold_mae", r.delta_g_fold_mae),
        ("tica_jsd_0", r.tica_jsd_0),
        ("tica_jsd_01", r.tica_jsd_01),
    ];
    for (k, v) in optional {
        if let Some(v) = v {
            out.insert(k.into(), v);
        }
    }
    for (name, s) in [("rg", &r.rg_stats), ("ss", &r.ss_stats)] {
        if let Some(s) = s {
            out.insert(format!("{name}.ref_mean"), s.ref_mean);
            out.insert(format!("{name}.gen_mean"), s.gen_mean);
            out.insert(format!("{name}.ref_std"), s.ref_std);
            out.insert(format!("{name}.gen_std"), s.gen_std);
        }
    }
    out
}

/// Reports of repeated runs with the per-field mean and standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub label: String,
    pub n_runs: usize,
    pub mean: BTreeMap<String, f64>,
    /// Standard error of the mean (sample standard deviation over `sqrt(n)`);
    /// 0 for a single run.
    pub stderr: BTreeMap<String, f64>,
    pub runs: Vec<MetricReport>,
}

pub fn aggregate(label: &str, runs: Vec<MetricReport>) -> EvaluationReport {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        for (k, v) in report_scalars(r) {
            values.entry(k).or_default().push(v);
        }
    }
    let mut mean = BTreeMap::new();
    let mut stderr = BTreeMap::new();
    for (k, v) in values {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        mean.insert(k.clone(), m);
        stderr.insert(k, se);
    }
    EvaluationReport {
        label: label.to_string(),
        n_runs: runs.len(),
        mean,
        stderr,
        runs,
    }
}

/// Leave-one-out replica evaluation: each replica in turn is scored against
/// the pooled remaining replicas.
pub fn oracle_reports(replicas: &[Trajectory], msm: &MarkovStateModel, kt: f64, settings: &EvalSettings) -> Result<Vec<MetricReport>> {
    if replicas.len() < 2 {
        return Err(Error::InvalidArgument("the oracle protocol needs at least two replicas".into()));
    }
    (0..replicas.len())
        .map(|held| {
            let reference: Vec<Conformation> = replicas
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .flat_map(|(_, t)| t.frames.iter().cloned())
                .collect();
            evaluate_ensemble(
                &format!("oracle_replica{held}"),
                &reference,
                &replicas[held].frames,
                msm,
                kt,
                settings,
            )
        })
        .collect()
}
