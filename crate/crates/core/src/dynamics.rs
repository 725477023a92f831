//! Ground-truth data: analytic toy potentials integrated with underdamped
//! Langevin dynamics (BAOAB splitting).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::system::{cross3, dot3, Conformation, SystemSpec, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DihedralTerm {
    pub k: f64,
    pub n: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `U = a * sum_i (x_i^2 - 1)^2` over every coordinate.
    DoubleWell1d { a: f64 },
    /// Three Gaussian wells on a circle plus a quartic confinement, per particle:
    /// `U(p) = -depth * sum_k exp(-|p - c_k|^2 / (2 width^2)) + confinement * |p|^4`,
    /// with centers at angles 90, 210 and 330 degrees.
    TripleWell2d {
        depth: f64,
        width: f64,
        radius: f64,
        confinement: f64,
    },
    /// `U = k/2 * |x|^2`.
    Harmonic { k: f64 },
    /// Bead chain: harmonic bonds, `angle_k * (cos theta - cos angle0)^2`
    /// bends, and a cosine series `sum k (1 + cos(n phi - delta))` per dihedral.
    TorsionChain {
        bond_k: f64,
        bond_length: f64,
        angle_k: f64,
        angle0: f64,
        dihedral: Vec<DihedralTerm>,
    },
}

impl Default for Potential {
    fn default() -> Self {
        Potential::TripleWell2d {
            depth: 6.0,
            width: 0.5,
            radius: 1.2,
            confinement: 0.05,
        }
    }
}

fn triple_well_centers(radius: f64) -> [[f64; 2]; 3] {
    let mut c = [[0.0; 2]; 3];
    for (k, ck) in c.iter_mut().enumerate() {
        let ang = std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
        *ck = [radius * ang.cos(), radius * ang.sin()];
    }
    c
}

impl Potential {
    pub fn check_system(&self, system: &SystemSpec) -> Result<()> {
        system.validate()?;
        match self {
            Potential::TripleWell2d { width, .. } => {
                if system.dim != 2 {
                    return Err(Error::InvalidArgument("triple_well_2d needs dim = 2".into()));
                }
                if !(*width > 0.0) {
                    return Err(Error::InvalidArgument("triple_well_2d width must be positive".into()));
                }
            }
            Potential::TorsionChain { .. } => {
                if system.dim != 3 || system.n_particles < 2 {
                    return Err(Error::InvalidArgument(
                        "torsion_chain needs dim = 3 and at least 2 particles".into(),
                    ));
                }
            }
            Potential::DoubleWell1d { .. } | Potential::Harmonic { .. } => {}
        }
        Ok(())
    }

    pub fn energy(&self, x: &[f64], dim: usize) -> f64 {
        match self {
            Potential::DoubleWell1d { a } => x.iter().map(|&xi| a * (xi * xi - 1.0).powi(2)).sum(),
            Potential::Harmonic { k } => 0.5 * k * x.iter().map(|xi| xi * xi).sum::<f64>(),
            Potential::TripleWell2d {
                depth,
                width,
                radius,
                confinement,
            } => {
                let centers = triple_well_centers(*radius);
                let w2 = 2.0 * width * width;
                x.chunks(dim)
                    .map(|p| {
                        let r2 = p[0] * p[0] + p[1] * p[1];
                        let wells: f64 = centers
                            .iter()
                            .map(|c| (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / w2).exp())
                            .sum();
                        -depth * wells + confinement * r2 * r2
                    })
                    .sum()
            }
            Potential::TorsionChain { .. } => {
                let mut g = vec![0.0; x.len()];
                self.chain_terms(x, &mut g)
            }
        }
    }

    /// Writes `dU/dx` into `grad` (overwriting) and returns the energy.
    pub fn energy_and_gradient(&self, x: &[f64], dim: usize, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), grad.len());
        match self {
            Potential::DoubleWell1d { a } => {
                let mut e = 0.0;
                for (g, &xi) in grad.iter_mut().zip(x) {
                    let q = xi * xi - 1.0;
                    e += a * q * q;
                    *g = 4.0 * a * xi * q;
                }
                e
            }
            Potential::Harmonic { k } => {
                let mut e = 0.0;
                for (g, &xi) in grad.iter_mut().zip(x) {
                    e += 0.5 * k * xi * xi;
                    *g = k * xi;
                }
                e
            }
            Potential::TripleWell2d {
                depth,
                width,
                radius,
                confinement,
            } => {
                let centers = triple_well_centers(*radius);
                let w2 = width * width;
                let mut e = 0.0;
                for (p, g) in x.chunks(dim).zip(grad.chunks_mut(dim)) {
                    let r2 = p[0] * p[0] + p[1] * p[1];
                    e += confinement * r2 * r2;
                    g[0] = 4.0 * confinement * r2 * p[0];
                    g[1] = 4.0 * confinement * r2 * p[1];
                    for c in &centers {
                        let dx = p[0] - c[0];
                        let dy = p[1] - c[1];
                        let w = (-(dx * dx + dy * dy) / (2.0 * w2)).exp();
                        e -= depth * w;
                        g[0] += depth * w * dx / w2;
                        g[1] += depth * w * dy / w2;
                    }
                }
                e
            }
            Potential::TorsionChain { .. } => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                self.chain_terms(x, grad)
            }
        }
    }

    /// Energy of a torsion chain, accumulating its gradient into `grad`.
    fn chain_terms(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let Potential::TorsionChain {
            bond_k,
            bond_length,
            angle_k,
            angle0,
            dihedral,
        } = self
        else {
            unreachable!()
        };
        let n = x.len() / 3;
        let p = |i: usize| [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
        let mut add = |i: usize, v: [f64; 3], s: f64| {
            for a in 0..3 {
                grad[3 * i + a] += s * v[a];
            }
        };
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let mut e = 0.0;

        for i in 0..n.saturating_sub(1) {
            let d = sub(p(i + 1), p(i));
            let r = dot3(d, d).sqrt();
            let dr = r - bond_length;
            e += bond_k * dr * dr;
            if r > 0.0 {
                let s = 2.0 * bond_k * dr / r;
                add(i + 1, d, s);
                add(i, d, -s);
            }
        }

        let cos0 = angle0.cos();
        for i in 1..n.saturating_sub(1) {
            let u = sub(p(i - 1), p(i));
            let v = sub(p(i + 1), p(i));
            let (nu, nv) = (dot3(u, u).sqrt(), dot3(v, v).sqrt());
            if nu == 0.0 || nv == 0.0 {
                continue;
            }
            let c = dot3(u, v) / (nu * nv);
            let dc = c - cos0;
            e += angle_k * dc * dc;
            let s = 2.0 * angle_k * dc;
            // d cos / du = v/(|u||v|) - c u/|u|^2, likewise for v.
            let gu: [f64; 3] = std::array::from_fn(|a| v[a] / (nu * nv) - c * u[a] / (nu * nu));
            let gv: [f64; 3] = std::array::from_fn(|a| u[a] / (nu * nv) - c * v[a] / (nv * nv));
            add(i - 1, gu, s);
            add(i + 1, gv, s);
            add(i, [gu[0] + gv[0], gu[1] + gv[1], gu[2] + gv[2]], -s);
        }

        if !dihedral.is_empty() {
            for i in 0..n.saturating_sub(3) {
                let b1 = sub(p(i + 1), p(i));
                let b2 = sub(p(i + 2), p(i + 1));
                let b3 = sub(p(i + 3), p(i + 2));
                let m = cross3(b1, b2);
                let nn = cross3(b2, b3);
                let m2 = dot3(m, m);
                let n2 = dot3(nn, nn);
                let b2n = dot3(b2, b2).sqrt();
                if m2 < 1e-24 || n2 < 1e-24 || b2n == 0.0 {
                    continue;
                }
                let phi = (b2n * dot3(b1, nn)).atan2(dot3(m, nn));
                let mut de_dphi = 0.0;
                for t in dihedral {
                    e += t.k * (1.0 + (t.n * phi - t.delta).cos());
                    de_dphi -= t.k * t.n * (t.n * phi - t.delta).sin();
                }
                let g0: [f64; 3] = std::array::from_fn(|a| -b2n / m2 * m[a]);
                let g3: [f64; 3] = std::array::from_fn(|a| b2n / n2 * nn[a]);
                let f1 = dot3(b1, b2) / (b2n * b2n);
                let f3 = dot3(b3, b2) / (b2n * b2n);
                let g1: [f64; 3] = std::array::from_fn(|a| (-f1 - 1.0) * g0[a] + f3 * g3[a]);
                let g2: [f64; 3] = std::array::from_fn(|a| (-f3 - 1.0) * g3[a] + f1 * g0[a]);
                add(i, g0, de_dphi);
                add(i + 1, g1, de_dphi);
                add(i + 2, g2, de_dphi);
                add(i + 3, g3, de_dphi);
            }
        }
        e
    }

    pub fn potential_energy(&self, x: &Conformation, dim: usize) -> f64 {
        self.energy(&x.positions, dim)
    }

    /// `-grad U`.
    pub fn force(&self, x: &Conformation, dim: usize) -> Vec<f64> {
        let mut g = vec![0.0; x.positions.len()];
        self.energy_and_gradient(&x.positions, dim, &mut g);
        g.iter_mut().for_each(|v| *v = -*v);
        g
    }

    /// Gradient descent with backtracking to a nearby stationary point.
    pub fn local_minimum(&self, start: &[f64], dim: usize) -> Vec<f64> {
        let mut x = start.to_vec();
        let mut g = vec![0.0; x.len()];
        let mut e = self.energy_and_gradient(&x, dim, &mut g);
        let mut step = 0.1;
        for _ in 0..20_000 {
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < 1e-10 {
                break;
            }
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let mut gt = vec![0.0; x.len()];
            let et = self.energy_and_gradient(&trial, dim, &mut gt);
            if et < e {
                x = trial;
                g = gt;
                e = et;
                step *= 1.2;
            } else {
                step *= 0.5;
                if step < 1e-16 {
                    break;
                }
            }
        }
        x
    }
}

/// Minima and pairwise barriers of the single-particle triple well.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WellAnalysis {
    pub minima: Vec<[f64; 2]>,
    pub minimum_energies: Vec<f64>,
    /// `barriers[i][j]`: lowest saddle energy connecting `i` and `j` minus the energy of `i`.
    pub barriers: Vec<Vec<f64>>,
}

impl WellAnalysis {
    pub fn min_barrier(&self) -> f64 {
        let mut b = f64::INFINITY;
        for (i, row) in self.barriers.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    b = b.min(v);
                }
            }
        }
        b
    }

    /// Index of the nearest minimum.
    pub fn nearest_well(&self, p: &[f64]) -> usize {
        let d = |m: &[f64; 2]| (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
        (0..self.minima.len())
            .min_by(|&a, &b| d(&self.minima[a]).total_cmp(&d(&self.minima[b])))
            .unwrap_or(0)
    }
}

/// Locates the triple-well minima by descent from each center and measures
/// the minimax (saddle) energy between them by flooding a fine grid.
pub fn analyze_triple_well(p: &Potential) -> Result<WellAnalysis> {
    let Potential::TripleWell2d { width, radius, .. } = p else {
        return Err(Error::InvalidArgument("analyze_triple_well needs a triple_well_2d potential".into()));
    };
    let mut minima: Vec<[f64; 2]> = Vec::new();
    for c in triple_well_centers(*radius) {
        let m = p.local_minimum(&c, 2);
        let m = [m[0], m[1]];
        if !minima.iter().any(|q| (q[0] - m[0]).hypot(q[1] - m[1]) < 1e-4) {
            minima.push(m);
        }
    }
    // Strict minimum: Hessian positive definite by finite differences.
    for m in &minima {
        let h = 1e-4;
        let e = |x: f64, y: f64| p.energy(&[x, y], 2);
        let hxx = (e(m[0] + h, m[1]) - 2.0 * e(m[0], m[1]) + e(m[0] - h, m[1])) / (h * h);
        let hyy = (e(m[0], m[1] + h) - 2.0 * e(m[0], m[1]) + e(m[0], m[1] - h)) / (h * h);
        let hxy = (e(m[0] + h, m[1] + h) - e(m[0] + h, m[1] - h) - e(m[0] - h, m[1] + h) + e(m[0] - h, m[1] - h))
            / (4.0 * h * h);
        if !(hxx > 0.0 && hxx * hyy - hxy * hxy > 0.0) {
            return Err(Error::InvalidArgument("triple_well_2d minimum is not strict".into()));
        }
    }
    let minimum_energies: Vec<f64> = minima.iter().map(|m| p.energy(m, 2)).collect();

    let extent = radius + 4.0 * width;
    let n = 601usize;
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (n - 1) as f64;
    let mut cells: Vec<(f64, usize)> = (0..n * n)
        .map(|idx| (p.energy(&[coord(idx % n), coord(idx / n)], 2), idx))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut parent: Vec<usize> = (0..n * n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let nearest_cell = |m: &[f64; 2]| {
        let to = |v: f64| (((v + extent) / (2.0 * extent)) * (n - 1) as f64).round() as usize;
        to(m[1]) * n + to(m[0])
    };
    let min_cells: Vec<usize> = minima.iter().map(nearest_cell).collect();
    let k = minima.len();
    let mut saddle = vec![vec![f64::INFINITY; k]; k];
    let mut active = vec![false; n * n];
    for &(e, idx) in &cells {
        active[idx] = true;
        let (ix, iy) = (idx % n, idx / n);
        let mut neighbors = Vec::with_capacity(4);
        if ix > 0 {
            neighbors.push(idx - 1);
        }
        if ix + 1 < n {
            neighbors.push(idx + 1);
        }
        if iy > 0 {
            neighbors.push(idx - n);
        }
        if iy + 1 < n {
            neighbors.push(idx + n);
        }
        for nb in neighbors {
            if active[nb] {
                let (a, b) = (find(&mut parent, idx), find(&mut parent, nb));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if saddle[i][j].is_infinite() && active[min_cells[i]] && active[min_cells[j]] {
                    let (ri, rj) = (find(&mut parent, min_cells[i]), find(&mut parent, min_cells[j]));
                    if ri == rj {
                        saddle[i][j] = e;
                        saddle[j][i] = e;
                    }
                }
            }
        }
    }
    let barriers = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 0.0 } else { saddle[i][j] - minimum_energies[i] })
                .collect()
        })
        .collect();
    Ok(WellAnalysis {
        minima,
        minimum_energies,
        barriers,
    })
}

/// Construction-time check for the triple well: at least two strict minima
/// separated by barriers of at least `2 kT`.
pub fn validate_potential(p: &Potential, system: &SystemSpec, kt: f64) -> Result<()> {
    p.check_system(system)?;
    if let Potential::TripleWell2d { .. } = p {
        let wa = analyze_triple_well(p)?;
        if wa.minima.len() < 2 {
            return Err(Error::InvalidArgument("triple_well_2d has fewer than two minima".into()));
        }
        if wa.min_barrier() < 2.0 * kt {
            return Err(Error::InvalidArgument(format!(
                "triple_well_2d barrier {:.3} is below 2 kT = {:.3}",
                wa.min_barrier(),
                2.0 * kt
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinParams {
    pub friction: f64,
    pub temperature: f64,
    pub dt: f64,
    pub n_steps: u64,
    pub save_stride: u64,
    pub seed: u64,
}

impl Default for LangevinParams {
    fn default() -> Self {
        LangevinParams {
            friction: 1.0,
            temperature: 1.0,
            dt: 0.01,
            n_steps: 200_000,
            save_stride: 10,
            seed: 0,
        }
    }
}

impl LangevinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if !(self.friction >= 0.0) {
            return Err(Error::InvalidArgument("friction must be non-negative".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidArgument("temperature must be non-negative".into()));
        }
        if self.save_stride == 0 {
            return Err(Error::InvalidArgument("save_stride must be at least 1".into()));
        }
        if self.n_steps < self.save_stride {
            return Err(Error::InvalidArgument(format!(
                "n_steps ({}) must cover at least one save_stride ({})",
                self.n_steps, self.save_stride
            )));
        }
        if !(self.dt * self.friction < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "stability guard violated: dt * friction = {} >= 2",
                self.dt * self.friction
            )));
        }
        Ok(())
    }
}

const VELOCITY_INIT_KEY: u64 = u64::MAX;

/// BAOAB state for one trajectory.
pub struct Integrator<'a> {
    potential: &'a Potential,
    system: &'a SystemSpec,
    params: LangevinParams,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    grad: Vec<f64>,
    pub energy: f64,
    pub step: u64,
    c1: f64,
    c2: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(potential: &'a Potential, system: &'a SystemSpec, params: &LangevinParams, x0: &Conformation) -> Result<Self> {
        params.validate()?;
        potential.check_system(system)?;
        x0.check(system)?;
        let dim = system.dim;
        let mut v = vec![0.0; system.n_coords()];
        for i in 0..system.n_particles {
            let sd = (params.temperature / system.masses[i]).sqrt();
            let mut rng = keyed_rng(params.seed, &[VELOCITY_INIT_KEY, i as u64]);
            for a in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                v[i * dim + a] = sd * z;
            }
        }
        let x = x0.positions.clone();
        let mut grad = vec![0.0; x.len()];
        let energy = potential.energy_and_gradient(&x, dim, &mut grad);
        let c1 = (-params.friction * params.dt).exp();
        let c2 = (1.0 - c1 * c1).max(0.0).sqrt();
        Ok(Integrator {
            potential,
            system,
            params: params.clone(),
            x,
            v,
            grad,
            energy,
            step: 0,
            c1,
            c2,
        })
    }

    pub fn kinetic_energy(&self) -> f64 {
        let d = self.system.dim;
        self.v
            .iter()
            .enumerate()
            .map(|(k, v)| 0.5 * self.system.masses[k / d] * v * v)
            .sum()
    }

    /// One BAOAB step. Noise for particle `i` at step `n` comes from the
    /// stream keyed `(seed, n, i)`.
    pub fn step(&mut self) -> Result<()> {
        let dim = self.system.dim;
        let h = 0.5 * self.params.dt;
        let kt = self.params.temperature;
        for (k, v) in self.v.iter_mut().enumerate() {
            *v -= h * self.grad[k] / self.system.masses[k / dim];
        }
        for (x, v) in self.x.iter_mut().zip(&self.v) {
            *x += h * v;
        }
        if self.c2 > 0.0 && kt > 0.0 {
            for i in 0..self.system.n_particles {
                let sd = self.c2 * (kt / self.system.masses[i]).sqrt();
                let mut rng = keyed_rng(self.params.seed, &[self.step, i as u64]);
                for a in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let v = &mut self.v[i * dim + a];
                    *v = self.c1 * *v + sd * z;
                }
            }
        } else {
            for v in self.v.iter_mut() {
                *v *= self.c1;
            }
        }
        for (x, v) in self.x.iter_mut().zip(&self.v) {
            *x += h * v;
        }
        self.energy = self.potential.energy_and_gradient(&self.x, dim, &mut self.grad);
        for (k, v) in self.v.iter_mut().enumerate() {
            *v -= h * self.grad[k] / self.system.masses[k / dim];
        }
        self.step += 1;
        if self.x.iter().chain(&self.v).any(|x| !x.is_finite()) || !self.energy.is_finite() {
            return Err(Error::IntegrationBlowup { step: self.step });
        }
        Ok(())
    }
}

/// Integrates `n_steps` BAOAB steps from `x0`, saving `x0` and then every
/// `save_stride`-th configuration.
pub fn simulate(p: &Potential, system: &SystemSpec, params: &LangevinParams, x0: &Conformation) -> Result<Trajectory> {
    let mut integ = Integrator::new(p, system, params, x0)?;
    let n_saved = (params.n_steps / params.save_stride) as usize + 1;
    let mut frames = Vec::with_capacity(n_saved);
    frames.push(x0.clone());
    while integ.step < params.n_steps {
        integ.step()?;
        if integ.step % params.save_stride == 0 {
            frames.push(Conformation::new(integ.x.clone()));
        }
    }
    Ok(Trajectory {
        system: system.clone(),
        frames,
        save_interval: params.dt * params.save_stride as f64,
        temperature: params.temperature,
        seed: params.seed,
    })
}
