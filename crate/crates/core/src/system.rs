//! Conformations, trajectories, the 21-dimensional residue token and rigid
//! alignment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;

/// Per-token width: quaternion (4) + translation (3) + 7 torsion (cos, sin) pairs.
pub const TOKEN_DIM: usize = 21;
pub const MAX_TORSIONS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n_particles: usize,
    pub dim: usize,
    pub masses: Vec<f64>,
    /// Per-particle identity index (the residue-type analog fed to the label embedding).
    pub labels: Vec<usize>,
    #[serde(default)]
    pub n_torsions: usize,
}

impl SystemSpec {
    /// `n` unit-mass particles sharing label 0.
    pub fn uniform(n_particles: usize, dim: usize) -> Self {
        SystemSpec {
            n_particles,
            dim,
            masses: vec![1.0; n_particles],
            labels: vec![0; n_particles],
            n_torsions: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidArgument("system needs at least one particle".into()));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidArgument(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.masses.len() != self.n_particles || self.labels.len() != self.n_particles {
            return Err(Error::Shape(format!(
                "system has {} particles but {} masses and {} labels",
                self.n_particles,
                self.masses.len(),
                self.labels.len()
            )));
        }
        if let Some(m) = self.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidArgument(format!("particle masses must be positive, got {m}")));
        }
        if self.n_torsions > MAX_TORSIONS {
            return Err(Error::InvalidArgument(format!(
                "n_torsions must be <= {MAX_TORSIONS}, got {}",
                self.n_torsions
            )));
        }
        Ok(())
    }

    pub fn n_coords(&self) -> usize {
        self.n_particles * self.dim
    }

    /// Size of the label embedding table needed for this system.
    pub fn n_labels(&self) -> usize {
        self.labels.iter().max().map_or(1, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conformation {
    /// Row-major `n_particles x dim` coordinates.
    pub positions: Vec<f64>,
}

impl Conformation {
    pub fn new(positions: Vec<f64>) -> Self {
        Conformation { positions }
    }

    pub fn zeros(system: &SystemSpec) -> Self {
        Conformation::new(vec![0.0; system.n_coords()])
    }

    pub fn check(&self, system: &SystemSpec) -> Result<()> {
        if self.positions.len() != system.n_coords() {
            return Err(Error::Shape(format!(
                "conformation has {} coordinates, system expects {}",
                self.positions.len(),
                system.n_coords()
            )));
        }
        if self.positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("conformation has non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn particle(&self, i: usize, dim: usize) -> &[f64] {
        &self.positions[i * dim..(i + 1) * dim]
    }

    /// Position of particle `i` zero-padded to three dimensions.
    pub fn point3(&self, i: usize, dim: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        p[..dim].copy_from_slice(self.particle(i, dim));
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub system: SystemSpec,
    pub frames: Vec<Conformation>,
    pub save_interval: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.frames.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs at least 2 frames, has {}",
                self.frames.len()
            )));
        }
        if !(self.save_interval > 0.0) {
            return Err(Error::InvalidArgument("save_interval must be positive".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidArgument("temperature must be non-negative".into()));
        }
        for f in &self.frames {
            f.check(&self.system)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidueToken {
    pub quat: [f64; 4],
    pub trans: [f64; 3],
    pub torsion_pairs: [[f64; 2]; MAX_TORSIONS],
}

impl Default for ResidueToken {
    fn default() -> Self {
        ResidueToken {
            quat: [1.0, 0.0, 0.0, 0.0],
            trans: [0.0; 3],
            torsion_pairs: [[1.0, 0.0]; MAX_TORSIONS],
        }
    }
}

impl ResidueToken {
    pub fn to_array(&self) -> [f64; TOKEN_DIM] {
        let mut out = [0.0; TOKEN_DIM];
        out[..4].copy_from_slice(&self.quat);
        out[4..7].copy_from_slice(&self.trans);
        for (k, pair) in self.torsion_pairs.iter().enumerate() {
            out[7 + 2 * k] = pair[0];
            out[8 + 2 * k] = pair[1];
        }
        out
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), TOKEN_DIM);
        let mut t = ResidueToken::default();
        t.quat.copy_from_slice(&v[..4]);
        t.trans.copy_from_slice(&v[4..7]);
        for k in 0..MAX_TORSIONS {
            t.torsion_pairs[k] = [v[7 + 2 * k], v[8 + 2 * k]];
        }
        t
    }

    /// Unit quaternion and unit torsion pairs. Degenerate pairs (norm < 1e-8)
    /// become angle 0; a vanishing quaternion becomes the identity.
    pub fn projected(&self) -> Self {
        let mut t = *self;
        let qn = t.quat.iter().map(|x| x * x).sum::<f64>().sqrt();
        t.quat = if qn < 1e-8 {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            t.quat.map(|x| x / qn)
        };
        for k in 0..MAX_TORSIONS {
            let angle = pair_angle(t.torsion_pairs[k]);
            t.torsion_pairs[k] = [angle.cos(), angle.sin()];
        }
        t
    }

    pub fn torsion_angles(&self) -> [f64; MAX_TORSIONS] {
        self.torsion_pairs.map(pair_angle)
    }
}

/// Angle of a (cos, sin) pair after projection to the unit circle.
pub fn pair_angle(pair: [f64; 2]) -> f64 {
    let norm = (pair[0] * pair[0] + pair[1] * pair[1]).sqrt();
    if norm < 1e-8 {
        0.0
    } else {
        (pair[1] / norm).atan2(pair[0] / norm)
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Signed dihedral angle of four points (IUPAC convention, in (-pi, pi]).
pub fn dihedral(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], p3: [f64; 3]) -> f64 {
    let b1 = sub3(p1, p0);
    let b2 = sub3(p2, p1);
    let b3 = sub3(p3, p2);
    let n1 = cross3(b1, b2);
    let n2 = cross3(b2, b3);
    let b2n = dot3(b2, b2).sqrt();
    let y = b2n * dot3(b1, n2);
    let x = dot3(n1, n2);
    y.atan2(x)
}

/// Torsion slot `k` of particle `l` is the dihedral of particles `l+k .. l+k+3`.
pub fn chain_torsion(conf: &Conformation, system: &SystemSpec, l: usize, k: usize) -> Option<f64> {
    let start = l + k;
    if start + 3 >= system.n_particles {
        return None;
    }
    let d = system.dim;
    Some(dihedral(
        conf.point3(start, d),
        conf.point3(start + 1, d),
        conf.point3(start + 2, d),
        conf.point3(start + 3, d),
    ))
}

/// All defined chain dihedrals in particle order.
pub fn chain_dihedrals(conf: &Conformation, system: &SystemSpec) -> Vec<f64> {
    (0..system.n_particles)
        .filter_map(|l| chain_torsion(conf, system, l, 0))
        .collect()
}

pub fn encode_tokens(conf: &Conformation, system: &SystemSpec) -> Result<Vec<ResidueToken>> {
    if conf.positions.len() != system.n_coords() {
        return Err(Error::Shape(format!(
            "conformation has {} coordinates, system expects {}",
            conf.positions.len(),
            system.n_coords()
        )));
    }
    let d = system.dim;
    Ok((0..system.n_particles)
        .map(|l| {
            let mut tok = ResidueToken {
                trans: conf.point3(l, d),
                ..ResidueToken::default()
            };
            for k in 0..system.n_torsions.min(MAX_TORSIONS) {
                if let Some(phi) = chain_torsion(conf, system, l, k) {
                    tok.torsion_pairs[k] = [phi.cos(), phi.sin()];
                }
            }
            tok
        })
        .collect())
}

/// Tokens flattened into one `21 * n_particles` vector.
pub fn encode_flat(conf: &Conformation, system: &SystemSpec) -> Result<Vec<f64>> {
    Ok(encode_tokens(conf, system)?
        .iter()
        .flat_map(|t| t.to_array())
        .collect())
}

/// Positions are read back from the translation slots; rotational and torsion
/// slots carry no extra information for point particles and are projected away.
pub fn decode_tokens(tokens: &[ResidueToken], system: &SystemSpec) -> Result<Conformation> {
    if tokens.len() != system.n_particles {
        return Err(Error::Shape(format!(
            "{} tokens for a {}-particle system",
            tokens.len(),
            system.n_particles
        )));
    }
    let d = system.dim;
    let mut positions = Vec::with_capacity(system.n_coords());
    for t in tokens {
        positions.extend_from_slice(&t.projected().trans[..d]);
    }
    Ok(Conformation::new(positions))
}

pub fn decode_flat(flat: &[f64], system: &SystemSpec) -> Result<Conformation> {
    if flat.len() != TOKEN_DIM * system.n_particles {
        return Err(Error::Shape(format!(
            "flat token vector of length {} for a {}-particle system",
            flat.len(),
            system.n_particles
        )));
    }
    let tokens: Vec<ResidueToken> = flat.chunks(TOKEN_DIM).map(ResidueToken::from_slice).collect();
    decode_tokens(&tokens, system)
}

pub fn rmsd(a: &Conformation, b: &Conformation, dim: usize) -> Result<f64> {
    if a.positions.len() != b.positions.len() || dim == 0 || a.positions.len() % dim != 0 {
        return Err(Error::Shape("rmsd inputs differ in shape".into()));
    }
    let n = (a.positions.len() / dim).max(1) as f64;
    let ss: f64 = a
        .positions
        .iter()
        .zip(&b.positions)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((ss / n).sqrt())
}

fn centroid(c: &Conformation, dim: usize) -> [f64; 3] {
    let n = c.positions.len() / dim;
    let mut out = [0.0; 3];
    for i in 0..n {
        for (a, &x) in c.particle(i, dim).iter().enumerate() {
            out[a] += x;
        }
    }
    out.map(|x| x / n as f64)
}

/// Rotation matrix (row-major) of a unit quaternion (w, x, y, z).
fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

/// Optimal proper rotation (no reflection) plus translation of `mobile` onto
/// `reference`. Three-dimensional systems use the quaternion eigenvector
/// formulation, two-dimensional ones the closed-form angle, and
/// one-dimensional ones translation only.
pub fn kabsch_align(mobile: &Conformation, reference: &Conformation, dim: usize) -> Result<Conformation> {
    if mobile.positions.len() != reference.positions.len() || dim == 0 || mobile.positions.len() % dim != 0 {
        return Err(Error::Shape("kabsch_align inputs differ in shape".into()));
    }
    let n = mobile.positions.len() / dim;
    let cm = centroid(mobile, dim);
    let cr = centroid(reference, dim);
    let centered = |c: &Conformation, com: [f64; 3], i: usize| {
        let mut p = c.point3(i, dim);
        for a in 0..dim {
            p[a] -= com[a];
        }
        p
    };

    let spread = (0..n)
        .map(|i| dot3(centered(mobile, cm, i), centered(mobile, cm, i)))
        .sum::<f64>();
    let rot = if dim == 1 || spread < 1e-24 {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    } else if dim == 2 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let m = centered(mobile, cm, i);
            let r = centered(reference, cr, i);
            num += m[0] * r[1] - m[1] * r[0];
            den += m[0] * r[0] + m[1] * r[1];
        }
        let th = num.atan2(den);
        let (s, c) = th.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    } else {
        let mut s = [[0.0; 3]; 3];
        for i in 0..n {
            let m = centered(mobile, cm, i);
            let r = centered(reference, cr, i);
            for a in 0..3 {
                for b in 0..3 {
                    s[a][b] += m[a] * r[b];
                }
            }
        }
        let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
        let nmat = DMatrix::from_row_slice(
            4,
            4,
            &[
                sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
                syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
                szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
                sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
            ],
        );
        let (_, vecs) = jacobi_eigen(&nmat);
        let q = [vecs[(0, 0)], vecs[(1, 0)], vecs[(2, 0)], vecs[(3, 0)]];
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        quat_to_matrix(q.map(|x| x / qn))
    };

    let mut out = Vec::with_capacity(mobile.positions.len());
    for i in 0..n {
        let m = centered(mobile, cm, i);
        for a in 0..dim {
            out.push(dot3(rot[a], m) + cr[a]);
        }
    }
    Ok(Conformation::new(out))
}
