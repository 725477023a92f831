//! Binary trajectory container ("MSET") and CSV export.
//!
//! Layout, all little-endian: magic `MSET`, version `u32`, `n_frames u64`,
//! `n_particles u32`, `dim u32`, `save_interval f64`, `temperature f64`,
//! `seed u64`, then `n_frames * n_particles * dim` coordinates as `f64`,
//! frame-major and row-major within a frame.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::system::{Conformation, SystemSpec, Trajectory};

pub const MSET_MAGIC: &[u8; 4] = b"MSET";
pub const MSET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub n_particles: usize,
    pub dim: usize,
    pub save_interval: f64,
    pub temperature: f64,
    pub seed: u64,
    pub frames: Vec<Conformation>,
}

impl FrameSet {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        FrameSet {
            n_particles: traj.system.n_particles,
            dim: traj.system.dim,
            save_interval: traj.save_interval,
            temperature: traj.temperature,
            seed: traj.seed,
            frames: traj.frames.clone(),
        }
    }

    /// Attach a system description, checking that shapes agree.
    pub fn into_trajectory(self, system: &SystemSpec) -> Result<Trajectory> {
        if self.n_particles != system.n_particles || self.dim != system.dim {
            return Err(Error::Shape(format!(
                "file holds {} particles in {}D, system has {} in {}D",
                self.n_particles, self.dim, system.n_particles, system.dim
            )));
        }
        let traj = Trajectory {
            system: system.clone(),
            frames: self.frames,
            save_interval: self.save_interval,
            temperature: self.temperature,
            seed: self.seed,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n_coords = self.n_particles * self.dim;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * n_coords * self.frames.len());
        out.extend_from_slice(MSET_MAGIC);
        out.extend_from_slice(&MSET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_particles as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.save_interval.to_le_bytes());
        out.extend_from_slice(&self.temperature.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for f in &self.frames {
            debug_assert_eq!(f.positions.len(), n_coords);
            for x in &f.positions {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(origin, "truncated header"));
        }
        if &bytes[..4] != MSET_MAGIC {
            return Err(Error::format(origin, "bad magic, expected MSET"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version > MSET_VERSION {
            return Err(Error::format(
                origin,
                format!("format version {version} is newer than supported {MSET_VERSION}"),
            ));
        }
        let n_frames = u64_at(8) as usize;
        let n_particles = u32_at(16) as usize;
        let dim = u32_at(20) as usize;
        let save_interval = f64_at(24);
        let temperature = f64_at(32);
        let seed = u64_at(40);
        let n_coords = n_particles * dim;
        let expected = n_frames
            .checked_mul(n_coords)
            .and_then(|c| c.checked_mul(8))
            .and_then(|c| c.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::format(origin, "header sizes overflow"))?;
        if bytes.len() != expected {
            return Err(Error::format(
                origin,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut frames = Vec::with_capacity(n_frames);
        let mut off = HEADER_LEN;
        for _ in 0..n_frames {
            let mut pos = Vec::with_capacity(n_coords);
            for _ in 0..n_coords {
                pos.push(f64_at(off));
                off += 8;
            }
            frames.push(Conformation::new(pos));
        }
        Ok(FrameSet {
            n_particles,
            dim,
            save_interval,
            temperature,
            seed,
            frames,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FrameSet::from_bytes(&bytes, path)
    }

    /// One frame per row, columns `x0_0, x0_1, ..., x{n-1}_{dim-1}`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = (0..self.n_particles)
            .flat_map(|i| (0..self.dim).map(move |a| format!("p{i}_{}", ["x", "y", "z"][a])))
            .collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for f in &self.frames {
            let row: Vec<String> = f.positions.iter().map(|x| format!("{x}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    FrameSet::from_trajectory(traj).write(path)
}

pub fn read_trajectory(path: &Path, system: &SystemSpec) -> Result<Trajectory> {
    FrameSet::read(path)?.into_trajectory(system)
}

/// Write through a temporary sibling and rename, so a crashed run never
/// leaves a half-written artifact under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialization failed: {e}")))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FrameSet {
        FrameSet {
            n_particles: 2,
            dim: 2,
            save_interval: 0.5,
            temperature: 1.25,
            seed: 99,
            frames: vec![
                Conformation::new(vec![0.0, 1.0, 2.0, 3.0]),
                Conformation::new(vec![-1.5, 1e-300, f64::MAX, 7.0]),
            ],
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"MSET");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 0.5);
        assert_eq!(b.len(), 48 + 2 * 4 * 8);
        let back = FrameSet::from_bytes(&b, Path::new("mem")).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn rejects_future_versions_and_truncation() {
        let mut b = sample().to_bytes();
        b[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(FrameSet::from_bytes(&b, Path::new("mem")).is_err());
        let b = sample().to_bytes();
        assert!(FrameSet::from_bytes(&b[..b.len() - 1], Path::new("mem")).is_err());
        let mut b = sample().to_bytes();
        b[0] = b'X';
        assert!(FrameSet::from_bytes(&b, Path::new("mem")).is_err());
    }

    #[test]
    fn csv_has_one_row_per_frame() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "p0_x,p0_y,p1_x,p1_y");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mset");
        sample().write(&path).unwrap();
        assert_eq!(FrameSet::read(&path).unwrap(), sample());
    }
}
