//! Scan and pose file readers and writers, and session manifests.
//!
//! Scans are raw little-endian `f32` quadruples `x y z intensity`. Pose files
//! hold one row-major 3×4 `[R | t]` per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{orthonormality_error, project_to_rotation, Point3, Se3, ORTHONORMAL_TOL};
use crate::local_map::PointCloud;
use crate::synth::SyntheticSession;

/// Rotations farther than this from orthonormal are rejected outright.
pub const MAX_REPAIRABLE_ERROR: f64 = 1e-3;

#[derive(Debug, Clone, Default)]
pub struct ScanRead {
    pub cloud: PointCloud,
    /// Points dropped for non-finite coordinates.
    pub dropped: usize,
}

pub fn parse_scan(bytes: &[u8], path: &Path) -> Result<ScanRead> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::ScanFormat {
            path: path.to_path_buf(),
            msg: format!("{} bytes is not a whole number of 16-byte points", bytes.len()),
        });
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut dropped = 0;
    for chunk in bytes.chunks_exact(16) {
        let f = |k: usize| f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().expect("4 bytes"));
        let (x, y, z) = (f(0), f(1), f(2));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            dropped += 1;
            continue;
        }
        points.push(Point3::new(x as f64, y as f64, z as f64));
        intensity.push(f(3));
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} non-finite points", path.display());
    }
    Ok(ScanRead {
        cloud: PointCloud {
            frame: "sensor".into(),
            points,
            intensity: Some(intensity),
        },
        dropped,
    })
}

pub fn read_scan(path: &Path) -> Result<ScanRead> {
    parse_scan(&fs::read(path)?, path)
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points.iter().enumerate() {
        let intensity = cloud.intensity.as_ref().and_then(|v| v.get(i).copied()).unwrap_or(0.0);
        for v in [p.x as f32, p.y as f32, p.z as f32, intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses one pose line; near-orthonormal rotations are repaired.
pub fn parse_pose_line(line: &str, number: usize) -> Result<Se3> {
    let err = |msg: String| Error::PoseLine { line: number, msg };
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        return Err(err(format!("expected 12 values, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(err("non-finite value".into()));
    }
    let r = Matrix3::new(
        values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
        values[10],
    );
    let t = Vector3::new(values[3], values[7], values[11]);
    let e = orthonormality_error(&r);
    let r = if e <= ORTHONORMAL_TOL {
        r
    } else if e <= MAX_REPAIRABLE_ERROR {
        project_to_rotation(&r)
    } else {
        return Err(err(format!("rotation not orthonormal (error {e:.3e})")));
    };
    Se3::new(r, t).map_err(|e| err(e.to_string()))
}

pub fn read_poses(path: &Path) -> Result<Vec<Se3>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_pose_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn format_pose(p: &Se3) -> String {
    p.to_row_major_3x4()
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_poses(path: &Path, poses: &[Se3]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in poses {
        writeln!(w, "{}", format_pose(p))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub scan_directory: PathBuf,
    pub pose_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_pose_file: Option<PathBuf>,
}

impl SessionManifest {
    /// Reads a manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: SessionManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.scan_directory);
        resolve(&mut m.pose_file);
        if let Some(g) = m.ground_truth_pose_file.as_mut() {
            resolve(g);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Scan files in lexicographic order.
    pub fn scan_files(&self) -> Result<Vec<PathBuf>> {
        if !self.scan_directory.is_dir() {
            return Err(Error::Manifest(format!(
                "scan directory {} does not exist",
                self.scan_directory.display()
            )));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&self.scan_directory)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        files.sort();
        Ok(files)
    }
}

/// Writes a simulated session as scans, pose files and a manifest; the
/// exact poses serve as both odometry and ground truth.
pub fn write_session(dir: &Path, session_id: &str, session: &SyntheticSession) -> Result<SessionManifest> {
    let scans = dir.join("scans");
    fs::create_dir_all(&scans)?;
    for (i, cloud) in session.scans.iter().enumerate() {
        write_scan(&scans.join(format!("{i:06}.bin")), cloud)?;
    }
    write_poses(&dir.join("poses.txt"), &session.poses)?;
    write_poses(&dir.join("ground_truth.txt"), &session.poses)?;
    let manifest = SessionManifest {
        session_id: session_id.to_string(),
        scan_directory: "scans".into(),
        pose_file: "poses.txt".into(),
        ground_truth_pose_file: Some("ground_truth.txt".into()),
    };
    manifest.save(&dir.join("manifest.json"))?;
    SessionManifest::load(&dir.join("manifest.json"))
}
