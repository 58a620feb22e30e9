//! TUM trajectory text format: one `timestamp tx ty tz qx qy qz qw` line per
//! pose, `#` lines ignored. Quaternions are stored (x,y,z,w) on disk and
//! normalized on load.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{quat_to_rot, rot_to_quat, GeometryError, Pose, Trajectory};

#[derive(Debug, Error)]
pub enum TumError {
    #[error("line {line}: expected 8 whitespace-separated numbers")]
    Malformed { line: usize },
    #[error("line {line}: quaternion has near-zero norm")]
    BadQuaternion { line: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> TumError {
    TumError::Io { path: path.display().to_string(), source }
}

pub fn load_tum_trajectory(path: &Path) -> Result<Trajectory, TumError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut poses = Vec::new();
    let mut timestamps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| TumError::Malformed { line })?;
        if fields.len() != 8 {
            return Err(TumError::Malformed { line });
        }
        let (ts, t, q) = (fields[0], &fields[1..4], &fields[4..8]);
        // Disk order x,y,z,w; internal order w,x,y,z.
        let (rotation, _norm) = quat_to_rot([q[3], q[0], q[1], q[2]])
            .map_err(|_| TumError::BadQuaternion { line })?;
        poses.push(Pose::new(rotation, [t[0], t[1], t[2]]));
        timestamps.push(ts);
    }
    Ok(Trajectory::new(poses, timestamps)?)
}

pub fn write_tum_trajectory(traj: &Trajectory, path: &Path) -> Result<(), TumError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(out, "# timestamp tx ty tz qx qy qz qw")?;
        for (pose, ts) in traj.poses().iter().zip(traj.timestamps()) {
            let [w, x, y, z] = rot_to_quat(&pose.rotation);
            let t = pose.translation;
            writeln!(
                out,
                "{ts:.6} {:.12} {:.12} {:.12} {x:.12} {y:.12} {z:.12} {w:.12}",
                t[0], t[1], t[2]
            )?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| io_err(path, e))
}
