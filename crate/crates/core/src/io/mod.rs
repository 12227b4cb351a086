//! File formats: KITTI velodyne scans and odometry poses, calibration, score maps, the text
//! map format and colored PLY export.

mod calib;
mod mapfile;
mod ply;
mod poses;
mod score;
mod velodyne;

pub use calib::{read_calibration, write_calibration, CalibrationSet};
pub use mapfile::{deserialize_map, parse_map, render_map, serialize_map};
pub use ply::{label_color, render_ply, write_ply};
pub use poses::{nearest_rotation, parse_poses, read_pose_file, render_poses, write_pose_file};
pub use score::{decode_score_map, encode_score_map, read_score_map, write_score_map, SCORE_MAGIC};
pub use velodyne::{
    decode_velodyne, encode_velodyne, read_velodyne_bin, write_velodyne_bin, VelodyneScan,
};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Parses whitespace separated reals, failing with the line number.
pub(crate) fn parse_reals(tokens: &[&str], line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format_at_line(line, format!("`{t}` is not a number")))
        })
        .collect()
}
