use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::num::{cast, to_f64, Real};

const RECORD: usize = 16;

/// A decoded scan together with the number of records dropped for non-finite or
/// out-of-range values.
#[derive(Debug, Clone, PartialEq)]
pub struct VelodyneScan<T: Real> {
    pub cloud: PointCloud<T>,
    pub rejected: usize,
}

/// Decodes little-endian `(x, y, z, reflectance)` f32 quadruples.
pub fn decode_velodyne<T: Real>(bytes: &[u8], frame_index: usize) -> Result<VelodyneScan<T>> {
    if bytes.len() % RECORD != 0 {
        let offset = (bytes.len() - bytes.len() % RECORD) as u64;
        return Err(Error::format_at_byte(
            offset,
            format!(
                "truncated record: {} bytes is not a multiple of {RECORD}",
                bytes.len()
            ),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD);
    let mut intensities = Vec::with_capacity(bytes.len() / RECORD);
    let mut rejected = 0;
    for rec in bytes.chunks_exact(RECORD) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) || !(0.0..=1.0).contains(&r) {
            rejected += 1;
            continue;
        }
        points.push(Vector3::new(cast(x as f64), cast(y as f64), cast(z as f64)));
        intensities.push(cast(r as f64));
    }
    Ok(VelodyneScan {
        cloud: PointCloud::with_intensities(points, Some(intensities), frame_index)?,
        rejected,
    })
}

pub fn read_velodyne_bin<T: Real>(path: &Path, frame_index: usize) -> Result<VelodyneScan<T>> {
    let bytes = super::read_bytes(path)?;
    decode_velodyne(&bytes, frame_index).map_err(|e| match e {
        Error::Format { location, message } => Error::Format {
            location,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Encodes a cloud as f32 records; a missing intensity channel is written as zero.
pub fn encode_velodyne<T: Real>(cloud: &PointCloud<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for (i, p) in cloud.points().iter().enumerate() {
        let r = cloud.intensities().map_or(0.0, |v| to_f64(v[i]));
        for v in [to_f64(p.x), to_f64(p.y), to_f64(p.z), r] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_velodyne_bin<T: Real>(cloud: &PointCloud<T>, path: &Path) -> Result<()> {
    super::write_file(path, encode_velodyne(cloud))
}
