//! Lidar-to-image calibration.
//!
//! The pipeline consumes one composed 3x4 matrix. A file may give it directly:
//!
//! ```text
//! P_L2C: p00 p01 p02 p03 p10 ... p23
//! image_size: 1242 375
//! ```
//!
//! or as the KITTI raw triplet `P2` (3x4), `R0_rect` (3x3) and `Tr_velo_to_cam` (3x4), in which
//! case `P_L2C = P2 · [R0_rect 0; 0 1] · [Tr_velo_to_cam; 0 0 0 1]`. `image_size` is always
//! required because KITTI calibration files do not carry it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Matrix4};

use crate::error::{Error, Result};
use crate::fusion::CameraModel;
use crate::num::{cast, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub lidar_to_camera: Matrix3x4<f64>,
    pub width: usize,
    pub height: usize,
}

impl CalibrationSet {
    pub fn camera<T: Real>(&self) -> Result<CameraModel<T>> {
        CameraModel::new(self.lidar_to_camera.map(cast::<T>), self.width, self.height)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, (usize, Vec<f64>)> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, rest)) = line.split_once(':') else {
                return Err(Error::format_at_line(n, "expected `key: values`"));
            };
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            // KITTI files carry a non-numeric calib_time entry
            if key.trim() == "calib_time" {
                continue;
            }
            entries.insert(key.trim().to_string(), (n, super::parse_reals(&tokens, n)?));
        }
        let take = |key: &str, len: usize| -> Result<Option<Vec<f64>>> {
            match entries.get(key) {
                None => Ok(None),
                Some((n, v)) if v.len() == len => {
                    let _ = n;
                    Ok(Some(v.clone()))
                }
                Some((n, v)) => Err(Error::format_at_line(
                    *n,
                    format!("{key} needs {len} values, found {}", v.len()),
                )),
            }
        };
        let size = take("image_size", 2)?
            .ok_or_else(|| Error::Config("calibration lacks `image_size: W H`".into()))?;
        let lidar_to_camera = if let Some(p) = take("P_L2C", 12)? {
            Matrix3x4::from_row_slice(&p)
        } else {
            let p2 = take("P2", 12)?;
            let r0 = take("R0_rect", 9)?;
            let tr = take("Tr_velo_to_cam", 12)?;
            match (p2, r0, tr) {
                (Some(p2), Some(r0), Some(tr)) => {
                    let mut rect = Matrix4::identity();
                    rect.fixed_view_mut::<3, 3>(0, 0)
                        .copy_from(&Matrix3::from_row_slice(&r0));
                    let mut velo = Matrix4::identity();
                    velo.fixed_view_mut::<3, 4>(0, 0)
                        .copy_from(&Matrix3x4::from_row_slice(&tr));
                    Matrix3x4::from_row_slice(&p2) * rect * velo
                }
                _ => {
                    return Err(Error::Config(
                        "calibration needs P_L2C or all of P2, R0_rect, Tr_velo_to_cam".into(),
                    ))
                }
            }
        };
        let dim = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("bad image dimension {v}")))
            }
        };
        let calib = CalibrationSet {
            lidar_to_camera,
            width: dim(size[0])?,
            height: dim(size[1])?,
        };
        calib.camera::<f64>()?;
        Ok(calib)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("P_L2C:");
        for r in 0..3 {
            for c in 0..4 {
                let _ = write!(out, " {:e}", self.lidar_to_camera[(r, c)]);
            }
        }
        let _ = writeln!(out, "\nimage_size: {} {}", self.width, self.height);
        out
    }
}

pub fn read_calibration(path: &Path) -> Result<CalibrationSet> {
    CalibrationSet::parse(&super::read_text(path)?)
}

pub fn write_calibration(calib: &CalibrationSet, path: &Path) -> Result<()> {
    super::write_file(path, calib.render())
}
