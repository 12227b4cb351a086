//! Frame registration: rigid odometry transforms, voxelization and the accumulated
//! occupancy map.

use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::num::{cast, to_f64, Real};

/// Rigid transform taking sensor-frame coordinates of one frame into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
    frame_index: usize,
}

impl<T: Real> Pose<T> {
    /// Builds a pose, rejecting rotations that are not proper orthonormal matrices.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>, frame_index: usize) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
            frame_index,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity(frame_index: usize) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            frame_index,
        }
    }

    pub fn from_translation(translation: Vector3<T>, frame_index: usize) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
            frame_index,
        }
    }

    /// Rotation about +z by `yaw` radians followed by `translation`.
    pub fn from_yaw(yaw: T, translation: Vector3<T>, frame_index: usize) -> Self {
        let (s, c) = yaw.sin_cos();
        let z = T::zero();
        let o = T::one();
        Pose {
            rotation: Matrix3::new(c, -s, z, s, c, z, z, z, o),
            translation,
            frame_index,
        }
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn with_frame_index(mut self, frame_index: usize) -> Self {
        self.frame_index = frame_index;
        self
    }

    /// Largest entry of `|RᵀR − I|`.
    pub fn orthonormality_error(&self) -> T {
        orthonormality_error(&self.rotation)
    }

    pub fn validate(&self) -> Result<()> {
        let err = self.orthonormality_error();
        if !(err <= T::ortho_tol()) {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal: max |RᵀR − I| = {:e}",
                to_f64(err)
            )));
        }
        let det = determinant(&self.rotation);
        if !(det > T::zero()) {
            return Err(Error::Validation(format!(
                "rotation is a reflection: det = {}",
                to_f64(det)
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("translation is not finite".into()));
        }
        Ok(())
    }

    /// `R·p + t`.
    #[inline]
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// `Rᵀ·(p − t)`, mapping world coordinates back into this frame's sensor frame.
    #[inline]
    pub fn apply_inverse(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose {
            translation: -(rt * self.translation),
            rotation: rt,
            frame_index: self.frame_index,
        }
    }

    /// `self ∘ other`: applies `other` first. Keeps `self`'s frame index.
    pub fn compose(&self, other: &Pose<T>) -> Self {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            frame_index: self.frame_index,
        }
    }
}

pub fn orthonormality_error<T: Real>(r: &Matrix3<T>) -> T {
    let g = r.transpose() * r - Matrix3::identity();
    g.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

pub fn determinant<T: Real>(m: &Matrix3<T>) -> T {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

/// One sensor sweep. Coordinates are finite; intensities, when present, lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    points: Vec<Vector3<T>>,
    intensities: Option<Vec<T>>,
    frame_index: usize,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vector3<T>>, frame_index: usize) -> Result<Self> {
        Self::with_intensities(points, None, frame_index)
    }

    pub fn with_intensities(
        points: Vec<Vector3<T>>,
        intensities: Option<Vec<T>>,
        frame_index: usize,
    ) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(int) = &intensities {
            if int.len() != points.len() {
                return Err(Error::Validation(format!(
                    "{} intensities for {} points",
                    int.len(),
                    points.len()
                )));
            }
            if let Some(i) = int
                .iter()
                .position(|v| !(*v >= T::zero() && *v <= T::one()))
            {
                return Err(Error::Validation(format!("intensity {i} outside [0, 1]")));
            }
        }
        Ok(PointCloud {
            points,
            intensities,
            frame_index,
        })
    }

    pub fn empty(frame_index: usize) -> Self {
        PointCloud {
            points: Vec::new(),
            intensities: None,
            frame_index,
        }
    }

    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    pub fn intensities(&self) -> Option<&[T]> {
        self.intensities.as_deref()
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integer cell coordinates in the voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelKey {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        VoxelKey { ix, iy, iz }
    }

    /// The `(ix, iy)` column containing this voxel.
    pub const fn column(self) -> (i32, i32) {
        (self.ix, self.iy)
    }

    /// Cell containing `p` under half-open `[i·s, (i+1)·s)` binning.
    pub fn from_point<T: Real>(p: &Vector3<T>, voxel_size: T) -> Result<Self> {
        let idx = |v: T| -> Result<i32> {
            (v / voxel_size)
                .floor()
                .to_i32()
                .ok_or_else(|| Error::Parameter(format!("coordinate {v} outside grid range")))
        };
        Ok(VoxelKey {
            ix: idx(p.x)?,
            iy: idx(p.y)?,
            iz: idx(p.z)?,
        })
    }
}

pub type KeySet = HashSet<VoxelKey>;

fn check_voxel_size<T: Real>(voxel_size: T) -> Result<()> {
    if voxel_size > T::zero() && voxel_size.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "voxel size must be positive, got {voxel_size}"
        )))
    }
}

/// Registers a cloud into the world frame. Point order and intensities are preserved.
pub fn transform_cloud<T: Real>(pose: &Pose<T>, cloud: &PointCloud<T>) -> Result<PointCloud<T>> {
    pose.validate()?;
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| pose.apply(p)).collect(),
        intensities: cloud.intensities.clone(),
        frame_index: cloud.frame_index,
    })
}

/// Set of cells occupied by at least one point of `cloud`.
pub fn voxelize<T: Real>(cloud: &PointCloud<T>, voxel_size: T) -> Result<KeySet> {
    check_voxel_size(voxel_size)?;
    cloud
        .points
        .iter()
        .map(|p| VoxelKey::from_point(p, voxel_size))
        .collect()
}

/// Center of a cell: `(key + 0.5)·s` componentwise.
#[inline]
pub fn voxel_center<T: Real>(key: VoxelKey, voxel_size: T) -> Vector3<T> {
    let half = cast::<T>(0.5);
    let c = |i: i32| (cast::<T>(i as f64) + half) * voxel_size;
    Vector3::new(c(key.ix), c(key.iy), c(key.iz))
}

/// Union of all per-frame voxel sets, remembering the frame where each cell first appeared.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap<T: Real> {
    voxel_size: T,
    cells: HashMap<VoxelKey, usize>,
    last_frame: Option<usize>,
}

impl<T: Real> OccupancyMap<T> {
    pub fn new(voxel_size: T) -> Result<Self> {
        check_voxel_size(voxel_size)?;
        Ok(OccupancyMap {
            voxel_size,
            cells: HashMap::new(),
            last_frame: None,
        })
    }

    pub fn voxel_size(&self) -> T {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.cells.contains_key(key)
    }

    pub fn first_seen(&self, key: &VoxelKey) -> Option<usize> {
        self.cells.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.last_frame
    }

    /// Adds one frame's cells. Frames must arrive in non-decreasing index order; returns the
    /// number of cells that were new.
    pub fn integrate_frame<'a, I>(&mut self, keys: I, frame_index: usize) -> Result<usize>
    where
        I: IntoIterator<Item = &'a VoxelKey>,
    {
        if let Some(last) = self.last_frame {
            if frame_index < last {
                return Err(Error::Sequencing {
                    last,
                    got: frame_index,
                });
            }
        }
        self.last_frame = Some(frame_index);
        let before = self.cells.len();
        for k in keys {
            self.cells.entry(*k).or_insert(frame_index);
        }
        Ok(self.cells.len() - before)
    }

    /// Merges an independently built partial map. The result equals sequential integration
    /// of both frame streams.
    pub fn merge(&mut self, other: &OccupancyMap<T>) -> Result<()> {
        if self.voxel_size != other.voxel_size {
            return Err(Error::Config(format!(
                "cannot merge maps with voxel sizes {} and {}",
                self.voxel_size, other.voxel_size
            )));
        }
        for (k, f) in &other.cells {
            self.cells
                .entry(*k)
                .and_modify(|e| *e = (*e).min(*f))
                .or_insert(*f);
        }
        self.last_frame = match (self.last_frame, other.last_frame) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        Ok(())
    }
}
