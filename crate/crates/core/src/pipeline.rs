//! Frame-by-frame map construction: registration, occupancy, then label fusion.

use crate::error::{Error, Result};
use crate::fusion::{finalize_labels, fuse_frame, CameraModel, FusionParams, SegmentationFrame, SemanticVoxelMap};
use crate::geometry::{transform_cloud, voxelize, OccupancyMap, PointCloud, Pose};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSummary {
    pub frame_index: usize,
    pub points: usize,
    pub voxels: usize,
    pub new_voxels: usize,
    pub fused: usize,
}

/// Accumulates frames into an unrefined semantic map.
#[derive(Debug, Clone)]
pub struct MapBuilder<T: Real> {
    occupancy: OccupancyMap<T>,
    map: SemanticVoxelMap<T>,
    camera: CameraModel<T>,
    params: FusionParams<T>,
    frames: usize,
}

impl<T: Real> MapBuilder<T> {
    pub fn new(voxel_size: T, camera: CameraModel<T>, params: FusionParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(MapBuilder {
            occupancy: OccupancyMap::new(voxel_size)?,
            map: SemanticVoxelMap::new(voxel_size)?,
            camera,
            params,
            frames: 0,
        })
    }

    /// Registers the cloud with its pose and fuses the image labels into the cells the cloud
    /// occupies. All three inputs must carry the same frame index.
    pub fn add_frame(
        &mut self,
        pose: &Pose<T>,
        cloud: &PointCloud<T>,
        seg: &SegmentationFrame<T>,
    ) -> Result<FrameSummary> {
        let f = pose.frame_index();
        if cloud.frame_index() != f || seg.frame_index() != f {
            return Err(Error::Validation(format!(
                "frame index mismatch: pose {f}, cloud {}, segmentation {}",
                cloud.frame_index(),
                seg.frame_index()
            )));
        }
        if seg.width() != self.camera.width() || seg.height() != self.camera.height() {
            return Err(Error::Validation(format!(
                "frame {f}: segmentation is {}x{} but the camera is {}x{}",
                seg.width(),
                seg.height(),
                self.camera.width(),
                self.camera.height()
            )));
        }
        let world = transform_cloud(pose, cloud)?;
        let keys = voxelize(&world, self.map.voxel_size())?;
        let new_voxels = self.occupancy.integrate_frame(keys.iter(), f)?;
        for k in &keys {
            self.map.insert_unobserved(*k);
        }
        let fused = fuse_frame(&mut self.map, pose, &self.camera, seg, &keys, &self.params)?;
        self.frames += 1;
        Ok(FrameSummary {
            frame_index: f,
            points: cloud.len(),
            voxels: keys.len(),
            new_voxels,
            fused,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn occupancy(&self) -> &OccupancyMap<T> {
        &self.occupancy
    }

    pub fn map(&self) -> &SemanticVoxelMap<T> {
        &self.map
    }

    /// Final labels assigned; the map is ready for refinement or evaluation.
    pub fn finish(mut self) -> SemanticVoxelMap<T> {
        finalize_labels(&mut self.map);
        self.map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Label;
    use nalgebra::{Matrix3x4, Vector3};

    fn camera() -> CameraModel<f64> {
        // looks down +x, image plane spanned by -y and -z
        CameraModel::new(
            Matrix3x4::new(0.0, -10.0, 0.0, 5.0, 0.0, 0.0, -10.0, 5.0, 1.0, 0.0, 0.0, 0.0),
            10,
            10,
        )
        .unwrap()
    }

    fn vehicle_frame(i: usize) -> SegmentationFrame<f64> {
        let mut s = vec![0.0; 10 * 10 * 5];
        for px in 0..100 {
            s[px * 5 + 2] = 1.0;
        }
        SegmentationFrame::new(10, 10, s, i).unwrap()
    }

    #[test]
    fn builds_and_labels() {
        let mut b = MapBuilder::new(0.2, camera(), FusionParams::default()).unwrap();
        let cloud = PointCloud::new(vec![Vector3::new(2.05, 0.05, 0.05), Vector3::new(2.1, 0.1, 0.1)], 0).unwrap();
        let s = b.add_frame(&Pose::identity(0), &cloud, &vehicle_frame(0)).unwrap();
        assert_eq!((s.points, s.voxels, s.new_voxels, s.fused), (2, 1, 1, 1));
        let cloud = PointCloud::new(vec![Vector3::new(2.05, 0.05, 0.05), Vector3::new(-3.0, 0.0, 0.0)], 1).unwrap();
        let s = b.add_frame(&Pose::identity(1), &cloud, &vehicle_frame(1)).unwrap();
        // the point behind the camera is mapped but never observed
        assert_eq!((s.voxels, s.new_voxels, s.fused), (2, 1, 1));
        let map = b.finish();
        assert_eq!(map.len(), 2);
        assert_eq!(map.count_label(Label::Vehicle), 1);
        assert_eq!(map.count_label(Label::Unknown), 1);
    }

    #[test]
    fn rejects_misaligned_frames() {
        let mut b = MapBuilder::new(0.2, camera(), FusionParams::default()).unwrap();
        let cloud = PointCloud::empty(1);
        assert!(b.add_frame(&Pose::identity(0), &cloud, &vehicle_frame(0)).is_err());
        let small = SegmentationFrame::uniform(4, 4, 0);
        assert!(b.add_frame(&Pose::identity(0), &PointCloud::empty(0), &small).is_err());
        b.add_frame(&Pose::identity(3), &PointCloud::empty(3), &vehicle_frame(3)).unwrap();
        assert!(matches!(
            b.add_frame(&Pose::identity(2), &PointCloud::empty(2), &vehicle_frame(2)),
            Err(Error::Sequencing { .. })
        ));
    }
}
