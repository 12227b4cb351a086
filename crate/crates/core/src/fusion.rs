//! Camera association and recursive Bayesian label fusion.
//!
//! Each voxel center is mapped from the world into the current sensor frame, projected
//! through the lidar-to-image matrix, and the per-pixel class scores at the hit pixel are
//! multiplied into the voxel's running label distribution.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{voxel_center, KeySet, Pose, VoxelKey};
use crate::label::{Label, NUM_LABELS};
use crate::num::{cast, to_f64, Real};

/// Normalization constants below this are treated as contradictory evidence.
const MIN_EVIDENCE: f64 = 1e-30;

/// Probability mass over the five semantic labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelDistribution<T: Real> {
    p: [T; NUM_LABELS],
}

impl<T: Real> Default for LabelDistribution<T> {
    fn default() -> Self {
        Self::uniform()
    }
}

impl<T: Real> LabelDistribution<T> {
    pub fn uniform() -> Self {
        LabelDistribution {
            p: [T::one() / cast(NUM_LABELS as f64); NUM_LABELS],
        }
    }

    pub fn one_hot(label: Label) -> Self {
        let mut p = [T::zero(); NUM_LABELS];
        if let Some(i) = label.index() {
            p[i] = T::one();
            LabelDistribution { p }
        } else {
            Self::uniform()
        }
    }

    /// Normalizes non-negative scores. An all-zero vector carries no evidence and becomes
    /// uniform.
    pub fn from_scores(scores: [T; NUM_LABELS]) -> Result<Self> {
        if let Some(i) = scores.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "score {i} is negative or not finite: {}",
                scores[i]
            )));
        }
        let sum: T = scores.iter().copied().sum();
        if sum == T::zero() {
            return Ok(Self::uniform());
        }
        Ok(LabelDistribution {
            p: scores.map(|v| v / sum),
        })
    }

    /// Wraps probabilities that are already normalized. Used by deserialization.
    pub fn from_probabilities(p: [T; NUM_LABELS]) -> Result<Self> {
        let sum: T = p.iter().copied().sum();
        if p.iter().any(|v| !(*v >= T::zero())) || (sum - T::one()).abs() > T::sum_tol() * cast(10.0)
        {
            return Err(Error::Validation(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(LabelDistribution { p })
    }

    pub fn probabilities(&self) -> &[T; NUM_LABELS] {
        &self.p
    }

    pub fn get(&self, label: Label) -> T {
        label.index().map_or(T::zero(), |i| self.p[i])
    }

    /// Most probable label; exact ties resolve to the earlier label in
    /// Road < Sidewalk < Vehicle < Building < Vegetation.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for i in 1..NUM_LABELS {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        Label::SEMANTIC[best]
    }

    /// Raises every component to at least `floor` while keeping the total at one. Components
    /// pinned at the floor are excluded and the rest rescaled until no free component falls
    /// below it.
    pub fn apply_floor(&mut self, floor: T) {
        if floor <= T::zero() {
            return;
        }
        let mut pinned = [false; NUM_LABELS];
        loop {
            let n_pinned = pinned.iter().filter(|b| **b).count();
            let free_mass: T = (0..NUM_LABELS)
                .filter(|i| !pinned[*i])
                .map(|i| self.p[i])
                .sum();
            let budget = T::one() - floor * cast(n_pinned as f64);
            let scale = budget / free_mass;
            let mut changed = false;
            for i in 0..NUM_LABELS {
                if !pinned[i] && self.p[i] * scale < floor {
                    pinned[i] = true;
                    changed = true;
                }
            }
            if !changed {
                for i in 0..NUM_LABELS {
                    self.p[i] = if pinned[i] { floor } else { self.p[i] * scale };
                }
                return;
            }
        }
    }
}

/// One recursive Bayes step: elementwise product with the observation, normalized, then held
/// above `floor` (pass zero to disable the floor).
pub fn bayes_update<T: Real>(
    prior: &LabelDistribution<T>,
    observed: &LabelDistribution<T>,
    floor: T,
) -> Result<LabelDistribution<T>> {
    let mut p = [T::zero(); NUM_LABELS];
    for (i, v) in p.iter_mut().enumerate() {
        *v = prior.p[i] * observed.p[i];
    }
    let z: T = p.iter().copied().sum();
    if !(z >= cast(MIN_EVIDENCE)) {
        return Err(Error::DegenerateEvidence(to_f64(z)));
    }
    let mut post = LabelDistribution { p: p.map(|v| v / z) };
    post.apply_floor(floor);
    Ok(post)
}

/// Per-pixel class scores for one camera image, stored pixel-major with the five channels
/// interleaved. Every pixel sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationFrame<T: Real> {
    width: usize,
    height: usize,
    scores: Vec<T>,
    frame_index: usize,
}

impl<T: Real> SegmentationFrame<T> {
    /// Normalizes every pixel's scores. Negative scores are rejected.
    pub fn new(width: usize, height: usize, mut scores: Vec<T>, frame_index: usize) -> Result<Self> {
        if scores.len() != width * height * NUM_LABELS {
            return Err(Error::Validation(format!(
                "{} scores for a {width}x{height}x{NUM_LABELS} frame",
                scores.len()
            )));
        }
        for (px, chunk) in scores.chunks_exact_mut(NUM_LABELS).enumerate() {
            let arr: [T; NUM_LABELS] = chunk.try_into().expect("chunk of NUM_LABELS");
            let d = LabelDistribution::from_scores(arr).map_err(|_| {
                Error::Validation(format!(
                    "pixel ({}, {}) has a negative score",
                    px % width.max(1),
                    px / width.max(1)
                ))
            })?;
            chunk.copy_from_slice(&d.p);
        }
        Ok(SegmentationFrame {
            width,
            height,
            scores,
            frame_index,
        })
    }

    /// A frame with no evidence anywhere.
    pub fn uniform(width: usize, height: usize, frame_index: usize) -> Self {
        let u = LabelDistribution::<T>::uniform();
        SegmentationFrame {
            width,
            height,
            scores: (0..width * height).flat_map(|_| u.p).collect(),
            frame_index,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    /// Scores at column `u`, row `v`.
    pub fn pixel(&self, u: usize, v: usize) -> Option<LabelDistribution<T>> {
        if u >= self.width || v >= self.height {
            return None;
        }
        let base = (v * self.width + u) * NUM_LABELS;
        let mut p = [T::zero(); NUM_LABELS];
        p.copy_from_slice(&self.scores[base..base + NUM_LABELS]);
        Some(LabelDistribution { p })
    }
}

/// Pinhole projection from lidar-frame points to image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel<T: Real> {
    projection: Matrix3x4<T>,
    width: usize,
    height: usize,
    min_depth: T,
}

/// A point's image position and its projective depth `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    pub u: T,
    pub v: T,
    pub depth: T,
}

impl<T: Real> CameraModel<T> {
    pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;

    pub fn new(projection: Matrix3x4<T>, width: usize, height: usize) -> Result<Self> {
        Self::with_min_depth(projection, width, height, cast(Self::DEFAULT_MIN_DEPTH))
    }

    pub fn with_min_depth(
        projection: Matrix3x4<T>,
        width: usize,
        height: usize,
        min_depth: T,
    ) -> Result<Self> {
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("projection matrix is not finite".into()));
        }
        if !has_full_row_rank(&projection) {
            return Err(Error::Validation("projection matrix is rank deficient".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!("image size {width}x{height}")));
        }
        Ok(CameraModel {
            projection,
            width,
            height,
            min_depth,
        })
    }

    /// `K·[R | t]` from intrinsics and a lidar-to-camera extrinsic.
    pub fn from_parts(
        intrinsics: &Matrix3<T>,
        rotation: &Matrix3<T>,
        translation: &Vector3<T>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let rt = Matrix3x4::from_columns(&[
            rotation.column(0).into(),
            rotation.column(1).into(),
            rotation.column(2).into(),
            *translation,
        ]);
        Self::new(intrinsics * rt, width, height)
    }

    pub fn projection(&self) -> &Matrix3x4<T> {
        &self.projection
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn min_depth(&self) -> T {
        self.min_depth
    }

    /// Continuous pixel coordinates, or `None` when behind the camera or outside the image.
    pub fn project(&self, point: &Vector3<T>) -> Option<Projection<T>> {
        let h = self.projection * Vector4::new(point.x, point.y, point.z, T::one());
        let w = h.z;
        if !(w > self.min_depth) {
            return None;
        }
        let u = h.x / w;
        let v = h.y / w;
        let inside = u >= T::zero()
            && v >= T::zero()
            && u < cast(self.width as f64)
            && v < cast(self.height as f64);
        inside.then_some(Projection { u, v, depth: w })
    }

    /// Integer pixel containing the projection of `point`.
    pub fn pixel_of(&self, point: &Vector3<T>) -> Option<(usize, usize, T)> {
        let p = self.project(point)?;
        let u = p.u.floor().to_usize()?;
        let v = p.v.floor().to_usize()?;
        (u < self.width && v < self.height).then_some((u, v, p.depth))
    }
}

fn has_full_row_rank<T: Real>(m: &Matrix3x4<T>) -> bool {
    let scale = m.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    if scale == T::zero() {
        return false;
    }
    let tol = scale * scale * scale * cast(1e-12);
    (0..4).any(|skip| {
        let cols: Vec<usize> = (0..4).filter(|c| *c != skip).collect();
        let minor = Matrix3::from_fn(|r, c| m[(r, cols[c])]);
        crate::geometry::determinant(&minor).abs() > tol
    })
}

/// Pixel position of a lidar-frame point, `None` if behind the camera or off-image.
pub fn project_point<T: Real>(camera: &CameraModel<T>, point: &Vector3<T>) -> Option<[T; 2]> {
    camera.project(point).map(|p| [p.u, p.v])
}

/// Fusion state for one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticCell<T: Real> {
    pub distribution: LabelDistribution<T>,
    pub final_label: Label,
    pub observation_count: u32,
}

impl<T: Real> Default for SemanticCell<T> {
    fn default() -> Self {
        SemanticCell {
            distribution: LabelDistribution::uniform(),
            final_label: Label::Unknown,
            observation_count: 0,
        }
    }
}

impl<T: Real> SemanticCell<T> {
    /// A cell with known label and one-hot distribution (ground truth, fixtures).
    pub fn labeled(label: Label) -> Self {
        SemanticCell {
            distribution: LabelDistribution::one_hot(label),
            final_label: label,
            observation_count: u32::from(label != Label::Unknown),
        }
    }
}

/// Sparse voxel map carrying a label distribution per occupied cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVoxelMap<T: Real> {
    voxel_size: T,
    cells: HashMap<VoxelKey, SemanticCell<T>>,
}

impl<T: Real> SemanticVoxelMap<T> {
    pub fn new(voxel_size: T) -> Result<Self> {
        if !(voxel_size > T::zero() && voxel_size.is_finite()) {
            return Err(Error::Parameter(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        Ok(SemanticVoxelMap {
            voxel_size,
            cells: HashMap::new(),
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

    pub fn get(&self, key: &VoxelKey) -> Option<&SemanticCell<T>> {
        self.cells.get(key)
    }

    pub fn get_mut(&mut self, key: &VoxelKey) -> Option<&mut SemanticCell<T>> {
        self.cells.get_mut(key)
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.cells.contains_key(key)
    }

    /// Adds an unobserved cell with a uniform prior; existing cells are left as they are.
    pub fn insert_unobserved(&mut self, key: VoxelKey) -> bool {
        let mut new = false;
        self.cells.entry(key).or_insert_with(|| {
            new = true;
            SemanticCell::default()
        });
        new
    }

    pub fn insert(&mut self, key: VoxelKey, cell: SemanticCell<T>) -> Option<SemanticCell<T>> {
        self.cells.insert(key, cell)
    }

    pub fn remove(&mut self, key: &VoxelKey) -> Option<SemanticCell<T>> {
        self.cells.remove(key)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&VoxelKey, &SemanticCell<T>) -> bool) {
        self.cells.retain(|k, c| keep(k, c));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &SemanticCell<T>)> {
        self.cells.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&VoxelKey, &mut SemanticCell<T>)> {
        self.cells.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }

    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<VoxelKey> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Keys whose final label equals `label`.
    pub fn keys_with_label(&self, label: Label) -> Vec<VoxelKey> {
        let mut keys: Vec<VoxelKey> = self
            .cells
            .iter()
            .filter(|(_, c)| c.final_label == label)
            .map(|(k, _)| *k)
            .collect();
        keys.sort_unstable();
        keys
    }

    /// Number of cells per final label, indexed like [`Label::ALL`].
    pub fn label_counts(&self) -> [usize; NUM_LABELS + 1] {
        let mut counts = [0; NUM_LABELS + 1];
        for cell in self.cells.values() {
            counts[cell.final_label.index().unwrap_or(NUM_LABELS)] += 1;
        }
        counts
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.label_counts()[label.index().unwrap_or(NUM_LABELS)]
    }
}

/// Knobs for the association step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams<T> {
    /// Lower bound kept on every label probability after an update; zero disables it.
    pub prob_floor: T,
    /// Only update voxels that are the nearest return at their pixel in this frame.
    pub depth_buffer: bool,
    /// Depth slack for the visibility test, in meters.
    pub depth_tolerance: T,
}

impl<T: Real> Default for FusionParams<T> {
    fn default() -> Self {
        FusionParams {
            prob_floor: cast(1e-3),
            depth_buffer: false,
            depth_tolerance: cast(0.3),
        }
    }
}

impl<T: Real> FusionParams<T> {
    pub fn validate(&self) -> Result<()> {
        let max = T::one() / cast(NUM_LABELS as f64);
        if !(self.prob_floor >= T::zero() && self.prob_floor < max) {
            return Err(Error::Parameter(format!(
                "probability floor must lie in [0, {max}), got {}",
                self.prob_floor
            )));
        }
        if !(self.depth_tolerance >= T::zero()) {
            return Err(Error::Parameter("depth tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where a voxel lands in the current frame's image.
fn locate<T: Real>(
    key: VoxelKey,
    voxel_size: T,
    sensor_pose: &Pose<T>,
    camera: &CameraModel<T>,
) -> Option<(usize, usize, T)> {
    let world = voxel_center(key, voxel_size);
    camera.pixel_of(&sensor_pose.apply_inverse(&world))
}

fn observed_cell<T: Real>(
    cell: &SemanticCell<T>,
    seg: &SegmentationFrame<T>,
    u: usize,
    v: usize,
    floor: T,
) -> Result<Option<SemanticCell<T>>> {
    let Some(obs) = seg.pixel(u, v) else {
        return Ok(None);
    };
    let distribution = bayes_update(&cell.distribution, &obs, floor)?;
    Ok(Some(SemanticCell {
        distribution,
        final_label: cell.final_label,
        observation_count: cell.observation_count + 1,
    }))
}

/// Fuses the label seen at one voxel's pixel into its distribution. Returns whether the voxel
/// was visible. `sensor_pose` is the pose of the frame the image belongs to.
pub fn observe_voxel<T: Real>(
    map: &mut SemanticVoxelMap<T>,
    key: VoxelKey,
    sensor_pose: &Pose<T>,
    camera: &CameraModel<T>,
    seg: &SegmentationFrame<T>,
    params: &FusionParams<T>,
) -> Result<bool> {
    let voxel_size = map.voxel_size;
    let cell = map
        .cells
        .get_mut(&key)
        .ok_or_else(|| Error::Validation(format!("voxel {key:?} is not in the map")))?;
    let Some((u, v, _)) = locate(key, voxel_size, sensor_pose, camera) else {
        return Ok(false);
    };
    match observed_cell(cell, seg, u, v, params.prob_floor)? {
        Some(updated) => {
            *cell = updated;
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Applies [`observe_voxel`] to every candidate key (normally the cells integrated from this
/// frame's cloud). Candidates are independent cells, so the per-key work runs in parallel on
/// the current rayon pool; results do not depend on the worker count.
pub fn fuse_frame<T: Real>(
    map: &mut SemanticVoxelMap<T>,
    sensor_pose: &Pose<T>,
    camera: &CameraModel<T>,
    seg: &SegmentationFrame<T>,
    candidates: &KeySet,
    params: &FusionParams<T>,
) -> Result<usize> {
    params.validate()?;
    let mut keys: Vec<VoxelKey> = candidates.iter().copied().collect();
    keys.sort_unstable();
    if let Some(missing) = keys.iter().find(|k| !map.cells.contains_key(k)) {
        return Err(Error::Validation(format!(
            "candidate voxel {missing:?} is not in the map"
        )));
    }
    let voxel_size = map.voxel_size;
    let located: Vec<(VoxelKey, Option<(usize, usize, T)>)> = keys
        .par_iter()
        .map(|k| (*k, locate(*k, voxel_size, sensor_pose, camera)))
        .collect();

    let nearest = params.depth_buffer.then(|| {
        let mut zbuf = vec![T::infinity(); camera.width() * camera.height()];
        for (_, loc) in &located {
            if let Some((u, v, w)) = loc {
                let slot = &mut zbuf[v * camera.width() + u];
                *slot = slot.min(*w);
            }
        }
        zbuf
    });

    let cells = &map.cells;
    let updates: Vec<(VoxelKey, SemanticCell<T>)> = located
        .par_iter()
        .filter_map(|(k, loc)| {
            let (u, v, w) = (*loc)?;
            if let Some(zbuf) = &nearest {
                if w > zbuf[v * camera.width() + u] + params.depth_tolerance {
                    return None;
                }
            }
            let cell = &cells[k];
            observed_cell(cell, seg, u, v, params.prob_floor)
                .transpose()
                .map(|r| r.map(|c| (*k, c)))
        })
        .collect::<Result<_>>()?;

    let n = updates.len();
    for (k, c) in updates {
        map.cells.insert(k, c);
    }
    Ok(n)
}

/// Sets every cell's final label to the argmax of its distribution, `Unknown` if never seen.
pub fn finalize_labels<T: Real>(map: &mut SemanticVoxelMap<T>) {
    for cell in map.cells.values_mut() {
        cell.final_label = if cell.observation_count > 0 {
            cell.distribution.argmax()
        } else {
            Label::Unknown
        };
    }
}
