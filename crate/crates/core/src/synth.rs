//! Synthetic urban scenes with exact ground truth.
//!
//! A scene is a list of labeled axis-aligned boxes, optional moving boxes that translate by a
//! fixed step per frame, and a sensor trajectory. Each simulated frame yields the lidar cloud
//! (one point per voxel-sized patch of every box face), the sensor pose, and a segmentation
//! image rendered by casting one ray per pixel into the scene.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::fusion::{CameraModel, FusionParams, SegmentationFrame, SemanticCell, SemanticVoxelMap};
use crate::geometry::{voxel_center, KeySet, PointCloud, Pose, VoxelKey};
use crate::io::CalibrationSet;
use crate::label::{Label, NUM_LABELS};
use crate::pipeline::MapBuilder;
use crate::refine::{refine, RefineParams, RefineReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub label: Label,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl SceneBox {
    pub fn new(label: Label, min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if label == Label::Unknown {
            return Err(Error::Validation("scene boxes need a semantic label".into()));
        }
        if min.iter().chain(max.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("box corner is not finite".into()));
        }
        if (0..3).any(|a| !(max[a] > min[a])) {
            return Err(Error::Validation(format!("box {min:?}..{max:?} has no volume")));
        }
        Ok(SceneBox { label, min, max })
    }

    pub fn translated(&self, by: &Vector3<f64>) -> Self {
        SceneBox {
            label: self.label,
            min: self.min + by,
            max: self.max + by,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Ray parameter where `origin + t·dir` enters the box, for `t ≥ 0`.
    fn entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t0 = (self.min[a] - origin[a]) / dir[a];
            let t1 = (self.max[a] - origin[a]) / dir[a];
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
        (lo <= hi).then_some(lo)
    }

    /// Keys whose centers lie inside the box.
    fn voxel_keys(&self, voxel_size: f64) -> impl Iterator<Item = VoxelKey> {
        let range = |a: usize| {
            let lo = (self.min[a] / voxel_size - 0.5 - 1e-9).ceil() as i32;
            let hi = (self.max[a] / voxel_size - 0.5 + 1e-9).floor() as i32;
            lo..=hi
        };
        let (xs, ys, zs) = (range(0), range(1), range(2));
        xs.flat_map(move |x| {
            let zs = zs.clone();
            ys.clone()
                .flat_map(move |y| zs.clone().map(move |z| VoxelKey::new(x, y, z)))
        })
    }

    /// One point per voxel-sized patch of each face, nudged inside the box so it falls in the
    /// cell behind the face.
    fn surface_points(&self, voxel_size: f64) -> Vec<Vector3<f64>> {
        let inset = 1e-3 * voxel_size;
        let mut out = Vec::new();
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let steps = |axis: usize| {
                let extent = self.max[axis] - self.min[axis];
                let n = ((extent / voxel_size) - 1e-9).ceil().max(1.0) as usize;
                (n, extent / n as f64)
            };
            let (nb, db) = steps(b);
            let (nc, dc) = steps(c);
            for side in [self.min[a] + inset, self.max[a] - inset] {
                for i in 0..nb {
                    for j in 0..nc {
                        let mut p = Vector3::zeros();
                        p[a] = side;
                        p[b] = self.min[b] + (i as f64 + 0.5) * db;
                        p[c] = self.min[c] + (j as f64 + 0.5) * dc;
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// A rigid box displaced by `step` once per frame: at frame `k` it sits at `body + k·step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingObject {
    pub body: SceneBox,
    pub step: Vector3<f64>,
}

impl MovingObject {
    pub fn at_frame(&self, frame_index: usize) -> SceneBox {
        self.body.translated(&(self.step * frame_index as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<SceneBox>,
    pub moving_objects: Vec<MovingObject>,
    /// Sensor-to-world pose per frame.
    pub trajectory: Vec<Pose<f64>>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trajectory.is_empty() {
            return Err(Error::Validation("scene trajectory is empty".into()));
        }
        for (i, p) in self.trajectory.iter().enumerate() {
            if p.frame_index() != i {
                return Err(Error::Validation(format!(
                    "trajectory pose {i} carries frame index {}",
                    p.frame_index()
                )));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }

    /// Static boxes followed by the moving ones at this frame; later entries win ties.
    pub fn boxes_at(&self, frame_index: usize) -> Vec<SceneBox> {
        self.primitives
            .iter()
            .copied()
            .chain(self.moving_objects.iter().map(|m| m.at_frame(frame_index)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Probability of a pixel's label being swapped with its pair partner.
    pub confusion_rate: f64,
    pub confusion_pairs: Vec<(Label, Label)>,
    /// Scores are `softmax(sharpness · one_hot)`; infinity gives exact one-hot scores.
    pub softmax_sharpness: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            confusion_rate: 0.0,
            confusion_pairs: vec![(Label::Building, Label::Vegetation)],
            softmax_sharpness: f64::INFINITY,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        // 1.0 is allowed: a full swap is a useful degenerate case
        if !(0.0..=1.0).contains(&self.confusion_rate) {
            return Err(Error::Parameter(format!(
                "confusion rate {} outside [0, 1]",
                self.confusion_rate
            )));
        }
        for (a, b) in &self.confusion_pairs {
            if a == b || *a == Label::Unknown || *b == Label::Unknown {
                return Err(Error::Parameter(format!("bad confusion pair {a}/{b}")));
            }
        }
        if !(self.softmax_sharpness > 0.0) {
            return Err(Error::Parameter("softmax sharpness must be positive".into()));
        }
        Ok(())
    }

    fn partner(&self, label: Label) -> Option<Label> {
        self.confusion_pairs.iter().find_map(|(a, b)| {
            if *a == label {
                Some(*b)
            } else if *b == label {
                Some(*a)
            } else {
                None
            }
        })
    }

    fn scores(&self, label: Label) -> [f64; NUM_LABELS] {
        let i = label.index().expect("semantic label");
        let mut s = [0.0; NUM_LABELS];
        if self.softmax_sharpness.is_infinite() {
            s[i] = 1.0;
        } else {
            // exp(σ)/(exp(σ)+4) written to avoid overflow
            let off = (-self.softmax_sharpness).exp();
            let z = 1.0 + 4.0 * off;
            s = [off / z; NUM_LABELS];
            s[i] = 1.0 / z;
        }
        s
    }
}

/// Whether lidar points hidden behind other boxes are still produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Visibility {
    /// Every face point in range and view is produced.
    #[default]
    Surface,
    /// Only points with a clear line of sight from the sensor.
    RayCast,
}

/// A forward-looking pinhole camera at the lidar origin. Lidar axes are x forward, y left,
/// z up; camera axes are x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub range: f64,
    pub visibility: Visibility,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            width: 640,
            height: 240,
            focal: 320.0,
            cx: 320.0,
            cy: 120.0,
            range: 40.0,
            visibility: Visibility::Surface,
        }
    }
}

const LIDAR_TO_CAMERA: [f64; 9] = [0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0];

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) || !(self.range > 0.0) {
            return Err(Error::Parameter("sensor needs a positive image size, focal length and range".into()));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Parameter("principal point is not finite".into()));
        }
        Ok(())
    }

    fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0)
    }

    fn rotation() -> Matrix3<f64> {
        Matrix3::from_row_slice(&LIDAR_TO_CAMERA)
    }

    pub fn camera(&self) -> Result<CameraModel<f64>> {
        CameraModel::from_parts(
            &self.intrinsics(),
            &Self::rotation(),
            &Vector3::zeros(),
            self.width,
            self.height,
        )
    }

    pub fn calibration(&self) -> Result<CalibrationSet> {
        Ok(CalibrationSet {
            lidar_to_camera: *self.camera()?.projection(),
            width: self.width,
            height: self.height,
        })
    }

    /// Sensor-frame direction through the center of pixel `(u, v)`.
    fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        let d = Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.focal,
            (v as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        );
        Self::rotation().transpose() * d
    }
}

/// Everything needed to simulate and score one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scene: SceneSpec,
    pub sensor: SensorSpec,
    pub noise: NoiseSpec,
    pub voxel_size: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.sensor.validate()?;
        self.noise.validate()?;
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return Err(Error::Parameter(format!("voxel size {}", self.voxel_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub pose: Pose<f64>,
    /// Points in the sensor frame.
    pub cloud: PointCloud<f64>,
    pub segmentation: SegmentationFrame<f64>,
}

fn nearest_hit(boxes: &[SceneBox], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in boxes.iter().enumerate() {
        if let Some(t) = b.entry(origin, dir) {
            if best.is_none_or(|(_, bt)| t <= bt) {
                best = Some((i, t));
            }
        }
    }
    best
}

/// Simulates one frame. The random stream is derived from the scene seed and the frame index
/// alone, so frames can be generated in any order.
pub fn simulate_frame(scenario: &Scenario, frame_index: usize) -> Result<SyntheticFrame> {
    scenario.validate()?;
    let Scenario {
        scene,
        sensor,
        noise,
        voxel_size,
    } = scenario;
    let pose = scene
        .trajectory
        .get(frame_index)
        .ok_or_else(|| {
            Error::Validation(format!(
                "frame {frame_index} outside a {}-frame trajectory",
                scene.frames()
            ))
        })?
        .clone();
    let camera = sensor.camera()?;
    let boxes = scene.boxes_at(frame_index);
    let origin = *pose.translation();

    let mut points = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        for p in b.surface_points(*voxel_size) {
            if (p - origin).norm() > sensor.range {
                continue;
            }
            let key = VoxelKey::from_point(&p, *voxel_size)?;
            let center = voxel_center(key, *voxel_size);
            if camera.pixel_of(&pose.apply_inverse(&center)).is_none() {
                continue;
            }
            if sensor.visibility == Visibility::RayCast {
                let dir = p - origin;
                let own = b.entry(&origin, &dir);
                let blocked = boxes.iter().enumerate().any(|(oi, o)| {
                    oi != bi && o.entry(&origin, &dir).is_some_and(|t| own.is_none_or(|ot| t < ot))
                });
                if blocked {
                    continue;
                }
            }
            points.push(pose.apply_inverse(&p));
        }
    }
    let cloud = PointCloud::new(points, frame_index)?;

    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(frame_index as u64);
    let draws: Vec<f64> = (0..sensor.width * sensor.height).map(|_| rng.random()).collect();
    let rotation = *pose.rotation();
    let scores: Vec<f64> = (0..sensor.height)
        .into_par_iter()
        .flat_map_iter(|v| {
            let boxes = &boxes;
            let draws = &draws;
            (0..sensor.width).flat_map(move |u| {
                let dir = rotation * sensor.ray(u, v);
                match nearest_hit(boxes, &origin, &dir) {
                    None => [1.0; NUM_LABELS],
                    Some((i, _)) => {
                        let truth = boxes[i].label;
                        let seen = match noise.partner(truth) {
                            Some(other) if draws[v * sensor.width + u] < noise.confusion_rate => other,
                            _ => truth,
                        };
                        noise.scores(seen)
                    }
                }
            })
        })
        .collect();
    let segmentation = SegmentationFrame::new(sensor.width, sensor.height, scores, frame_index)?;
    Ok(SyntheticFrame {
        pose,
        cloud,
        segmentation,
    })
}

/// One-hot cells for every voxel whose center lies inside a static box; later boxes win.
pub fn generate_ground_truth(scene: &SceneSpec, voxel_size: f64) -> Result<SemanticVoxelMap<f64>> {
    let mut map = SemanticVoxelMap::new(voxel_size)?;
    for b in &scene.primitives {
        for k in b.voxel_keys(voxel_size) {
            map.insert(k, SemanticCell::labeled(b.label));
        }
    }
    Ok(map)
}

/// Cells a moving object occupied at some frame and no static box occupies: the exact
/// location of the trace it can leave in the map.
pub fn swept_voxels(scene: &SceneSpec, voxel_size: f64) -> Result<KeySet> {
    let truth = generate_ground_truth(scene, voxel_size)?;
    let mut out = KeySet::new();
    for m in &scene.moving_objects {
        for f in 0..scene.frames() {
            out.extend(m.at_frame(f).voxel_keys(voxel_size).filter(|k| !truth.contains(k)));
        }
    }
    Ok(out)
}

/// Ground truth limited to `observed` cells, with swept cells present and labeled `Unknown`
/// (known to be empty).
pub fn evaluation_truth<'a>(
    scene: &SceneSpec,
    voxel_size: f64,
    observed: impl IntoIterator<Item = &'a VoxelKey>,
) -> Result<SemanticVoxelMap<f64>> {
    let full = generate_ground_truth(scene, voxel_size)?;
    let swept = swept_voxels(scene, voxel_size)?;
    let mut out = SemanticVoxelMap::new(voxel_size)?;
    for k in observed {
        if let Some(c) = full.get(k) {
            out.insert(*k, *c);
        } else if swept.contains(k) {
            out.insert(*k, SemanticCell::default());
        }
    }
    Ok(out)
}

/// Maps, truth and reports of one simulated run.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub unrefined: SemanticVoxelMap<f64>,
    pub refined: SemanticVoxelMap<f64>,
    pub truth: SemanticVoxelMap<f64>,
    pub unrefined_report: MetricsReport,
    pub refined_report: MetricsReport,
    pub refinement: RefineReport<f64>,
}

/// Simulate, map, fuse and evaluate; then refine and evaluate again. Both evaluations use the
/// truth restricted to the cells of the unrefined map.
pub fn run_end_to_end(
    scenario: &Scenario,
    fusion: &FusionParams<f64>,
    refine_params: &RefineParams<f64>,
) -> Result<EndToEnd> {
    scenario.validate()?;
    refine_params.validate()?;
    let mut builder = MapBuilder::new(scenario.voxel_size, scenario.sensor.camera()?, *fusion)?;
    for f in 0..scenario.scene.frames() {
        let frame = simulate_frame(scenario, f)?;
        builder.add_frame(&frame.pose, &frame.cloud, &frame.segmentation)?;
    }
    let unrefined = builder.finish();
    let truth = evaluation_truth(&scenario.scene, scenario.voxel_size, unrefined.keys())?;
    let unrefined_report = evaluate(&unrefined, &truth)?;
    let mut refined = unrefined.clone();
    let refinement = refine(&mut refined, refine_params)?;
    let refined_report = evaluate(&refined, &truth)?;
    Ok(EndToEnd {
        unrefined,
        refined,
        truth,
        unrefined_report,
        refined_report,
        refinement,
    })
}

fn parse_label(token: &str, line: usize) -> Result<Label> {
    let l: Label = token
        .parse()
        .map_err(|e| Error::format_at_line(line, format!("{e}")))?;
    if l == Label::Unknown {
        return Err(Error::format_at_line(line, "scene labels must be semantic"));
    }
    Ok(l)
}

/// Reads a scene description. One directive per line, `#` starts a comment:
///
/// ```text
/// voxel_size 0.2
/// seed 7
/// camera 640 240 320            # width height focal [cx cy]
/// range 40
/// visibility surface            # or raycast
/// box road 0 -4 0 60 4 0.2      # label xmin ymin zmin xmax ymax zmax
/// moving vehicle 10 -3 0.2 14 -1 1.8 0.6 0 0   # box, then per-frame step
/// straight 0 -2 1.8 1 0 0 30    # start, per-frame step, frame count
/// pose 1 0 0 0 0 1 0 0 0 0 1 0  # or explicit 3x4 rows, one per frame
/// noise rate 0.2
/// noise pair building vegetation
/// noise sharpness 4             # or inf
/// ```
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut scene = SceneSpec {
        primitives: Vec::new(),
        moving_objects: Vec::new(),
        trajectory: Vec::new(),
        seed: 0,
    };
    let mut sensor = SensorSpec::default();
    let mut noise = NoiseSpec::default();
    let mut pairs: Option<Vec<(Label, Label)>> = None;
    let mut voxel_size = 0.2;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let args = &tok[1..];
        let nums = |want: &[usize]| -> Result<Vec<f64>> {
            if !want.contains(&args.len()) {
                return Err(Error::format_at_line(
                    n,
                    format!("`{}` takes {want:?} values, found {}", tok[0], args.len()),
                ));
            }
            crate::io::parse_reals(args, n)
        };
        let bad = |e: Error| Error::format_at_line(n, e.to_string());
        match tok[0] {
            "voxel_size" => voxel_size = nums(&[1])?[0],
            "seed" => {
                if args.len() != 1 {
                    return Err(Error::format_at_line(n, "`seed` takes one integer"));
                }
                scene.seed = args[0]
                    .parse()
                    .map_err(|_| Error::format_at_line(n, format!("bad seed `{}`", args[0])))?;
            }
            "camera" => {
                let v = nums(&[3, 5])?;
                if v[0] < 1.0 || v[1] < 1.0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
                    return Err(Error::format_at_line(n, "image size must be positive integers"));
                }
                sensor.width = v[0] as usize;
                sensor.height = v[1] as usize;
                sensor.focal = v[2];
                (sensor.cx, sensor.cy) = if v.len() == 5 {
                    (v[3], v[4])
                } else {
                    (v[0] / 2.0, v[1] / 2.0)
                };
            }
            "range" => sensor.range = nums(&[1])?[0],
            "visibility" => {
                sensor.visibility = match args {
                    ["surface"] => Visibility::Surface,
                    ["raycast"] => Visibility::RayCast,
                    _ => return Err(Error::format_at_line(n, "visibility is `surface` or `raycast`")),
                }
            }
            "box" | "moving" => {
                let want = if tok[0] == "box" { 6 } else { 9 };
                if args.len() != want + 1 {
                    return Err(Error::format_at_line(
                        n,
                        format!("`{}` takes a label and {want} values", tok[0]),
                    ));
                }
                let label = parse_label(args[0], n)?;
                let v = crate::io::parse_reals(&args[1..], n)?;
                let b = SceneBox::new(
                    label,
                    Vector3::new(v[0], v[1], v[2]),
                    Vector3::new(v[3], v[4], v[5]),
                )
                .map_err(bad)?;
                if want == 6 {
                    scene.primitives.push(b);
                } else {
                    scene.moving_objects.push(MovingObject {
                        body: b,
                        step: Vector3::new(v[6], v[7], v[8]),
                    });
                }
            }
            "pose" => {
                let v = nums(&[12])?;
                let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
                let t = Vector3::new(v[3], v[7], v[11]);
                let f = scene.trajectory.len();
                scene.trajectory.push(Pose::new(r, t, f).map_err(bad)?);
            }
            "straight" => {
                let v = nums(&[7])?;
                if v[6] < 1.0 || v[6].fract() != 0.0 {
                    return Err(Error::format_at_line(n, "frame count must be a positive integer"));
                }
                let step = Vector3::new(v[3], v[4], v[5]);
                let yaw = if step.x == 0.0 && step.y == 0.0 {
                    0.0
                } else {
                    step.y.atan2(step.x)
                };
                for k in 0..v[6] as usize {
                    let f = scene.trajectory.len();
                    let t = Vector3::new(v[0], v[1], v[2]) + step * k as f64;
                    scene.trajectory.push(Pose::from_yaw(yaw, t, f));
                }
            }
            "noise" => match args {
                ["rate", r] => {
                    noise.confusion_rate = r
                        .parse()
                        .map_err(|_| Error::format_at_line(n, format!("bad rate `{r}`")))?
                }
                ["pair", a, b] => pairs
                    .get_or_insert_with(Vec::new)
                    .push((parse_label(a, n)?, parse_label(b, n)?)),
                ["sharpness", s] => {
                    noise.softmax_sharpness = if s.eq_ignore_ascii_case("inf") {
                        f64::INFINITY
                    } else {
                        s.parse()
                            .map_err(|_| Error::format_at_line(n, format!("bad sharpness `{s}`")))?
                    }
                }
                _ => return Err(Error::format_at_line(n, "expected `noise rate|pair|sharpness ...`")),
            },
            other => return Err(Error::format_at_line(n, format!("unknown directive `{other}`"))),
        }
    }
    if let Some(p) = pairs {
        noise.confusion_pairs = p;
    }
    let scenario = Scenario {
        scene,
        sensor,
        noise,
        voxel_size,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&crate::io::read_text(path)?)
}
