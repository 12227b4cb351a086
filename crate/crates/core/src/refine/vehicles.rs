//! Removal of moving-vehicle traces: vehicles must stand on road columns, and the
//! remaining vehicle voxels are clustered and judged by size and horizontal length.

use std::collections::HashSet;

use crate::cluster::dbscan;
use crate::error::Result;
use crate::fusion::SemanticVoxelMap;
use crate::geometry::VoxelKey;
use crate::label::Label;
use crate::num::{cast, Real};

use super::columns::Column;
use super::RefineParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterStatus {
    Static,
    Moving,
}

/// A group of vehicle voxels found by DBSCAN.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T: Real> {
    pub members: Vec<VoxelKey>,
    /// Horizontal length: the longer of the x and y bounding-box edges of member centers.
    pub horizontal_extent: T,
    pub status: ClusterStatus,
}

impl<T: Real> Cluster<T> {
    /// Builds an as-yet unclassified (static) cluster.
    pub fn from_members(members: Vec<VoxelKey>, voxel_size: T) -> Self {
        let span = |f: fn(&VoxelKey) -> i32| -> i32 {
            let lo = members.iter().map(f).min().unwrap_or(0);
            let hi = members.iter().map(f).max().unwrap_or(0);
            hi - lo
        };
        let cells = span(|k| k.ix).max(span(|k| k.iy));
        Cluster {
            horizontal_extent: cast::<T>(cells as f64) * voxel_size,
            members,
            status: ClusterStatus::Static,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.members.len()
    }
}

/// Static only when both the voxel count and the horizontal length stay strictly below
/// their thresholds.
pub fn classify_cluster<T: Real>(cluster: &Cluster<T>, params: &RefineParams<T>) -> ClusterStatus {
    if cluster.cardinality() < params.eta_d && cluster.horizontal_extent < params.eta_l {
        ClusterStatus::Static
    } else {
        ClusterStatus::Moving
    }
}

/// Columns holding at least one road voxel, grown by `dilation` cells (Chebyshev radius).
pub fn road_footprint<T: Real>(map: &SemanticVoxelMap<T>, dilation: u32) -> HashSet<Column> {
    let base: HashSet<Column> = map
        .iter()
        .filter(|(_, c)| c.final_label == Label::Road)
        .map(|(k, _)| k.column())
        .collect();
    if dilation == 0 {
        return base;
    }
    let r = dilation as i32;
    let mut out = HashSet::with_capacity(base.len() * ((2 * r + 1) * (2 * r + 1)) as usize);
    for (x, y) in base {
        for dx in -r..=r {
            for dy in -r..=r {
                out.insert((x + dx, y + dy));
            }
        }
    }
    out
}

/// Deletes vehicle voxels standing outside the road footprint. Returns how many were removed.
pub fn road_support_filter<T: Real>(map: &mut SemanticVoxelMap<T>, footprint: &HashSet<Column>) -> usize {
    let before = map.len();
    map.retain(|k, c| c.final_label != Label::Vehicle || footprint.contains(&k.column()));
    before - map.len()
}

/// What vehicle removal did to a map.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalReport<T: Real> {
    pub off_road: usize,
    pub noise: usize,
    pub moving: usize,
    pub clusters: Vec<Cluster<T>>,
}

impl<T: Real> RemovalReport<T> {
    pub fn removed(&self) -> usize {
        self.off_road + self.noise + self.moving
    }
}

/// Road support, then DBSCAN over the surviving vehicle voxels; moving clusters and noise
/// are deleted, static clusters kept.
pub fn remove_moving<T: Real>(map: &mut SemanticVoxelMap<T>, params: &RefineParams<T>) -> Result<RemovalReport<T>> {
    params.validate()?;
    let footprint = road_footprint(map, params.footprint_dilation);
    let off_road = road_support_filter(map, &footprint);
    let vehicles = map.keys_with_label(Label::Vehicle);
    let clustering = dbscan(vehicles, map.voxel_size(), params.dbscan_eps, params.dbscan_min_pts)?;

    let mut clusters = Vec::with_capacity(clustering.clusters.len());
    let mut moving = 0;
    for members in clustering.clusters {
        let mut c = Cluster::from_members(members, map.voxel_size());
        c.status = classify_cluster(&c, params);
        if c.status == ClusterStatus::Moving {
            for k in &c.members {
                map.remove(k);
            }
            moving += c.members.len();
        }
        clusters.push(c);
    }
    for k in &clustering.noise {
        map.remove(k);
    }
    Ok(RemovalReport {
        off_road,
        noise: clustering.noise.len(),
        moving,
        clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::SemanticCell;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn put(m: &mut SemanticVoxelMap<f64>, x: i32, y: i32, z: i32, l: Label) {
        m.insert(VoxelKey::new(x, y, z), SemanticCell::labeled(l));
    }

    fn params() -> RefineParams<f64> {
        RefineParams::default()
    }

    fn cluster_of(d: usize, l: f64) -> Cluster<f64> {
        Cluster {
            members: vec![VoxelKey::default(); d],
            horizontal_extent: l,
            status: ClusterStatus::Static,
        }
    }

    #[test]
    fn classify_examples() {
        let p = params();
        assert_eq!(classify_cluster(&cluster_of(200, 4.5), &p), ClusterStatus::Static);
        assert_eq!(classify_cluster(&cluster_of(5000, 40.0), &p), ClusterStatus::Moving);
        assert_eq!(classify_cluster(&cluster_of(1500, 5.0), &p), ClusterStatus::Moving);
        assert_eq!(classify_cluster(&cluster_of(100, 6.0), &p), ClusterStatus::Moving);
    }

    #[test]
    fn larger_thresholds_never_turn_static_to_moving() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let c = cluster_of(rng.random_range(1..4000), rng.random_range(0.0..20.0));
            let p = RefineParams {
                eta_d: rng.random_range(1..3000),
                eta_l: rng.random_range(0.1..15.0),
                ..params()
            };
            let bigger = RefineParams {
                eta_d: p.eta_d + rng.random_range(0..1000),
                eta_l: p.eta_l + rng.random_range(0.0..5.0),
                ..p
            };
            if classify_cluster(&c, &p) == ClusterStatus::Static {
                assert_eq!(classify_cluster(&c, &bigger), ClusterStatus::Static);
            }
        }
    }

    #[test]
    fn extent_uses_longer_horizontal_edge() {
        let members = vec![VoxelKey::new(0, 0, 0), VoxelKey::new(19, 3, 7), VoxelKey::new(5, 9, 0)];
        let c = Cluster::<f64>::from_members(members, 0.2);
        assert!((c.horizontal_extent - 19.0 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn footprint_examples() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        put(&mut m, 3, 4, 0, Label::Road);
        put(&mut m, 8, 8, 0, Label::Sidewalk);
        assert_eq!(road_footprint(&m, 0), [(3, 4)].into_iter().collect());
        let fp = road_footprint(&m, 1);
        assert_eq!(fp.len(), 9);
        for x in 2..=4 {
            for y in 3..=5 {
                assert!(fp.contains(&(x, y)));
            }
        }
    }

    #[test]
    fn footprint_matches_column_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        for x in 0..60 {
            let y0 = 10 + rng.random_range(-2..=2);
            for y in y0..y0 + 8 {
                put(&mut m, x, y, 0, Label::Road);
            }
            put(&mut m, x, y0 + 10, 0, Label::Sidewalk);
        }
        for dilation in [0u32, 1, 2] {
            let fp = road_footprint(&m, dilation);
            let r = dilation as i32;
            for x in -5..65 {
                for y in -5..35 {
                    let expected = (x - r..=x + r).any(|cx| {
                        (y - r..=y + r).any(|cy| {
                            (0..1).any(|z| {
                                m.get(&VoxelKey::new(cx, cy, z)).is_some_and(|c| c.final_label == Label::Road)
                            })
                        })
                    });
                    assert_eq!(fp.contains(&(x, y)), expected, "({x},{y}) dilation {dilation}");
                }
            }
        }
    }

    #[test]
    fn road_support_examples() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        put(&mut m, 0, 0, 0, Label::Building);
        put(&mut m, 0, 0, 1, Label::Vehicle);
        put(&mut m, 5, 0, 0, Label::Road);
        put(&mut m, 5, 0, 1, Label::Vehicle);
        put(&mut m, 9, 0, 0, Label::Vegetation);
        let fp = road_footprint(&m, 0);
        assert_eq!(road_support_filter(&mut m, &fp), 1);
        assert!(!m.contains(&VoxelKey::new(0, 0, 1)));
        assert!(m.contains(&VoxelKey::new(5, 0, 1)));
        assert_eq!(m.len(), 4);
    }

    #[test]
    fn road_support_matches_comprehension() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        for _ in 0..3000 {
            let l = Label::SEMANTIC[rng.random_range(0..5)];
            put(&mut m, rng.random_range(0..30), rng.random_range(0..30), rng.random_range(0..5), l);
        }
        let road_cols: HashSet<Column> = m
            .iter()
            .filter(|(_, c)| c.final_label == Label::Road)
            .map(|(k, _)| (k.ix, k.iy))
            .collect();
        let expected: HashSet<VoxelKey> = m
            .iter()
            .filter(|(k, c)| c.final_label != Label::Vehicle || road_cols.contains(&(k.ix, k.iy)))
            .map(|(k, _)| *k)
            .collect();
        let fp = road_footprint(&m, 0);
        road_support_filter(&mut m, &fp);
        assert_eq!(m.keys().copied().collect::<HashSet<_>>(), expected);
    }

    fn road_slab(m: &mut SemanticVoxelMap<f64>, x0: i32, x1: i32, y0: i32, y1: i32) {
        for x in x0..x1 {
            for y in y0..y1 {
                put(m, x, y, 0, Label::Road);
            }
        }
    }

    fn vehicle_box(m: &mut SemanticVoxelMap<f64>, x0: i32, x1: i32, y0: i32, y1: i32, z1: i32) {
        for x in x0..x1 {
            for y in y0..y1 {
                for z in 1..z1 {
                    put(m, x, y, z, Label::Vehicle);
                }
            }
        }
    }

    #[test]
    fn parked_kept_trace_removed() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        road_slab(&mut m, 0, 250, 0, 40);
        // parked car: 20 x 5 x 3 = 300 voxels, 3.8 m long
        vehicle_box(&mut m, 10, 30, 30, 35, 4);
        // trace: 150 x 5 x 2, 29.8 m long
        vehicle_box(&mut m, 50, 200, 5, 10, 3);
        let stray = VoxelKey::new(100, 30, 5);
        put(&mut m, 100, 30, 5, Label::Vehicle);
        let before = m.label_counts();
        let report = remove_moving(&mut m, &params()).unwrap();
        assert_eq!(report.clusters.len(), 2);
        assert_eq!(report.moving, 1500);
        assert_eq!(report.noise, 1);
        assert!(!m.contains(&stray));
        assert_eq!(m.count_label(Label::Vehicle), 300);
        let after = m.label_counts();
        for l in [Label::Road, Label::Sidewalk, Label::Building, Label::Vegetation] {
            let i = l.index().unwrap();
            assert_eq!(before[i], after[i]);
        }
    }

    #[test]
    fn no_vehicles_is_a_no_op() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        road_slab(&mut m, 0, 20, 0, 20);
        put(&mut m, 3, 3, 4, Label::Building);
        let before = m.clone();
        let r = remove_moving(&mut m, &params()).unwrap();
        assert_eq!(r.removed(), 0);
        assert_eq!(m, before);
    }

    #[test]
    fn static_scene_loses_only_noise() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        road_slab(&mut m, 0, 100, 0, 40);
        vehicle_box(&mut m, 10, 30, 5, 15, 4);
        vehicle_box(&mut m, 60, 80, 5, 15, 4);
        let a = VoxelKey::new(45, 20, 1);
        let b = VoxelKey::new(90, 35, 3);
        put(&mut m, a.ix, a.iy, a.iz, Label::Vehicle);
        put(&mut m, b.ix, b.iy, b.iz, Label::Vehicle);
        let mut expected = m.clone();
        expected.remove(&a);
        expected.remove(&b);
        let r = remove_moving(&mut m, &params()).unwrap();
        assert_eq!(r.noise, 2);
        assert_eq!(r.moving, 0);
        assert_eq!(m, expected);
    }
}
