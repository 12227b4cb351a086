//! Density-based clustering (DBSCAN) over occupied voxels.
//!
//! Distances are Euclidean between voxel centers. Because centers sit on a lattice, the
//! squared distance between two cells is `|Δkey|²·s²` and is evaluated from the integer key
//! difference, which keeps the neighbor test translation invariant.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::VoxelKey;
use crate::num::{cast, Real};

/// Cluster partition of a key set. Clusters are numbered in discovery order and each
/// cluster's members are sorted; `noise` is sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Clustering {
    pub clusters: Vec<Vec<VoxelKey>>,
    pub noise: Vec<VoxelKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Unvisited,
    Noise,
    Member(usize),
}

/// Lattice offsets whose centers lie within `eps` (inclusive).
fn neighbor_offsets<T: Real>(voxel_size: T, eps: T) -> Vec<(i32, i32, i32)> {
    let r = (eps / voxel_size).ceil().to_i32().unwrap_or(0);
    let limit = eps * eps * (T::one() + T::rel_tol());
    let s2 = voxel_size * voxel_size;
    let mut out = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                let d2 = cast::<T>((dx * dx + dy * dy + dz * dz) as f64) * s2;
                if d2 <= limit {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    out
}

/// Classic DBSCAN. A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Points are visited in sorted key order, so a border point reachable from
/// several clusters joins the one discovered first and the result does not depend on the
/// input order.
pub fn dbscan<T: Real>(
    keys: impl IntoIterator<Item = VoxelKey>,
    voxel_size: T,
    eps: T,
    min_pts: usize,
) -> Result<Clustering> {
    if !(eps > T::zero()) || !(voxel_size > T::zero()) {
        return Err(Error::Parameter(format!(
            "dbscan needs positive eps and voxel size (eps {eps}, voxel size {voxel_size})"
        )));
    }
    if min_pts == 0 {
        return Err(Error::Parameter("dbscan min_pts must be at least 1".into()));
    }
    let mut points: Vec<VoxelKey> = keys.into_iter().collect();
    points.sort_unstable();
    points.dedup();
    let index: HashMap<VoxelKey, usize> = points.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let offsets = neighbor_offsets(voxel_size, eps);

    let neighbors = |i: usize, buf: &mut Vec<usize>| {
        buf.clear();
        let k = points[i];
        for (dx, dy, dz) in &offsets {
            let q = VoxelKey::new(k.ix + dx, k.iy + dy, k.iz + dz);
            if let Some(j) = index.get(&q) {
                buf.push(*j);
            }
        }
        buf.sort_unstable();
    };

    let mut state = vec![State::Unvisited; points.len()];
    let mut n_clusters = 0;
    let mut buf = Vec::new();
    let mut queue = VecDeque::new();
    for i in 0..points.len() {
        if state[i] != State::Unvisited {
            continue;
        }
        neighbors(i, &mut buf);
        if buf.len() < min_pts {
            state[i] = State::Noise;
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        state[i] = State::Member(id);
        queue.extend(buf.iter().copied());
        while let Some(j) = queue.pop_front() {
            match state[j] {
                State::Noise => state[j] = State::Member(id),
                State::Unvisited => {
                    state[j] = State::Member(id);
                    neighbors(j, &mut buf);
                    if buf.len() >= min_pts {
                        queue.extend(buf.iter().copied());
                    }
                }
                State::Member(_) => {}
            }
        }
    }

    let mut clustering = Clustering {
        clusters: vec![Vec::new(); n_clusters],
        noise: Vec::new(),
    };
    for (k, s) in points.into_iter().zip(state) {
        match s {
            State::Member(id) => clustering.clusters[id].push(k),
            _ => clustering.noise.push(k),
        }
    }
    Ok(clustering)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn dense_blob_is_one_cluster() {
        let keys: Vec<VoxelKey> = (0..12).map(|i| VoxelKey::new(i % 3, (i / 3) % 2, i / 6)).collect();
        let c = dbscan(keys, 0.2, 0.6, 10).unwrap();
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].len(), 12);
        assert!(c.noise.is_empty());
    }

    #[test]
    fn isolated_key_is_noise() {
        let c = dbscan([VoxelKey::new(3, 3, 3)], 0.2, 0.6, 10).unwrap();
        assert!(c.clusters.is_empty());
        assert_eq!(c.noise, vec![VoxelKey::new(3, 3, 3)]);
        let c = dbscan([VoxelKey::new(3, 3, 3)], 0.2, 0.6, 1).unwrap();
        assert_eq!(c.clusters.len(), 1);
    }

    #[test]
    fn eps_boundary_is_inclusive() {
        // three cells apart at 0.2 m is exactly 0.6 m
        let keys = [VoxelKey::new(0, 0, 0), VoxelKey::new(3, 0, 0)];
        assert_eq!(dbscan(keys, 0.2, 0.6, 2).unwrap().clusters.len(), 1);
        assert_eq!(dbscan(keys, 0.2, 0.59, 2).unwrap().clusters.len(), 0);
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // two cores along x with a shared border point in the middle
        let mut keys = Vec::new();
        for x in [0, 4] {
            keys.push(VoxelKey::new(x, 0, 0));
            keys.push(VoxelKey::new(x, 1, 0));
            keys.push(VoxelKey::new(x, -1, 0));
        }
        keys.push(VoxelKey::new(2, 0, 0));
        // eps 2 cells: cores have 3 column mates + shared point = 4; the border has 2 + itself
        let c = dbscan(keys, 1.0, 2.0, 4).unwrap();
        assert_eq!(c.clusters.len(), 2);
        assert!(c.clusters[0].contains(&VoxelKey::new(2, 0, 0)));
        assert!(c.noise.is_empty());
    }

    #[test]
    fn invalid_parameters() {
        assert!(dbscan(Vec::new(), 0.2, 0.0, 10).is_err());
        assert!(dbscan(Vec::new(), 0.2, 0.6, 0).is_err());
    }

    #[test]
    fn input_order_does_not_matter() {
        let keys: Vec<VoxelKey> = (0..200)
            .map(|i| VoxelKey::new((i * 37) % 23, (i * 11) % 7, (i * 5) % 3))
            .collect();
        let a = dbscan(keys.clone(), 0.2, 0.3, 4).unwrap();
        let mut rev = keys;
        rev.reverse();
        let b = dbscan(rev, 0.2, 0.3, 4).unwrap();
        let sets = |c: &Clustering| -> BTreeSet<Vec<VoxelKey>> { c.clusters.iter().cloned().collect() };
        assert_eq!(sets(&a), sets(&b));
        assert_eq!(a.noise, b.noise);
    }
}
