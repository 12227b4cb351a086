//! Batch post-processing of a finalized semantic map: column-wise building/vegetation
//! correction followed by moving-vehicle removal.

mod columns;
mod vehicles;

pub use columns::{
    apply_column_labels, build_count_grid, correct_column_labels, infer_column_labels, Column,
    ColumnDecision, ColumnLabelGrid, CountGrid,
};
pub use vehicles::{
    classify_cluster, remove_moving, road_footprint, road_support_filter, Cluster, ClusterStatus,
    RemovalReport,
};

use crate::error::{Error, Result};
use crate::fusion::SemanticVoxelMap;
use crate::num::{cast, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams<T> {
    /// Clusters with at least this many voxels are moving.
    pub eta_d: usize,
    /// Clusters at least this long (meters) are moving.
    pub eta_l: T,
    pub dbscan_eps: T,
    pub dbscan_min_pts: usize,
    /// Chebyshev growth of the road footprint, in cells.
    pub footprint_dilation: u32,
    /// `[building, vegetation]` prior for column inference.
    pub column_prior: [T; 2],
}

impl<T: Real> Default for RefineParams<T> {
    fn default() -> Self {
        RefineParams {
            eta_d: 1500,
            eta_l: cast(6.0),
            dbscan_eps: cast(0.6),
            dbscan_min_pts: 10,
            footprint_dilation: 0,
            column_prior: [cast(0.5), cast(0.5)],
        }
    }
}

impl<T: Real> RefineParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.eta_d == 0 || !(self.eta_l > T::zero()) {
            return Err(Error::Parameter("eta_d and eta_l must be positive".into()));
        }
        if !(self.dbscan_eps > T::zero()) || self.dbscan_min_pts == 0 {
            return Err(Error::Parameter("dbscan eps and min_pts must be positive".into()));
        }
        let [b, v] = self.column_prior;
        if !(b > T::zero() && v > T::zero()) || ((b + v) - T::one()).abs() > T::sum_tol() {
            return Err(Error::Parameter(format!(
                "column prior must be positive and sum to one, got ({b}, {v})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport<T: Real> {
    pub relabeled: usize,
    pub removal: RemovalReport<T>,
}

/// Column label correction, then moving-vehicle removal.
pub fn refine<T: Real>(map: &mut SemanticVoxelMap<T>, params: &RefineParams<T>) -> Result<RefineReport<T>> {
    params.validate()?;
    let relabeled = correct_column_labels(map, params.column_prior);
    let removal = remove_moving(map, params)?;
    Ok(RefineReport { relabeled, removal })
}
