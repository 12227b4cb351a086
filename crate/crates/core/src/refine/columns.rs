//! Building/vegetation label correction through per-column voxel counts.

use std::collections::{BTreeSet, HashMap};

use crate::fusion::SemanticVoxelMap;
use crate::label::Label;
use crate::num::{cast, Real};

pub type Column = (i32, i32);

/// Number of voxels of one label stacked in each `(ix, iy)` column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    label: Label,
    cells: HashMap<Column, usize>,
}

impl CountGrid {
    pub fn label(&self) -> Label {
        self.label
    }

    pub fn count(&self, column: Column) -> usize {
        self.cells.get(&column).copied().unwrap_or(0)
    }

    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.cells.keys()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total(&self) -> usize {
        self.cells.values().sum()
    }
}

pub fn build_count_grid<T: Real>(map: &SemanticVoxelMap<T>, label: Label) -> CountGrid {
    let mut cells = HashMap::new();
    for (k, c) in map.iter() {
        if c.final_label == label {
            *cells.entry(k.column()).or_insert(0) += 1;
        }
    }
    CountGrid { label, cells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnDecision {
    Decided(Label),
    /// Equal posterior for both labels; the column is left as is.
    NoDecision,
}

/// Column label inferred from the building and vegetation count grids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ColumnLabelGrid {
    cells: HashMap<Column, ColumnDecision>,
}

impl ColumnLabelGrid {
    pub fn get(&self, column: Column) -> Option<ColumnDecision> {
        self.cells.get(&column).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Column, &ColumnDecision)> {
        self.cells.iter()
    }
}

/// Posterior over {building, vegetation} per column with likelihood
/// `count_l / (count_B + count_V)` and the given `[building, vegetation]` prior.
pub fn infer_column_labels<T: Real>(
    building: &CountGrid,
    vegetation: &CountGrid,
    prior: [T; 2],
) -> ColumnLabelGrid {
    let columns: BTreeSet<Column> = building.columns().chain(vegetation.columns()).copied().collect();
    let cells = columns
        .into_iter()
        .filter_map(|col| {
            let b = building.count(col);
            let v = vegetation.count(col);
            let total = b + v;
            if total == 0 {
                return None;
            }
            let total: T = cast(total as f64);
            let pb = prior[0] * cast::<T>(b as f64) / total;
            let pv = prior[1] * cast::<T>(v as f64) / total;
            let decision = if pb > pv {
                ColumnDecision::Decided(Label::Building)
            } else if pv > pb {
                ColumnDecision::Decided(Label::Vegetation)
            } else {
                ColumnDecision::NoDecision
            };
            Some((col, decision))
        })
        .collect();
    ColumnLabelGrid { cells }
}

/// Relabels building and vegetation voxels to their column's decision. Other labels and the
/// stored distributions are not touched. Returns the number of relabeled voxels.
pub fn apply_column_labels<T: Real>(map: &mut SemanticVoxelMap<T>, grid: &ColumnLabelGrid) -> usize {
    let mut changed = 0;
    for (k, cell) in map.iter_mut() {
        if !matches!(cell.final_label, Label::Building | Label::Vegetation) {
            continue;
        }
        if let Some(ColumnDecision::Decided(l)) = grid.get(k.column()) {
            if cell.final_label != l {
                cell.final_label = l;
                changed += 1;
            }
        }
    }
    changed
}

/// Count grids, inference and relabeling in one step.
pub fn correct_column_labels<T: Real>(map: &mut SemanticVoxelMap<T>, prior: [T; 2]) -> usize {
    let gb = build_count_grid(map, Label::Building);
    let gv = build_count_grid(map, Label::Vegetation);
    let grid = infer_column_labels(&gb, &gv, prior);
    apply_column_labels(map, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::SemanticCell;
    use crate::geometry::VoxelKey;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_of(cells: &[((i32, i32, i32), Label)]) -> SemanticVoxelMap<f64> {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        for ((x, y, z), l) in cells {
            m.insert(VoxelKey::new(*x, *y, *z), SemanticCell::labeled(*l));
        }
        m
    }

    fn grid_with(label: Label, cols: &[(Column, usize)]) -> CountGrid {
        CountGrid {
            label,
            cells: cols.iter().copied().collect(),
        }
    }

    #[test]
    fn count_grid_examples() {
        let empty = map_of(&[]);
        assert!(build_count_grid(&empty, Label::Building).is_empty());
        let m = map_of(&[
            ((0, 0, 0), Label::Building),
            ((0, 0, 1), Label::Building),
            ((0, 0, 2), Label::Building),
            ((0, 0, 3), Label::Vegetation),
        ]);
        let g = build_count_grid(&m, Label::Building);
        assert_eq!(g.count((0, 0)), 3);
        assert_eq!(g.len(), 1);
        assert_eq!(build_count_grid(&m, Label::Vegetation).count((0, 0)), 1);
    }

    #[test]
    fn count_grid_matches_column_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        while m.len() < 10_000 {
            let k = VoxelKey::new(rng.random_range(0..40), rng.random_range(0..40), rng.random_range(0..20));
            m.insert(k, SemanticCell::labeled(Label::SEMANTIC[rng.random_range(0..5)]));
        }
        let mut gb_total = 0;
        let mut gv_total = 0;
        for label in Label::SEMANTIC {
            let g = build_count_grid(&m, label);
            for x in 0..40 {
                for y in 0..40 {
                    let mut n = 0;
                    for z in 0..20 {
                        if m.get(&VoxelKey::new(x, y, z)).is_some_and(|c| c.final_label == label) {
                            n += 1;
                        }
                    }
                    assert_eq!(g.count((x, y)), n);
                }
            }
            match label {
                Label::Building => gb_total = g.total(),
                Label::Vegetation => gv_total = g.total(),
                _ => {}
            }
        }
        assert_eq!(
            gb_total + gv_total,
            m.count_label(Label::Building) + m.count_label(Label::Vegetation)
        );
    }

    #[test]
    fn inference_examples() {
        let uniform = [0.5, 0.5];
        let g = infer_column_labels(
            &grid_with(Label::Building, &[((0, 0), 5), ((1, 0), 2), ((2, 0), 3)]),
            &grid_with(Label::Vegetation, &[((0, 0), 1), ((1, 0), 2), ((2, 0), 7), ((3, 0), 1)]),
            uniform,
        );
        assert_eq!(g.get((0, 0)), Some(ColumnDecision::Decided(Label::Building)));
        assert_eq!(g.get((1, 0)), Some(ColumnDecision::NoDecision));
        assert_eq!(g.get((2, 0)), Some(ColumnDecision::Decided(Label::Vegetation)));
        assert_eq!(g.get((3, 0)), Some(ColumnDecision::Decided(Label::Vegetation)));
        assert_eq!(g.get((9, 9)), None);

        // 0.8 * 0.3 = 0.24 against 0.2 * 0.7 = 0.14
        let g = infer_column_labels(
            &grid_with(Label::Building, &[((0, 0), 3)]),
            &grid_with(Label::Vegetation, &[((0, 0), 7)]),
            [0.8, 0.2],
        );
        assert_eq!(g.get((0, 0)), Some(ColumnDecision::Decided(Label::Building)));
    }

    #[test]
    fn apply_examples() {
        let mut cells: Vec<((i32, i32, i32), Label)> = (0..5).map(|z| ((0, 0, z), Label::Building)).collect();
        cells.push(((0, 0, 5), Label::Vegetation));
        cells.push(((0, 0, 6), Label::Vehicle));
        cells.push(((1, 0, 0), Label::Building));
        cells.push(((1, 0, 1), Label::Vegetation));
        let mut m = map_of(&cells);
        let n = correct_column_labels(&mut m, [0.5, 0.5]);
        assert_eq!(n, 1);
        assert_eq!(m.get(&VoxelKey::new(0, 0, 5)).unwrap().final_label, Label::Building);
        assert_eq!(m.get(&VoxelKey::new(0, 0, 6)).unwrap().final_label, Label::Vehicle);
        // tied column untouched
        assert_eq!(m.get(&VoxelKey::new(1, 0, 1)).unwrap().final_label, Label::Vegetation);
        assert_eq!(m.get(&VoxelKey::new(1, 0, 0)).unwrap().final_label, Label::Building);
        // distribution is kept
        assert_eq!(
            m.get(&VoxelKey::new(0, 0, 5)).unwrap().distribution.argmax(),
            Label::Vegetation
        );
        assert_eq!(m.len(), cells.len());
    }

    #[test]
    fn flipped_columns_restore_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        for x in 0..30 {
            for y in 0..30 {
                let truth = if (x / 5 + y / 5) % 2 == 0 { Label::Building } else { Label::Vegetation };
                let other = if truth == Label::Building { Label::Vegetation } else { Label::Building };
                for z in 0..10 {
                    let l = if rng.random::<f64>() < 0.1 { other } else { truth };
                    m.insert(VoxelKey::new(x, y, z), SemanticCell::labeled(l));
                }
            }
        }
        // oracle: strict per-column majority vote
        let mut expected = HashMap::new();
        for x in 0..30 {
            for y in 0..30 {
                let nb = (0..10)
                    .filter(|z| m.get(&VoxelKey::new(x, y, *z)).unwrap().final_label == Label::Building)
                    .count();
                for z in 0..10 {
                    let k = VoxelKey::new(x, y, z);
                    let cur = m.get(&k).unwrap().final_label;
                    let l = match nb.cmp(&(10 - nb)) {
                        std::cmp::Ordering::Greater => Label::Building,
                        std::cmp::Ordering::Less => Label::Vegetation,
                        std::cmp::Ordering::Equal => cur,
                    };
                    expected.insert(k, l);
                }
            }
        }
        correct_column_labels(&mut m, [0.5, 0.5]);
        for (k, c) in m.iter() {
            assert_eq!(c.final_label, expected[k]);
        }
    }

    #[test]
    fn coherent_columns_are_fixed_points() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        for x in 0..10 {
            for z in 0..4 {
                let l = if x % 3 == 0 { Label::Vegetation } else { Label::Building };
                m.insert(VoxelKey::new(x, 0, z), SemanticCell::labeled(l));
            }
        }
        let before = m.clone();
        assert_eq!(correct_column_labels(&mut m, [0.5, 0.5]), 0);
        assert_eq!(m, before);
    }
}
