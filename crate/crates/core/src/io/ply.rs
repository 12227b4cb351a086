use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::fusion::SemanticVoxelMap;
use crate::geometry::voxel_center;
use crate::label::Label;
use crate::num::{to_f64, Real};

/// Display color per label.
pub fn label_color(label: Label) -> [u8; 3] {
    match label {
        Label::Road => [128, 64, 128],
        Label::Sidewalk => [244, 35, 232],
        Label::Vehicle => [0, 0, 142],
        Label::Building => [70, 70, 70],
        Label::Vegetation => [107, 142, 35],
        Label::Unknown => [0, 0, 0],
    }
}

/// ASCII PLY with one colored vertex per voxel center, in key order.
pub fn render_ply<T: Real>(map: &SemanticVoxelMap<T>) -> String {
    let keys = map.sorted_keys();
    let mut out = String::with_capacity(64 * keys.len() + 256);
    out.push_str("ply\nformat ascii 1.0\ncomment semantic voxel map\n");
    let _ = writeln!(out, "element vertex {}", keys.len());
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for k in keys {
        let c = voxel_center(k, map.voxel_size());
        let [r, g, b] = label_color(map.get(&k).expect("key from map").final_label);
        let _ = writeln!(
            out,
            "{} {} {} {r} {g} {b}",
            to_f64(c.x) as f32,
            to_f64(c.y) as f32,
            to_f64(c.z) as f32
        );
    }
    out
}

pub fn write_ply<T: Real>(map: &SemanticVoxelMap<T>, path: &Path) -> Result<()> {
    super::write_file(path, render_ply(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::SemanticCell;
    use crate::geometry::VoxelKey;
    use std::collections::HashSet;

    fn header_count(ply: &str) -> usize {
        ply.lines()
            .find_map(|l| l.strip_prefix("element vertex "))
            .unwrap()
            .parse()
            .unwrap()
    }

    fn body(ply: &str) -> Vec<&str> {
        ply.lines().skip_while(|l| *l != "end_header").skip(1).collect()
    }

    #[test]
    fn single_road_voxel() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        m.insert(VoxelKey::new(0, 0, 0), SemanticCell::labeled(Label::Road));
        let ply = render_ply(&m);
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
        assert_eq!(header_count(&ply), 1);
        assert_eq!(body(&ply), vec!["0.1 0.1 0.1 128 64 128"]);
    }

    #[test]
    fn empty_map() {
        let m = SemanticVoxelMap::<f64>::new(0.2).unwrap();
        let ply = render_ply(&m);
        assert_eq!(header_count(&ply), 0);
        assert!(body(&ply).is_empty());
        assert!(ply.ends_with("end_header\n"));
    }

    #[test]
    fn header_matches_body() {
        let mut m = SemanticVoxelMap::new(0.2).unwrap();
        for i in 0..100 {
            m.insert(VoxelKey::new(i, -i, i % 7), SemanticCell::labeled(Label::ALL[i as usize % 6]));
        }
        let ply = render_ply(&m);
        assert_eq!(header_count(&ply), 100);
        let lines = body(&ply);
        assert_eq!(lines.len(), 100);
        for l in lines {
            let toks: Vec<&str> = l.split(' ').collect();
            assert_eq!(toks.len(), 6);
            let rgb = [toks[3], toks[4], toks[5]].map(|t| t.parse::<u8>().unwrap());
            assert!(Label::ALL.iter().any(|lab| label_color(*lab) == rgb));
        }
    }

    #[test]
    fn palette_is_a_bijection() {
        let colors: HashSet<[u8; 3]> = Label::ALL.iter().map(|l| label_color(*l)).collect();
        assert_eq!(colors.len(), Label::ALL.len());
    }
}
