//! Text map format: a `voxel_size <meters>` header, then one voxel per line as
//! `ix iy iz label p0 p1 p2 p3 p4 obs_count`, sorted by key.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{LabelDistribution, SemanticCell, SemanticVoxelMap};
use crate::geometry::VoxelKey;
use crate::label::{Label, NUM_LABELS};
use crate::num::{cast, Real};

const TOKENS: usize = 4 + NUM_LABELS + 1;

pub fn render_map<T: Real>(map: &SemanticVoxelMap<T>) -> String {
    let keys = map.sorted_keys();
    let mut out = String::with_capacity(80 * keys.len() + 32);
    let _ = writeln!(out, "voxel_size {}", map.voxel_size());
    for k in keys {
        let c = map.get(&k).expect("key from map");
        let _ = write!(out, "{} {} {} {}", k.ix, k.iy, k.iz, c.final_label.name());
        for p in c.distribution.probabilities() {
            let _ = write!(out, " {p}");
        }
        let _ = writeln!(out, " {}", c.observation_count);
    }
    out
}

pub fn parse_map<T: Real>(text: &str) -> Result<SemanticVoxelMap<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format_at_line(1, "missing voxel_size header"))?;
    let voxel_size = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["voxel_size", v] => v
            .parse::<f64>()
            .map_err(|_| Error::format_at_line(1, format!("bad voxel size `{v}`")))?,
        _ => return Err(Error::format_at_line(1, "expected `voxel_size <meters>` header")),
    };
    let mut map = SemanticVoxelMap::new(cast::<T>(voxel_size))?;
    for (i, line) in lines {
        let n = i + 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != TOKENS {
            return Err(Error::format_at_line(
                n,
                format!("expected {TOKENS} fields, found {}", tok.len()),
            ));
        }
        let int = |t: &str| {
            t.parse::<i32>()
                .map_err(|_| Error::format_at_line(n, format!("`{t}` is not an integer")))
        };
        let key = VoxelKey::new(int(tok[0])?, int(tok[1])?, int(tok[2])?);
        let label: Label = tok[3]
            .parse()
            .map_err(|e| Error::format_at_line(n, format!("{e}")))?;
        let probs = super::parse_reals(&tok[4..4 + NUM_LABELS], n)?;
        let p: [T; NUM_LABELS] = std::array::from_fn(|j| cast(probs[j]));
        let distribution = LabelDistribution::from_probabilities(p)
            .map_err(|e| Error::format_at_line(n, e.to_string()))?;
        let observation_count = tok[TOKENS - 1]
            .parse::<u32>()
            .map_err(|_| Error::format_at_line(n, "bad observation count"))?;
        let cell = SemanticCell {
            distribution,
            final_label: label,
            observation_count,
        };
        if map.insert(key, cell).is_some() {
            return Err(Error::format_at_line(n, format!("duplicate voxel {key:?}")));
        }
    }
    Ok(map)
}

pub fn serialize_map<T: Real>(map: &SemanticVoxelMap<T>, path: &Path) -> Result<()> {
    super::write_file(path, render_map(map))
}

pub fn deserialize_map<T: Real>(path: &Path) -> Result<SemanticVoxelMap<T>> {
    parse_map(&super::read_text(path)?)
}
