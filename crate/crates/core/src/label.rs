use std::fmt;
use std::str::FromStr;

/// Number of semantic classes carried by every label distribution.
pub const NUM_LABELS: usize = 5;

/// Semantic class of a voxel. `Unknown` marks cells that were never observed and never
/// takes part in distributions or metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Road,
    Sidewalk,
    Vehicle,
    Building,
    Vegetation,
    Unknown,
}

impl Label {
    /// The five semantic labels, in distribution-channel (and tie-break) order.
    pub const SEMANTIC: [Label; NUM_LABELS] = [
        Label::Road,
        Label::Sidewalk,
        Label::Vehicle,
        Label::Building,
        Label::Vegetation,
    ];

    pub const ALL: [Label; NUM_LABELS + 1] = [
        Label::Road,
        Label::Sidewalk,
        Label::Vehicle,
        Label::Building,
        Label::Vegetation,
        Label::Unknown,
    ];

    /// Channel index in a distribution, `None` for `Unknown`.
    pub fn index(self) -> Option<usize> {
        match self {
            Label::Road => Some(0),
            Label::Sidewalk => Some(1),
            Label::Vehicle => Some(2),
            Label::Building => Some(3),
            Label::Vegetation => Some(4),
            Label::Unknown => None,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::SEMANTIC.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Road => "road",
            Label::Sidewalk => "sidewalk",
            Label::Vehicle => "vehicle",
            Label::Building => "building",
            Label::Vegetation => "vegetation",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseLabelError(pub String);

impl fmt::Display for ParseLabelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown label `{}`", self.0)
    }
}

impl std::error::Error for ParseLabelError {}

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseLabelError(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for (i, l) in Label::SEMANTIC.iter().enumerate() {
            assert_eq!(l.index(), Some(i));
            assert_eq!(Label::from_index(i), Some(*l));
        }
        assert_eq!(Label::Unknown.index(), None);
        assert_eq!(Label::from_index(5), None);
    }

    #[test]
    fn parse_names() {
        for l in Label::ALL {
            assert_eq!(l.name().parse::<Label>().unwrap(), l);
        }
        assert_eq!("Building".parse::<Label>().unwrap(), Label::Building);
        assert!("sky".parse::<Label>().is_err());
    }
}
