//! The fixed 11-attribute storm taxonomy and its exact option strings.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

pub const NOT_APPARENT: &str = "not apparent";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Morphology,
    MaxPixelLevel,
    InitialPosition,
    MotionDirection,
    MotionSpeed,
    RotationCenter,
    CellCountChange,
    MorphEvolution,
    IntensityEvolution,
    ArealCoverage,
    OrganizationEvolution,
}

/// Role of an attribute in the reasoning trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    Temporal,
    Perceptual,
    DirectOutcome,
    DeepOutcome,
    Auxiliary,
}

pub const MORPHOLOGY: [&str; 6] = ["scattered", "banded", "blob-like", "spiral", "layered", "bow-shaped"];
pub const MAX_LEVEL: [&str; 7] = [
    "no significant (0–31)",
    "very weak (31–73)",
    "weak (74–132)",
    "moderate (133–159)",
    "strong (160–180)",
    "very strong (181–218)",
    "extreme (219–255)",
];
pub const POSITION: [&str; 10] = ["centered", "N", "S", "W", "E", "NE", "NW", "SE", "SW", "no clear main system"];
pub const DIRECTION: [&str; 9] =
    ["north", "northeast", "east", "southeast", "south", "southwest", "west", "northwest", "no obvious motion"];
pub const SPEED: [&str; 5] = ["near-stationary", "slow", "moderate", "fast", "very fast"];
pub const ROTATION: [&str; 10] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW", "no rotation", "location uncertain"];
pub const CELL_COUNT: [&str; 3] = ["increasing", "decreasing", "roughly unchanged"];
pub const MORPH_EVOLUTION: [&str; 7] =
    ["elongation", "shrinkage", "expansion", "merging", "splitting", "dissipation", "generation"];
pub const INTENSITY: [&str; 3] = ["strengthening", "weakening", "roughly unchanged"];
pub const AREAL: [&str; 5] =
    ["expanding", "roughly unchanged", "rapidly shrinking", "expand then shrink", "shrink then gradually expand"];
pub const ORGANIZATION: [&str; 5] = [
    "becoming connected",
    "becoming fragmented",
    "connected then gradually weakening",
    "fragmented then becoming connected",
    "no obvious change",
];

/// Max pixel level bin lower edges; a peak of exactly 31 is still "no significant".
pub fn max_level_option(peak: f32) -> &'static str {
    let edges = [32.0, 74.0, 133.0, 160.0, 181.0, 219.0];
    let bin = edges.iter().filter(|&&e| peak >= e).count();
    MAX_LEVEL[bin]
}

/// Eight compass sectors in screen coordinates (y grows downward = south).
pub fn compass_index(dx: f64, dy: f64) -> usize {
    let deg = (-dy).atan2(dx).to_degrees(); // 0 = east, 90 = north
    let from_north = (90.0 - deg).rem_euclid(360.0);
    (((from_north + 22.5) / 45.0).floor() as usize) % 8
}

impl Attribute {
    pub const ALL: [Attribute; 11] = [
        Attribute::Morphology,
        Attribute::MaxPixelLevel,
        Attribute::InitialPosition,
        Attribute::MotionDirection,
        Attribute::MotionSpeed,
        Attribute::RotationCenter,
        Attribute::CellCountChange,
        Attribute::MorphEvolution,
        Attribute::IntensityEvolution,
        Attribute::ArealCoverage,
        Attribute::OrganizationEvolution,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Attribute::Morphology => "Morphology",
            Attribute::MaxPixelLevel => "Max pixel level",
            Attribute::InitialPosition => "Initial position of the main convective system",
            Attribute::MotionDirection => "Main motion direction",
            Attribute::MotionSpeed => "Main motion speed",
            Attribute::RotationCenter => "Rotation center",
            Attribute::CellCountChange => "Change in number of convective cells",
            Attribute::MorphEvolution => "Morphological evolution of the main system",
            Attribute::IntensityEvolution => "Intensity evolution",
            Attribute::ArealCoverage => "Areal coverage evolution",
            Attribute::OrganizationEvolution => "Organization evolution",
        }
    }

    pub fn from_key(key: &str) -> Option<Attribute> {
        Attribute::ALL.into_iter().find(|a| a.key() == key)
    }

    pub fn options(self) -> &'static [&'static str] {
        match self {
            Attribute::Morphology => &MORPHOLOGY,
            Attribute::MaxPixelLevel => &MAX_LEVEL,
            Attribute::InitialPosition => &POSITION,
            Attribute::MotionDirection => &DIRECTION,
            Attribute::MotionSpeed => &SPEED,
            Attribute::RotationCenter => &ROTATION,
            Attribute::CellCountChange => &CELL_COUNT,
            Attribute::MorphEvolution => &MORPH_EVOLUTION,
            Attribute::IntensityEvolution => &INTENSITY,
            Attribute::ArealCoverage => &AREAL,
            Attribute::OrganizationEvolution => &ORGANIZATION,
        }
    }

    pub fn factor(self) -> Factor {
        match self {
            Attribute::MotionDirection | Attribute::MotionSpeed | Attribute::RotationCenter => Factor::Temporal,
            Attribute::Morphology | Attribute::MaxPixelLevel | Attribute::InitialPosition => Factor::Perceptual,
            Attribute::IntensityEvolution => Factor::DirectOutcome,
            Attribute::ArealCoverage | Attribute::OrganizationEvolution => Factor::DeepOutcome,
            Attribute::CellCountChange | Attribute::MorphEvolution => Factor::Auxiliary,
        }
    }

    /// Attributes judged from a single frame; the rest need a sequence.
    pub fn is_static(self) -> bool {
        self.factor() == Factor::Perceptual
    }

    pub fn accepts(self, choice: &str) -> bool {
        choice == NOT_APPARENT || self.options().contains(&choice)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub choice: String,
    #[serde(default)]
    pub rationale: String,
}

/// One choice (plus rationale) per taxonomy attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeRecord {
    entries: BTreeMap<Attribute, AttributeEntry>,
    pub global_rationale: String,
}

impl Default for AttributeRecord {
    fn default() -> Self {
        Self::new()
    }
}

impl AttributeRecord {
    /// Every attribute set to "not apparent".
    pub fn new() -> Self {
        let entries = Attribute::ALL
            .into_iter()
            .map(|a| (a, AttributeEntry { choice: NOT_APPARENT.into(), rationale: String::new() }))
            .collect();
        AttributeRecord { entries, global_rationale: String::new() }
    }

    /// Sets a choice, rejecting strings outside the attribute's option list.
    pub fn set(&mut self, attr: Attribute, choice: &str, rationale: impl Into<String>) -> Result<()> {
        if !attr.accepts(choice) {
            return Err(CoreError::Taxonomy { attribute: attr.key().into(), choice: choice.into() });
        }
        self.entries.insert(attr, AttributeEntry { choice: choice.into(), rationale: rationale.into() });
        Ok(())
    }

    pub(crate) fn put(&mut self, attr: Attribute, choice: &str, rationale: impl Into<String>) {
        self.set(attr, choice, rationale).expect("annotator produced an option outside the taxonomy")
    }

    pub fn choice(&self, attr: Attribute) -> &str {
        &self.entries[&attr].choice
    }

    pub fn entry(&self, attr: Attribute) -> &AttributeEntry {
        &self.entries[&attr]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Attribute, &AttributeEntry)> {
        self.entries.iter().map(|(a, e)| (*a, e))
    }

    /// `(key, choice)` pairs in taxonomy order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        Attribute::ALL.iter().map(|a| (a.key().to_string(), self.choice(*a).to_string())).collect()
    }

    /// `<Attribute>: <option>` lines in taxonomy order.
    pub fn to_lines(&self) -> String {
        Attribute::ALL.iter().map(|a| format!("{}: {}", a.key(), self.choice(*a))).collect::<Vec<_>>().join("\n")
    }

    /// Copy keeping only the single-frame attributes.
    pub fn static_only(&self) -> AttributeRecord {
        let mut out = AttributeRecord::new();
        for a in Attribute::ALL.into_iter().filter(|a| a.is_static()) {
            out.entries.insert(a, self.entries[&a].clone());
        }
        out
    }

    fn from_map(map: BTreeMap<String, AttributeEntry>, global_rationale: String) -> Result<Self> {
        let mut rec = AttributeRecord::new();
        for a in Attribute::ALL {
            let e = map.get(a.key()).ok_or_else(|| CoreError::MissingAttribute(a.key().into()))?;
            rec.set(a, &e.choice, e.rationale.clone())?;
        }
        if let Some(extra) = map.keys().find(|k| Attribute::from_key(k).is_none()) {
            return Err(CoreError::Schema(format!("unknown attribute {extra:?}")));
        }
        rec.global_rationale = global_rationale;
        Ok(rec)
    }

    /// Parses an `"annotations"` object keyed by attribute names.
    pub fn from_annotations(value: &serde_json::Value, global_rationale: &str) -> Result<Self> {
        let map: BTreeMap<String, AttributeEntry> =
            serde_json::from_value(value.clone()).map_err(|e| CoreError::Schema(format!("annotations: {e}")))?;
        Self::from_map(map, global_rationale.to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    annotations: BTreeMap<String, AttributeEntry>,
    #[serde(default)]
    global_rationale: String,
}

impl Serialize for AttributeRecord {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let annotations = self.entries.iter().map(|(a, e)| (a.key().to_string(), e.clone())).collect();
        RecordRepr { annotations, global_rationale: self.global_rationale.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttributeRecord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = RecordRepr::deserialize(d)?;
        AttributeRecord::from_map(repr.annotations, repr.global_rationale).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_follow_ladder() {
        assert_eq!(max_level_option(0.0), "no significant (0–31)");
        assert_eq!(max_level_option(31.0), "no significant (0–31)");
        assert_eq!(max_level_option(32.0), "very weak (31–73)");
        assert_eq!(max_level_option(74.0), "weak (74–132)");
        assert_eq!(max_level_option(200.0), "very strong (181–218)");
        assert_eq!(max_level_option(219.0), "extreme (219–255)");
    }

    #[test]
    fn compass_uses_screen_up_as_north() {
        assert_eq!(DIRECTION[compass_index(0.0, -1.0)], "north");
        assert_eq!(DIRECTION[compass_index(1.0, 0.0)], "east");
        assert_eq!(DIRECTION[compass_index(1.0, 1.0)], "southeast");
        assert_eq!(DIRECTION[compass_index(-1.0, -1.0)], "northwest");
        assert_eq!(DIRECTION[compass_index(-1.0, 0.1)], "west");
    }

    #[test]
    fn record_rejects_unknown_option() {
        let mut r = AttributeRecord::new();
        assert!(r.set(Attribute::MotionDirection, "eastish", "").is_err());
        assert!(r.set(Attribute::MotionDirection, "east", "").is_ok());
        assert!(r.set(Attribute::Morphology, NOT_APPARENT, "").is_ok());
    }

    #[test]
    fn json_round_trip() {
        let mut r = AttributeRecord::new();
        r.put(Attribute::Morphology, "banded", "a narrow band");
        r.global_rationale = "ok".into();
        let s = serde_json::to_string(&r).unwrap();
        let back: AttributeRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn option_lists_have_no_duplicates_or_not_apparent() {
        for a in Attribute::ALL {
            let mut opts = a.options().to_vec();
            assert!(!opts.contains(&NOT_APPARENT));
            opts.sort();
            opts.dedup();
            assert_eq!(opts.len(), a.options().len(), "{a}");
        }
    }
}
