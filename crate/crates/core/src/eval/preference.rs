//! Pairwise human-preference aggregation.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceDimension {
    VisualQuality,
    MotionQuality,
    TextVideoAlignment,
}

impl PreferenceDimension {
    pub const ALL: [PreferenceDimension; 3] = [
        PreferenceDimension::VisualQuality,
        PreferenceDimension::MotionQuality,
        PreferenceDimension::TextVideoAlignment,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Ours,
    Baseline,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceVote {
    pub item_id: String,
    pub dimension: PreferenceDimension,
    pub choice: Choice,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTally {
    pub ours: u64,
    pub baseline: u64,
    pub ties: u64,
}

impl PreferenceTally {
    /// `ours / (ours + baseline)`; ties are left out, and with no decisive
    /// vote the fraction is undefined.
    pub fn fraction(&self) -> Option<f64> {
        let decisive = self.ours + self.baseline;
        (decisive > 0).then(|| self.ours as f64 / decisive as f64)
    }
}

/// Tallies per dimension. Only dimensions that received votes appear.
pub fn aggregate_preferences(votes: &[PreferenceVote]) -> BTreeMap<PreferenceDimension, PreferenceTally> {
    let mut out: BTreeMap<PreferenceDimension, PreferenceTally> = BTreeMap::new();
    for v in votes {
        let t = out.entry(v.dimension).or_default();
        match v.choice {
            Choice::Ours => t.ours += 1,
            Choice::Baseline => t.baseline += 1,
            Choice::Tie => t.ties += 1,
        }
    }
    out
}

/// Percentage with one decimal, e.g. `0.62` → `62.0%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

/// Reads a votes CSV with header `item_id,dimension,choice`.
pub fn read_votes(reader: impl Read) -> Result<Vec<PreferenceVote>, EvalError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(|e| EvalError::Parse(e.to_string())))
        .collect()
}

pub fn write_votes(votes: &[PreferenceVote]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for v in votes {
        w.serialize(v).map_err(|e| EvalError::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// One line per dimension: `dimension,ours,baseline,ties,percent` with an
/// empty percent when undefined.
pub fn render_preferences(tallies: &BTreeMap<PreferenceDimension, PreferenceTally>) -> String {
    let mut out = String::from("dimension,ours,baseline,ties,percent\n");
    for (dim, t) in tallies {
        let name = serde_json::to_value(dim).expect("enum serializes");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            name.as_str().unwrap(),
            t.ours,
            t.baseline,
            t.ties,
            t.fraction().map(format_percent).unwrap_or_default()
        ));
    }
    out
}
