//! Knowledge retrievers: pure queries over graph snapshots.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::graph::{EdgeView, GraphSnapshot, NodeKey, Tick};
use crate::vocab;

/// Edge filter; every absent field is a wildcard.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgePattern {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_name: Option<String>,
}

impl EdgePattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn source_class(mut self, v: &str) -> Self {
        self.source_class = Some(v.into());
        self
    }

    pub fn source_name(mut self, v: &str) -> Self {
        self.source_name = Some(v.into());
        self
    }

    pub fn label(mut self, v: &str) -> Self {
        self.label = Some(v.into());
        self
    }

    pub fn target_class(mut self, v: &str) -> Self {
        self.target_class = Some(v.into());
        self
    }

    pub fn target_name(mut self, v: &str) -> Self {
        self.target_name = Some(v.into());
        self
    }

    pub fn is_unconstrained(&self) -> bool {
        self == &EdgePattern::default()
    }

    pub fn matches(&self, e: &EdgeView<'_>) -> bool {
        let ok = |f: &Option<String>, v: &str| f.as_deref().is_none_or(|f| f == v);
        ok(&self.source_class, &e.source.class)
            && ok(&self.source_name, &e.source.name)
            && ok(&self.label, e.label)
            && ok(&self.target_class, &e.target.class)
            && ok(&self.target_name, &e.target.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeMatch {
    pub source_class: String,
    pub source_name: String,
    pub label: String,
    pub target_class: String,
    pub target_name: String,
    pub tick: Tick,
}

impl EdgeMatch {
    pub fn source(&self) -> NodeKey {
        NodeKey::new(&self.source_class, &self.source_name)
    }

    pub fn target(&self) -> NodeKey {
        NodeKey::new(&self.target_class, &self.target_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub tick: Tick,
    pub edges: Vec<EdgeMatch>,
}

impl QueryResult {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }
}

/// All edges satisfying `pattern`, ordered by
/// `(source_class, source_name, label, target_class, target_name)`.
pub fn match_edges(snapshot: &GraphSnapshot, pattern: &EdgePattern) -> QueryResult {
    let edges = snapshot
        .sorted_edges()
        .into_iter()
        .filter(|e| pattern.matches(e))
        .map(|e| EdgeMatch {
            source_class: e.source.class.clone(),
            source_name: e.source.name.clone(),
            label: e.label.to_string(),
            target_class: e.target.class.clone(),
            target_name: e.target.name.clone(),
            tick: e.tick,
        })
        .collect();
    QueryResult { tick: snapshot.tick(), edges }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BatteryLevel {
    High,
    Medium,
    Low,
    Unknown,
}

impl BatteryLevel {
    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            vocab::HIGH => Some(Self::High),
            vocab::MEDIUM => Some(Self::Medium),
            vocab::LOW => Some(Self::Low),
            _ => None,
        }
    }
}

impl fmt::Display for BatteryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Level carried by the drone's battery edge, `Unknown` before the first
/// battery reading.
pub fn battery_level(snapshot: &GraphSnapshot, drone: &str) -> BatteryLevel {
    let Some(d) = snapshot.find(vocab::DRONE, drone) else {
        return BatteryLevel::Unknown;
    };
    snapshot
        .edges()
        .filter(|e| e.source.id == d.id && e.target.class == vocab::BATTERY)
        .find_map(|e| BatteryLevel::from_label(e.label))
        .unwrap_or(BatteryLevel::Unknown)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InspectionStatus {
    Searching,
    Located { drone: String, location: Pose },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("inconsistent state: {0}")]
    InconsistentState(String),
}

/// `Located` as soon as any drone has a "located" edge; with several
/// locators the lexicographically smallest drone name is reported.
pub fn inspection_status(snapshot: &GraphSnapshot) -> Result<InspectionStatus, QueryError> {
    let first = snapshot
        .edges()
        .filter(|e| e.label == vocab::LOCATED && e.source.class == vocab::DRONE && e.target.class == vocab::PERSON)
        .min_by(|a, b| (&a.source.name, &a.target.name).cmp(&(&b.source.name, &b.target.name)));
    let Some(edge) = first else {
        return Ok(InspectionStatus::Searching);
    };
    let location = edge.target.property(vocab::LOCATION).and_then(|v| v.as_pose()).ok_or_else(|| {
        QueryError::InconsistentState(format!(
            "{} located {} but the person has no location",
            edge.source.name, edge.target.name
        ))
    })?;
    Ok(InspectionStatus::Located { drone: edge.source.name.clone(), location })
}

/// True iff the directed edge `a close b` exists.
pub fn are_close(snapshot: &GraphSnapshot, a: &str, b: &str) -> bool {
    snapshot.has_edge(&NodeKey::new(vocab::DRONE, a), vocab::CLOSE, &NodeKey::new(vocab::DRONE, b))
}
