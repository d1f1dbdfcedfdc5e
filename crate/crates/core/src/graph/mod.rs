//! In-memory property graph used as the knowledge base.
//!
//! Nodes are identified by `(node_class, name)`; the store hands out opaque
//! [`NodeId`]s that are never reused. Edges are directed and unique per
//! `(source, label, target)`. Labels that belong to an [`ExclusivityGroup`]
//! replace each other between the same node pair.

mod shared;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::vocab;

pub use shared::KnowledgeBase;
pub use snapshot::{EdgeView, GraphSnapshot, SnapshotError, Topology};

/// Discrete simulation time.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(u64);

impl NodeId {
    pub fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// `(node_class, name)` identity of an entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub class: String,
    pub name: String,
}

impl NodeKey {
    pub fn new(class: impl Into<String>, name: impl Into<String>) -> Self {
        Self { class: class.into(), name: name.into() }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.class, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum PropertyValue {
    Real(f64),
    Voltage(f64),
    Pose(Pose),
    Text(String),
    Flag(bool),
}

impl PropertyValue {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            PropertyValue::Real(v) if !v.is_finite() => Err(format!("real value {v} is not finite")),
            PropertyValue::Voltage(v) if !v.is_finite() || *v < 0.0 => {
                Err(format!("voltage {v} must be finite and non-negative"))
            }
            PropertyValue::Pose(p) if !p.is_finite() => Err("pose components must be finite".into()),
            _ => Ok(()),
        }
    }

    pub fn as_pose(&self) -> Option<Pose> {
        match self {
            PropertyValue::Pose(p) => Some(*p),
            _ => None,
        }
    }

    pub fn as_voltage(&self) -> Option<f64> {
        match self {
            PropertyValue::Voltage(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Property {
    #[serde(flatten)]
    pub value: PropertyValue,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeNode {
    pub id: NodeId,
    pub class: String,
    pub name: String,
    pub properties: BTreeMap<String, Property>,
}

impl KnowledgeNode {
    pub fn key(&self) -> NodeKey {
        NodeKey::new(self.class.clone(), self.name.clone())
    }

    pub fn property(&self, key: &str) -> Option<&PropertyValue> {
        self.properties.get(key).map(|p| &p.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEdge {
    pub source: NodeId,
    pub target: NodeId,
    pub label: String,
    pub tick: Tick,
}

/// Labels of which at most one may connect a given `(source, target)` pair
/// whose classes match the scope.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExclusivityGroup {
    pub labels: BTreeSet<String>,
    pub source_class: String,
    pub target_class: String,
}

impl ExclusivityGroup {
    pub fn new<I, S>(labels: I, source_class: &str, target_class: &str) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            labels: labels.into_iter().map(Into::into).collect(),
            source_class: source_class.to_string(),
            target_class: target_class.to_string(),
        }
    }

    pub fn applies(&self, label: &str, source_class: &str, target_class: &str) -> bool {
        self.source_class == source_class
            && self.target_class == target_class
            && self.labels.contains(label)
    }

    /// The relationship groups of the search and rescue vocabulary.
    pub fn defaults() -> Vec<ExclusivityGroup> {
        vec![
            ExclusivityGroup::new([vocab::AT, vocab::OUTSIDE], vocab::DRONE, vocab::HOME_STATION),
            ExclusivityGroup::new(
                [vocab::HIGH, vocab::MEDIUM, vocab::LOW],
                vocab::DRONE,
                vocab::BATTERY,
            ),
            ExclusivityGroup::new([vocab::LOOKING_FOR, vocab::LOCATED], vocab::DRONE, vocab::PERSON),
        ]
    }
}

/// Rejects group sets in which one label would resolve to two groups.
fn validate_groups(groups: &[ExclusivityGroup]) -> Result<(), GraphError> {
    for (i, g) in groups.iter().enumerate() {
        if g.labels.is_empty() {
            return Err(GraphError::InvalidGroups(format!("group {i} has no labels")));
        }
        for other in &groups[i + 1..] {
            if g.source_class == other.source_class
                && g.target_class == other.target_class
                && !g.labels.is_disjoint(&other.labels)
            {
                return Err(GraphError::InvalidGroups(format!(
                    "groups overlap on scope ({}, {})",
                    g.source_class, g.target_class
                )));
            }
        }
    }
    Ok(())
}

/// Canonical, order-independent form of a group list.
pub(crate) fn normalized_groups(groups: &[ExclusivityGroup]) -> Vec<ExclusivityGroup> {
    let mut out = groups.to_vec();
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("node {0} not found")]
    NodeNotFound(NodeId),
    #[error("node {0} not found")]
    KeyNotFound(NodeKey),
    #[error("edge {from} -[{label}]-> {to} not found")]
    EdgeNotFound { from: String, label: String, to: String },
    #[error("stale write of '{key}' on {node}: tick {tick} is older than stored tick {stored}")]
    StaleWrite { node: String, key: String, tick: Tick, stored: Tick },
    #[error("invalid exclusivity groups: {0}")]
    InvalidGroups(String),
}

/// A name-addressed graph change. Extractors emit these and the store applies
/// them as one atomic batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    UpsertNode { node: NodeKey },
    SetProperty { node: NodeKey, key: String, value: PropertyValue },
    UpsertEdge { source: NodeKey, label: String, target: NodeKey },
    RemoveEdge { source: NodeKey, label: String, target: NodeKey },
    /// Removes the edge if present; a no-op otherwise.
    ClearEdge { source: NodeKey, label: String, target: NodeKey },
}

type EdgeKey = (NodeId, String, NodeId);

#[derive(Debug, Clone)]
pub(crate) struct GraphData {
    pub(crate) nodes: BTreeMap<NodeId, KnowledgeNode>,
    pub(crate) by_key: BTreeMap<NodeKey, NodeId>,
    pub(crate) edges: BTreeMap<EdgeKey, Tick>,
    pub(crate) groups: Vec<ExclusivityGroup>,
    pub(crate) tick: Tick,
}

impl GraphData {
    fn empty(groups: Vec<ExclusivityGroup>) -> Self {
        Self {
            nodes: BTreeMap::new(),
            by_key: BTreeMap::new(),
            edges: BTreeMap::new(),
            groups,
            tick: 0,
        }
    }
}

/// The mutable store. All writes go through `&mut self`, which gives the
/// single-writer discipline; readers work on [`GraphSnapshot`]s.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    data: GraphData,
    next_id: u64,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeGraph {
    /// Empty graph with the default exclusivity groups.
    pub fn new() -> Self {
        Self { data: GraphData::empty(ExclusivityGroup::defaults()), next_id: 0 }
    }

    pub fn with_groups(groups: Vec<ExclusivityGroup>) -> Result<Self, GraphError> {
        validate_groups(&groups)?;
        Ok(Self { data: GraphData::empty(groups), next_id: 0 })
    }

    /// Editable copy of a snapshot. Node ids are preserved.
    pub fn from_snapshot(snapshot: &GraphSnapshot) -> Self {
        let data = snapshot.data().clone();
        let next_id = data.nodes.keys().next_back().map_or(0, |id| id.0 + 1);
        Self { data, next_id }
    }

    pub fn groups(&self) -> &[ExclusivityGroup] {
        &self.data.groups
    }

    pub fn node_count(&self) -> usize {
        self.data.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.data.edges.len()
    }

    /// Highest tick of any write so far.
    pub fn tick(&self) -> Tick {
        self.data.tick
    }

    pub fn node(&self, id: NodeId) -> Option<&KnowledgeNode> {
        self.data.nodes.get(&id)
    }

    pub fn find(&self, class: &str, name: &str) -> Option<NodeId> {
        self.data.by_key.get(&NodeKey::new(class, name)).copied()
    }

    pub fn property(&self, id: NodeId, key: &str) -> Option<&Property> {
        self.data.nodes.get(&id)?.properties.get(key)
    }

    pub fn has_edge(&self, source: NodeId, label: &str, target: NodeId) -> bool {
        self.data.edges.contains_key(&(source, label.to_string(), target))
    }

    pub fn edge_tick(&self, source: NodeId, label: &str, target: NodeId) -> Option<Tick> {
        self.data.edges.get(&(source, label.to_string(), target)).copied()
    }

    /// All edges in `(source, label, target)` id order.
    pub fn edges(&self) -> impl Iterator<Item = KnowledgeEdge> + '_ {
        self.data.edges.iter().map(|((s, l, t), tick)| KnowledgeEdge {
            source: *s,
            target: *t,
            label: l.clone(),
            tick: *tick,
        })
    }

    /// Outgoing edges of `source` carrying `label`.
    pub fn targets(&self, source: NodeId, label: &str) -> Vec<NodeId> {
        self.data
            .edges
            .keys()
            .filter(|(s, l, _)| *s == source && l == label)
            .map(|(_, _, t)| *t)
            .collect()
    }

    pub fn upsert_node(&mut self, class: &str, name: &str) -> Result<NodeId, GraphError> {
        if name.is_empty() {
            return Err(GraphError::InvalidArgument("node name must be non-empty".into()));
        }
        if class.is_empty() {
            return Err(GraphError::InvalidArgument("node class must be non-empty".into()));
        }
        let key = NodeKey::new(class, name);
        if let Some(id) = self.data.by_key.get(&key) {
            return Ok(*id);
        }
        let id = NodeId(self.next_id);
        self.next_id += 1;
        self.data.nodes.insert(
            id,
            KnowledgeNode {
                id,
                class: class.to_string(),
                name: name.to_string(),
                properties: BTreeMap::new(),
            },
        );
        self.data.by_key.insert(key, id);
        Ok(id)
    }

    pub fn set_property(
        &mut self,
        id: NodeId,
        key: &str,
        value: PropertyValue,
        tick: Tick,
    ) -> Result<(), GraphError> {
        if key.is_empty() {
            return Err(GraphError::InvalidArgument("property key must be non-empty".into()));
        }
        value.validate().map_err(GraphError::InvalidArgument)?;
        let node = self.data.nodes.get_mut(&id).ok_or(GraphError::NodeNotFound(id))?;
        if let Some(existing) = node.properties.get(key) {
            if tick < existing.tick {
                return Err(GraphError::StaleWrite {
                    node: format!("{}/{}", node.class, node.name),
                    key: key.to_string(),
                    tick,
                    stored: existing.tick,
                });
            }
        }
        node.properties.insert(key.to_string(), Property { value, tick });
        self.data.tick = self.data.tick.max(tick);
        Ok(())
    }

    pub fn upsert_edge(
        &mut self,
        source: NodeId,
        label: &str,
        target: NodeId,
        tick: Tick,
    ) -> Result<(), GraphError> {
        if label.is_empty() {
            return Err(GraphError::InvalidArgument("edge label must be non-empty".into()));
        }
        if source == target {
            return Err(GraphError::InvalidArgument(format!("self-loop on node {source}")));
        }
        let src_class = self.data.nodes.get(&source).ok_or(GraphError::NodeNotFound(source))?.class.clone();
        let tgt_class = self.data.nodes.get(&target).ok_or(GraphError::NodeNotFound(target))?.class.clone();

        let rivals: Vec<String> = self
            .data
            .groups
            .iter()
            .filter(|g| g.applies(label, &src_class, &tgt_class))
            .flat_map(|g| g.labels.iter().filter(|l| l.as_str() != label).cloned())
            .collect();
        for rival in rivals {
            self.data.edges.remove(&(source, rival, target));
        }
        self.data.edges.insert((source, label.to_string(), target), tick);
        self.data.tick = self.data.tick.max(tick);
        Ok(())
    }

    pub fn remove_node(&mut self, id: NodeId) -> Result<(), GraphError> {
        let node = self.data.nodes.remove(&id).ok_or(GraphError::NodeNotFound(id))?;
        self.data.by_key.remove(&node.key());
        self.data.edges.retain(|(s, _, t), _| *s != id && *t != id);
        Ok(())
    }

    pub fn remove_edge(&mut self, source: NodeId, label: &str, target: NodeId) -> Result<(), GraphError> {
        match self.data.edges.remove(&(source, label.to_string(), target)) {
            Some(_) => Ok(()),
            None => Err(GraphError::EdgeNotFound {
                from: self.describe(source),
                label: label.to_string(),
                to: self.describe(target),
            }),
        }
    }

    /// Immutable deep copy of the current state.
    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot::from_data(Arc::new(self.data.clone()))
    }

    /// Applies every mutation or none of them.
    pub fn apply_batch(&mut self, mutations: &[Mutation], tick: Tick) -> Result<(), GraphError> {
        let mut scratch = self.clone();
        for m in mutations {
            scratch.apply_one(m, tick)?;
        }
        *self = scratch;
        Ok(())
    }

    fn apply_one(&mut self, mutation: &Mutation, tick: Tick) -> Result<(), GraphError> {
        match mutation {
            Mutation::UpsertNode { node } => self.upsert_node(&node.class, &node.name).map(|_| ()),
            Mutation::SetProperty { node, key, value } => {
                let id = self.require(node)?;
                self.set_property(id, key, value.clone(), tick)
            }
            Mutation::UpsertEdge { source, label, target } => {
                let (s, t) = (self.require(source)?, self.require(target)?);
                self.upsert_edge(s, label, t, tick)
            }
            Mutation::RemoveEdge { source, label, target } => {
                let (s, t) = (self.require(source)?, self.require(target)?);
                self.remove_edge(s, label, t)
            }
            Mutation::ClearEdge { source, label, target } => {
                if let (Some(s), Some(t)) = (self.find_key(source), self.find_key(target)) {
                    self.data.edges.remove(&(s, label.clone(), t));
                }
                Ok(())
            }
        }
    }

    fn find_key(&self, key: &NodeKey) -> Option<NodeId> {
        self.data.by_key.get(key).copied()
    }

    fn require(&self, key: &NodeKey) -> Result<NodeId, GraphError> {
        self.find_key(key).ok_or_else(|| GraphError::KeyNotFound(key.clone()))
    }

    fn describe(&self, id: NodeId) -> String {
        self.data
            .nodes
            .get(&id)
            .map_or_else(|| id.to_string(), |n| format!("{}/{}", n.class, n.name))
    }
}
