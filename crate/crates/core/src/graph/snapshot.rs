use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{normalized_groups, ExclusivityGroup, GraphData, KnowledgeGraph, KnowledgeNode, NodeId, NodeKey, Property, Tick};

/// Immutable, consistent view of a graph at one point in time.
///
/// Cloning is cheap; the underlying data is shared and never mutated.
#[derive(Debug, Clone)]
pub struct GraphSnapshot {
    data: Arc<GraphData>,
}

/// Borrowed edge with resolved endpoints.
#[derive(Debug, Clone, Copy)]
pub struct EdgeView<'a> {
    pub source: &'a KnowledgeNode,
    pub label: &'a str,
    pub target: &'a KnowledgeNode,
    pub tick: Tick,
}

/// Structure of a graph with properties and timestamps stripped.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: BTreeSet<NodeKey>,
    pub edges: BTreeSet<(NodeKey, String, NodeKey)>,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("malformed snapshot document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid record {record}: {reason}")]
    InvalidRecord { record: String, reason: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    class: String,
    name: String,
    #[serde(default)]
    properties: BTreeMap<String, Property>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    source_class: String,
    source_name: String,
    label: String,
    target_class: String,
    target_name: String,
    tick: Tick,
}

#[derive(Serialize)]
struct Document {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    nodes: Vec<serde_json::Value>,
    edges: Vec<serde_json::Value>,
}

impl GraphSnapshot {
    pub(crate) fn from_data(data: Arc<GraphData>) -> Self {
        Self { data }
    }

    pub(crate) fn data(&self) -> &GraphData {
        &self.data
    }

    /// Empty snapshot with the default exclusivity groups.
    pub fn empty() -> Self {
        KnowledgeGraph::new().snapshot()
    }

    pub fn node_count(&self) -> usize {
        self.data.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.data.edges.len()
    }

    /// Highest write tick contained in the snapshot.
    pub fn tick(&self) -> Tick {
        self.data.tick
    }

    pub fn groups(&self) -> &[ExclusivityGroup] {
        &self.data.groups
    }

    pub fn node(&self, id: NodeId) -> Option<&KnowledgeNode> {
        self.data.nodes.get(&id)
    }

    pub fn find(&self, class: &str, name: &str) -> Option<&KnowledgeNode> {
        let id = self.data.by_key.get(&NodeKey::new(class, name))?;
        self.data.nodes.get(id)
    }

    /// Nodes ordered by `(class, name)`.
    pub fn nodes(&self) -> impl Iterator<Item = &KnowledgeNode> + '_ {
        self.data.by_key.values().map(move |id| &self.data.nodes[id])
    }

    pub fn nodes_of_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a KnowledgeNode> + 'a {
        self.nodes().filter(move |n| n.class == class)
    }

    /// Edges in id order. Use [`GraphSnapshot::sorted_edges`] for name order.
    pub fn edges(&self) -> impl Iterator<Item = EdgeView<'_>> + '_ {
        self.data.edges.iter().map(move |((s, l, t), tick)| EdgeView {
            source: &self.data.nodes[s],
            label: l,
            target: &self.data.nodes[t],
            tick: *tick,
        })
    }

    /// Edges ordered by `(source_class, source_name, label, target_class, target_name)`.
    pub fn sorted_edges(&self) -> Vec<EdgeView<'_>> {
        let mut out: Vec<_> = self.edges().collect();
        out.sort_by(|a, b| edge_order(a).cmp(&edge_order(b)));
        out
    }

    pub fn has_edge(&self, source: &NodeKey, label: &str, target: &NodeKey) -> bool {
        match (self.data.by_key.get(source), self.data.by_key.get(target)) {
            (Some(s), Some(t)) => self.data.edges.contains_key(&(*s, label.to_string(), *t)),
            _ => false,
        }
    }

    pub fn topology(&self) -> Topology {
        Topology {
            nodes: self.data.by_key.keys().cloned().collect(),
            edges: self
                .edges()
                .map(|e| (e.source.key(), e.label.to_string(), e.target.key()))
                .collect(),
        }
    }

    /// Lists every violated store invariant; empty when the graph is valid.
    pub fn check_invariants(&self) -> Vec<String> {
        let d = &self.data;
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for (id, node) in &d.nodes {
            if node.id != *id {
                problems.push(format!("node {id} stored under the wrong id"));
            }
            if node.name.is_empty() {
                problems.push(format!("node {id} has an empty name"));
            }
            if !seen.insert(node.key()) {
                problems.push(format!("duplicate entity {}", node.key()));
            }
            if d.by_key.get(&node.key()) != Some(id) {
                problems.push(format!("index out of sync for {}", node.key()));
            }
            for (k, p) in &node.properties {
                if let Err(e) = p.value.validate() {
                    problems.push(format!("{}.{k}: {e}", node.key()));
                }
            }
        }
        if d.by_key.len() != d.nodes.len() {
            problems.push("entity index size differs from node count".into());
        }
        for (s, l, t) in d.edges.keys() {
            if !d.nodes.contains_key(s) || !d.nodes.contains_key(t) {
                problems.push(format!("edge {s} -[{l}]-> {t} has a missing endpoint"));
            }
            if s == t {
                problems.push(format!("self-loop on {s}"));
            }
        }
        for g in &d.groups {
            let mut per_pair: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
            for (s, l, t) in d.edges.keys() {
                let (Some(sn), Some(tn)) = (d.nodes.get(s), d.nodes.get(t)) else { continue };
                if g.applies(l, &sn.class, &tn.class) {
                    *per_pair.entry((*s, *t)).or_default() += 1;
                }
            }
            for ((s, t), n) in per_pair {
                if n > 1 {
                    problems.push(format!("{n} edges of group {:?} between {s} and {t}", g.labels));
                }
            }
        }
        problems
    }

    fn document(&self, keep_ticks: bool) -> Document {
        let tick = |t: Tick| if keep_ticks { t } else { 0 };
        let nodes = self
            .nodes()
            .map(|n| NodeRecord {
                class: n.class.clone(),
                name: n.name.clone(),
                properties: n
                    .properties
                    .iter()
                    .map(|(k, p)| (k.clone(), Property { value: p.value.clone(), tick: tick(p.tick) }))
                    .collect(),
            })
            .collect();
        let edges = self
            .sorted_edges()
            .into_iter()
            .map(|e| EdgeRecord {
                source_class: e.source.class.clone(),
                source_name: e.source.name.clone(),
                label: e.label.to_string(),
                target_class: e.target.class.clone(),
                target_name: e.target.name.clone(),
                tick: tick(e.tick),
            })
            .collect();
        Document { nodes, edges }
    }

    /// Byte-stable JSON: nodes sorted by `(class, name)`, edges by
    /// `(source, label, target)`, property keys sorted.
    pub fn to_json(&self) -> String {
        render(&self.document(true))
    }

    /// Same as [`GraphSnapshot::to_json`] with every tick zeroed.
    pub fn to_json_without_ticks(&self) -> String {
        render(&self.document(false))
    }

    /// Structural and property equality, ignoring timestamps.
    pub fn same_content(&self, other: &GraphSnapshot) -> bool {
        self.to_json_without_ticks() == other.to_json_without_ticks()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph kg {\n  node [shape=box];\n");
        for n in self.nodes() {
            let id = dot_escape(&format!("{}/{}", n.class, n.name));
            let _ = writeln!(out, "  \"{id}\" [label=\"{id}\"];");
        }
        for e in self.sorted_edges() {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                dot_escape(&format!("{}/{}", e.source.class, e.source.name)),
                dot_escape(&format!("{}/{}", e.target.class, e.target.name)),
                dot_escape(e.label)
            );
        }
        out.push_str("}\n");
        out
    }

    /// Parses the JSON form using the default exclusivity groups.
    pub fn from_json(text: &str) -> Result<Self, SnapshotError> {
        Self::from_json_with_groups(text, ExclusivityGroup::defaults())
    }

    pub fn from_json_with_groups(text: &str, groups: Vec<ExclusivityGroup>) -> Result<Self, SnapshotError> {
        let raw: RawDocument = serde_json::from_str(text)?;
        let mut graph = KnowledgeGraph::with_groups(groups).map_err(|e| SnapshotError::InvalidRecord {
            record: "exclusivity groups".into(),
            reason: e.to_string(),
        })?;
        let invalid = |record: String, reason: String| SnapshotError::InvalidRecord { record, reason };

        for (i, value) in raw.nodes.into_iter().enumerate() {
            let rec: NodeRecord =
                serde_json::from_value(value).map_err(|e| invalid(format!("nodes[{i}]"), e.to_string()))?;
            let label = format!("nodes[{i}] ({}/{})", rec.class, rec.name);
            if graph.find(&rec.class, &rec.name).is_some() {
                return Err(invalid(label, "duplicate entity".into()));
            }
            let id = graph.upsert_node(&rec.class, &rec.name).map_err(|e| invalid(label.clone(), e.to_string()))?;
            for (key, prop) in rec.properties {
                graph
                    .set_property(id, &key, prop.value, prop.tick)
                    .map_err(|e| invalid(label.clone(), e.to_string()))?;
            }
        }

        for (i, value) in raw.edges.into_iter().enumerate() {
            let rec: EdgeRecord =
                serde_json::from_value(value).map_err(|e| invalid(format!("edges[{i}]"), e.to_string()))?;
            let label = format!(
                "edges[{i}] ({}/{} -[{}]-> {}/{})",
                rec.source_class, rec.source_name, rec.label, rec.target_class, rec.target_name
            );
            let s = graph
                .find(&rec.source_class, &rec.source_name)
                .ok_or_else(|| invalid(label.clone(), "source node not declared".into()))?;
            let t = graph
                .find(&rec.target_class, &rec.target_name)
                .ok_or_else(|| invalid(label.clone(), "target node not declared".into()))?;
            if graph.has_edge(s, &rec.label, t) {
                return Err(invalid(label, "duplicate edge".into()));
            }
            let conflict = graph
                .groups()
                .iter()
                .filter(|g| g.applies(&rec.label, &rec.source_class, &rec.target_class))
                .flat_map(|g| g.labels.iter())
                .find(|l| l.as_str() != rec.label && graph.has_edge(s, l, t))
                .cloned();
            if let Some(rival) = conflict {
                return Err(invalid(label, format!("conflicts with exclusive edge '{rival}'")));
            }
            graph.upsert_edge(s, &rec.label, t, rec.tick).map_err(|e| invalid(label, e.to_string()))?;
        }
        Ok(graph.snapshot())
    }

    /// True when both snapshots declare the same exclusivity groups.
    pub fn compatible_with(&self, other: &GraphSnapshot) -> bool {
        normalized_groups(self.groups()) == normalized_groups(other.groups())
    }
}

fn edge_order<'a>(e: &EdgeView<'a>) -> (&'a str, &'a str, &'a str, &'a str, &'a str) {
    (&e.source.class, &e.source.name, e.label, &e.target.class, &e.target.name)
}

fn render(doc: &Document) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("snapshot documents always serialize");
    s.push('\n');
    s
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::graph::PropertyValue;
    use crate::vocab;

    fn sample() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        let d = g.upsert_node(vocab::DRONE, "drone_0").unwrap();
        let b = g.upsert_node(vocab::BATTERY, "battery_0").unwrap();
        g.set_property(d, vocab::POSE, PropertyValue::Pose(Pose::new(1.0, 2.0, 3.0, 0.5)), 2).unwrap();
        g.set_property(b, vocab::VOLTAGE, PropertyValue::Voltage(12.6), 1).unwrap();
        g.upsert_edge(d, vocab::HIGH, b, 1).unwrap();
        g
    }

    #[test]
    fn empty_snapshot() {
        let s = KnowledgeGraph::new().snapshot();
        assert_eq!((s.node_count(), s.edge_count()), (0, 0));
        assert_eq!(s.to_json(), "{\n  \"nodes\": [],\n  \"edges\": []\n}\n");
        assert_eq!(s.to_dot(), "digraph kg {\n  node [shape=box];\n}\n");
    }

    #[test]
    fn snapshot_ignores_later_mutation() {
        let mut g = sample();
        let s = g.snapshot();
        let d = g.find(vocab::DRONE, "drone_0").unwrap();
        g.remove_node(d).unwrap();
        assert_eq!(s.node_count(), 2);
        assert_eq!(s.edge_count(), 1);
    }

    #[test]
    fn json_layout_is_stable() {
        let json = sample().snapshot().to_json();
        let expected = r#"{
  "nodes": [
    {
      "class": "Battery",
      "name": "battery_0",
      "properties": {
        "voltage": {
          "type": "voltage",
          "value": 12.6,
          "tick": 1
        }
      }
    },
    {
      "class": "Drone",
      "name": "drone_0",
      "properties": {
        "pose": {
          "type": "pose",
          "value": {
            "x": 1.0,
            "y": 2.0,
            "z": 3.0,
            "yaw": 0.5
          },
          "tick": 2
        }
      }
    }
  ],
  "edges": [
    {
      "source_class": "Drone",
      "source_name": "drone_0",
      "label": "High",
      "target_class": "Battery",
      "target_name": "battery_0",
      "tick": 1
    }
  ]
}
"#;
        assert_eq!(json, expected);
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let s = sample().snapshot();
        let back = GraphSnapshot::from_json(&s.to_json()).unwrap();
        assert_eq!(back.to_json(), s.to_json());
        assert_eq!(back.tick(), 2);
        assert_eq!(back.to_dot(), s.to_dot());
    }

    #[test]
    fn malformed_records_are_named() {
        let missing_target = r#"{"nodes":[{"class":"Drone","name":"d"}],
            "edges":[{"source_class":"Drone","source_name":"d","label":"close",
                      "target_class":"Drone","target_name":"e","tick":0}]}"#;
        let err = GraphSnapshot::from_json(missing_target).unwrap_err();
        assert!(err.to_string().contains("edges[0]"), "{err}");

        let bad_node = r#"{"nodes":[{"class":"Drone","name":"d"},{"class":"Drone"}],"edges":[]}"#;
        let err = GraphSnapshot::from_json(bad_node).unwrap_err();
        assert!(err.to_string().contains("nodes[1]"), "{err}");

        let dup = r#"{"nodes":[{"class":"Drone","name":"d"},{"class":"Drone","name":"d"}],"edges":[]}"#;
        assert!(GraphSnapshot::from_json(dup).unwrap_err().to_string().contains("duplicate"));

        let exclusive = r#"{"nodes":[{"class":"Drone","name":"d"},{"class":"Battery","name":"b"}],
            "edges":[
              {"source_class":"Drone","source_name":"d","label":"High","target_class":"Battery","target_name":"b","tick":0},
              {"source_class":"Drone","source_name":"d","label":"Low","target_class":"Battery","target_name":"b","tick":0}]}"#;
        let err = GraphSnapshot::from_json(exclusive).unwrap_err();
        assert!(err.to_string().contains("edges[1]"), "{err}");

        assert!(matches!(GraphSnapshot::from_json("[1,2"), Err(SnapshotError::Parse(_))));
    }

    #[test]
    fn dot_uses_class_name_labels() {
        let dot = sample().snapshot().to_dot();
        assert!(dot.contains("\"Drone/drone_0\" [label=\"Drone/drone_0\"];"));
        assert!(dot.contains("\"Drone/drone_0\" -> \"Battery/battery_0\" [label=\"High\"];"));
    }

    #[test]
    fn content_comparison_ignores_ticks() {
        let a = sample().snapshot();
        let mut g = sample();
        let d = g.find(vocab::DRONE, "drone_0").unwrap();
        let b = g.find(vocab::BATTERY, "battery_0").unwrap();
        g.upsert_edge(d, vocab::HIGH, b, 40).unwrap();
        assert!(a.same_content(&g.snapshot()));
        assert_ne!(a.to_json(), g.snapshot().to_json());
        assert_eq!(a.topology(), g.snapshot().topology());
    }
}
