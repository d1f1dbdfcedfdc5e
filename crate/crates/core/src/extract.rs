//! Knowledge extractors: topic data in, graph mutations out.
//!
//! Every extractor first computes its mutations against the current graph and
//! then commits them through [`KnowledgeGraph::apply_batch`], so a rejected
//! message leaves the graph untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{InvalidMessage, NavStatus, Payload, TopicMessage, TopicName};
use crate::geometry::Pose;
use crate::graph::{GraphError, GraphSnapshot, KnowledgeGraph, Mutation, NodeKey, PropertyValue, Tick};
use crate::vocab;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub battery_high_fraction: f64,
    pub battery_medium_fraction: f64,
    pub close_distance: f64,
    pub at_home_radius: f64,
    pub detection_radius: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            battery_high_fraction: 0.6,
            battery_medium_fraction: 0.3,
            close_distance: 5.0,
            at_home_radius: 1.0,
            detection_radius: 3.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let in_unit = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        if !in_unit(self.battery_high_fraction) {
            out.push(format!("battery_high_fraction {} must lie in (0, 1]", self.battery_high_fraction));
        }
        if !in_unit(self.battery_medium_fraction) || self.battery_medium_fraction >= 1.0 {
            out.push(format!("battery_medium_fraction {} must lie in (0, 1)", self.battery_medium_fraction));
        }
        if self.battery_high_fraction <= self.battery_medium_fraction {
            out.push("battery_high_fraction must exceed battery_medium_fraction".into());
        }
        for (name, v) in [
            ("close_distance", self.close_distance),
            ("at_home_radius", self.at_home_radius),
            ("detection_radius", self.detection_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} {v} must be positive"));
            }
        }
        out
    }

    /// Battery edge label for a charge ratio (voltage / full voltage).
    pub fn battery_label(&self, ratio: f64) -> &'static str {
        if ratio >= self.battery_high_fraction {
            vocab::HIGH
        } else if ratio >= self.battery_medium_fraction {
            vocab::MEDIUM
        } else {
            vocab::LOW
        }
    }
}

/// Describes one registered extractor, topic-driven or graph-driven.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractorBinding {
    pub topic: Option<TopicName>,
    pub mapping: String,
    pub agent: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error(transparent)]
    InvalidMessage(#[from] InvalidMessage),
    #[error("message for agent '{got}' delivered to the extractor of '{expected}'")]
    ForeignAgent { expected: String, got: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// The topic-driven extractors of one drone, writing into that drone's local
/// graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentExtractor {
    pub agent: String,
    pub battery: String,
    pub home: String,
    pub person: String,
    pub full_voltage: f64,
    pub thresholds: Thresholds,
}

fn drone(name: &str) -> NodeKey {
    NodeKey::new(vocab::DRONE, name)
}

fn upsert_edge(source: &NodeKey, label: &str, target: &NodeKey) -> Mutation {
    Mutation::UpsertEdge { source: source.clone(), label: label.to_string(), target: target.clone() }
}

impl AgentExtractor {
    pub fn drone_key(&self) -> NodeKey {
        drone(&self.agent)
    }

    pub fn battery_key(&self) -> NodeKey {
        NodeKey::new(vocab::BATTERY, &self.battery)
    }

    pub fn home_key(&self) -> NodeKey {
        NodeKey::new(vocab::HOME_STATION, &self.home)
    }

    pub fn person_key(&self) -> NodeKey {
        NodeKey::new(vocab::PERSON, &self.person)
    }

    pub fn bindings(&self) -> Vec<ExtractorBinding> {
        let bind = |topic: TopicName, mapping: &str| ExtractorBinding {
            topic: Some(topic),
            mapping: mapping.to_string(),
            agent: self.agent.clone(),
        };
        vec![
            bind(TopicName::pose(&self.agent), "pose -> Drone.pose, Drone at|outside HomeStation"),
            bind(TopicName::battery(&self.agent), "voltage -> Battery.voltage, Drone High|Medium|Low Battery"),
            bind(TopicName::nav_status(&self.agent), "status -> Drone is Status"),
            bind(TopicName::detection(&self.agent), "found -> Drone located Person, Person.location"),
        ]
    }

    /// Entities known before any sensor data: the home station with its
    /// location, the status vocabulary, the person being searched for.
    pub fn bootstrap(&self, home_location: Pose) -> Vec<Mutation> {
        let mut m = vec![
            Mutation::UpsertNode { node: self.drone_key() },
            Mutation::UpsertNode { node: self.home_key() },
            Mutation::SetProperty {
                node: self.home_key(),
                key: vocab::LOCATION.into(),
                value: PropertyValue::Pose(home_location),
            },
            Mutation::UpsertNode { node: self.person_key() },
        ];
        for status in vocab::STATUS_VALUES {
            m.push(Mutation::UpsertNode { node: NodeKey::new(vocab::STATUS, status) });
        }
        m.push(upsert_edge(&self.drone_key(), vocab::LOOKING_FOR, &self.person_key()));
        m
    }

    pub fn extract_pose(&self, graph: &KnowledgeGraph, pose: Pose) -> Vec<Mutation> {
        let d = self.drone_key();
        let mut m = vec![
            Mutation::UpsertNode { node: d.clone() },
            Mutation::SetProperty { node: d.clone(), key: vocab::POSE.into(), value: PropertyValue::Pose(pose) },
        ];
        let home = graph
            .find(vocab::HOME_STATION, &self.home)
            .and_then(|id| graph.property(id, vocab::LOCATION))
            .and_then(|p| p.value.as_pose());
        if let Some(home) = home {
            let label = if pose.horizontal_distance(&home) <= self.thresholds.at_home_radius {
                vocab::AT
            } else {
                vocab::OUTSIDE
            };
            m.push(upsert_edge(&d, label, &self.home_key()));
        }
        m
    }

    pub fn extract_battery(&self, voltage: f64) -> Vec<Mutation> {
        let (d, b) = (self.drone_key(), self.battery_key());
        let label = self.thresholds.battery_label(voltage / self.full_voltage);
        vec![
            Mutation::UpsertNode { node: d.clone() },
            Mutation::UpsertNode { node: b.clone() },
            Mutation::SetProperty { node: b.clone(), key: vocab::VOLTAGE.into(), value: PropertyValue::Voltage(voltage) },
            upsert_edge(&d, label, &b),
        ]
    }

    pub fn extract_nav_status(&self, graph: &KnowledgeGraph, status: NavStatus) -> Vec<Mutation> {
        let d = self.drone_key();
        let target = NodeKey::new(vocab::STATUS, status.as_str());
        let mut m = vec![Mutation::UpsertNode { node: d.clone() }, Mutation::UpsertNode { node: target.clone() }];
        // "is" is exclusive per drone regardless of target
        if let Some(id) = graph.find(vocab::DRONE, &self.agent) {
            for t in graph.targets(id, vocab::IS) {
                let node = graph.node(t).expect("edge targets exist");
                if node.name != status.as_str() || node.class != vocab::STATUS {
                    m.push(Mutation::RemoveEdge { source: d.clone(), label: vocab::IS.into(), target: node.key() });
                }
            }
        }
        m.push(upsert_edge(&d, vocab::IS, &target));
        m
    }

    pub fn extract_detection(&self, found: bool, location: Pose) -> Vec<Mutation> {
        if !found {
            return Vec::new();
        }
        let (d, p) = (self.drone_key(), self.person_key());
        vec![
            Mutation::UpsertNode { node: d.clone() },
            Mutation::UpsertNode { node: p.clone() },
            Mutation::SetProperty { node: p.clone(), key: vocab::LOCATION.into(), value: PropertyValue::Pose(location) },
            upsert_edge(&d, vocab::LOCATED, &p),
        ]
    }

    /// Mutations for one message, computed against the current graph.
    pub fn mutations(&self, graph: &KnowledgeGraph, msg: &TopicMessage) -> Result<Vec<Mutation>, ExtractError> {
        msg.validate()?;
        if msg.payload.agent() != self.agent {
            return Err(ExtractError::ForeignAgent {
                expected: self.agent.clone(),
                got: msg.payload.agent().to_string(),
            });
        }
        Ok(match &msg.payload {
            Payload::Pose { pose, .. } => self.extract_pose(graph, *pose),
            Payload::Battery { voltage, .. } => self.extract_battery(*voltage),
            Payload::NavStatus { status, .. } => self.extract_nav_status(graph, *status),
            // found=false never reverts a latched detection
            Payload::Detection { found, location, .. } => self.extract_detection(*found, *location),
        })
    }

    /// Applies one message atomically to `graph`.
    pub fn ingest(&self, graph: &mut KnowledgeGraph, msg: &TopicMessage) -> Result<(), ExtractError> {
        let m = self.mutations(graph, msg)?;
        graph.apply_batch(&m, msg.tick)?;
        Ok(())
    }
}

/// Graph-to-graph extractor: for each unordered pair of drones with poses,
/// both directed "close" edges exist iff their horizontal distance is at
/// most `close_distance`.
pub fn infer_proximity(snapshot: &GraphSnapshot, thresholds: &Thresholds) -> Vec<Mutation> {
    let drones: Vec<(NodeKey, Pose)> = snapshot
        .nodes_of_class(vocab::DRONE)
        .filter_map(|n| Some((n.key(), n.property(vocab::POSE)?.as_pose()?)))
        .collect();
    let mut m = Vec::new();
    for (i, (a, pa)) in drones.iter().enumerate() {
        for (b, pb) in &drones[i + 1..] {
            if pa.horizontal_distance(pb) <= thresholds.close_distance {
                m.push(Mutation::UpsertNode { node: a.clone() });
                m.push(Mutation::UpsertNode { node: b.clone() });
                m.push(upsert_edge(a, vocab::CLOSE, b));
                m.push(upsert_edge(b, vocab::CLOSE, a));
            } else {
                for (s, t) in [(a, b), (b, a)] {
                    m.push(Mutation::ClearEdge { source: s.clone(), label: vocab::CLOSE.into(), target: t.clone() });
                }
            }
        }
    }
    m
}

/// Applies [`infer_proximity`] to `target`, typically the knowledge base's
/// own derived graph.
pub fn apply_proximity(
    target: &mut KnowledgeGraph,
    snapshot: &GraphSnapshot,
    thresholds: &Thresholds,
    tick: Tick,
) -> Result<(), GraphError> {
    target.apply_batch(&infer_proximity(snapshot, thresholds), tick)
}
