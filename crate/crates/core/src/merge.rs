//! Federation of per-agent graphs into one deduplicated global graph.
//!
//! Entities are unified by `(node_class, name)`. Conflicting property values
//! and exclusive edges resolve to the highest tick; ties go to the
//! lexicographically smallest agent name.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{normalized_groups, ExclusivityGroup, GraphSnapshot, KnowledgeGraph, NodeKey, Property, Tick};

pub type LocalGraphSet = BTreeMap<String, GraphSnapshot>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("agent '{agent}' declares exclusivity groups incompatible with agent '{reference}'")]
    IncompatibleGroups { agent: String, reference: String },
}

type EdgeId = (NodeKey, String, NodeKey);

/// Candidate value together with the agent it came from.
struct Claim<'a, T> {
    value: T,
    tick: Tick,
    agent: &'a str,
}

impl<'a, T> Claim<'a, T> {
    /// Higher tick wins; on equal ticks the smaller agent name wins.
    fn beats(&self, other: &Claim<'a, T>) -> bool {
        self.tick > other.tick || (self.tick == other.tick && self.agent < other.agent)
    }
}

/// One-shot merge of every local graph.
pub fn merge(locals: &LocalGraphSet) -> Result<GraphSnapshot, MergeError> {
    merge_iter(locals.iter().map(|(a, s)| (a.as_str(), s)))
}

/// Merge over any enumeration of `(agent, snapshot)` pairs. The result does
/// not depend on enumeration order.
pub fn merge_iter<'a, I>(locals: I) -> Result<GraphSnapshot, MergeError>
where
    I: IntoIterator<Item = (&'a str, &'a GraphSnapshot)>,
{
    let mut locals: Vec<(&str, &GraphSnapshot)> = locals.into_iter().collect();
    locals.sort_by(|a, b| a.0.cmp(b.0));

    let groups: Vec<ExclusivityGroup> = match locals.first() {
        Some((first_agent, first)) => {
            let reference = normalized_groups(first.groups());
            for (agent, snap) in &locals[1..] {
                if normalized_groups(snap.groups()) != reference {
                    return Err(MergeError::IncompatibleGroups {
                        agent: agent.to_string(),
                        reference: first_agent.to_string(),
                    });
                }
            }
            first.groups().to_vec()
        }
        None => ExclusivityGroup::defaults(),
    };

    let mut nodes: BTreeMap<NodeKey, BTreeMap<String, Claim<'_, &Property>>> = BTreeMap::new();
    let mut edges: BTreeMap<EdgeId, Claim<'_, ()>> = BTreeMap::new();

    for (agent, snap) in &locals {
        for node in snap.nodes() {
            let props = nodes.entry(node.key()).or_default();
            for (k, p) in &node.properties {
                let claim = Claim { value: p, tick: p.tick, agent };
                match props.get(k) {
                    Some(existing) if !claim.beats(existing) => {}
                    _ => {
                        props.insert(k.clone(), claim);
                    }
                }
            }
        }
        for e in snap.edges() {
            let id = (e.source.key(), e.label.to_string(), e.target.key());
            let claim = Claim { value: (), tick: e.tick, agent };
            match edges.get(&id) {
                Some(existing) if !claim.beats(existing) => {}
                _ => {
                    edges.insert(id, claim);
                }
            }
        }
    }

    // Re-resolve exclusivity: per group and node pair keep the winning edge.
    let mut winners: BTreeMap<(usize, NodeKey, NodeKey), (String, Tick, String)> = BTreeMap::new();
    let mut dropped = Vec::new();
    for ((s, l, t), claim) in &edges {
        let Some(gi) = groups.iter().position(|g| g.applies(l, &s.class, &t.class)) else { continue };
        let slot = (gi, s.clone(), t.clone());
        let challenger = Claim { value: l.clone(), tick: claim.tick, agent: claim.agent };
        match winners.get(&slot) {
            Some((wl, wt, wa)) => {
                let current = Claim { value: wl.clone(), tick: *wt, agent: wa.as_str() };
                if challenger.beats(&current) {
                    dropped.push((s.clone(), wl.clone(), t.clone()));
                    winners.insert(slot, (l.clone(), claim.tick, claim.agent.to_string()));
                } else {
                    dropped.push((s.clone(), l.clone(), t.clone()));
                }
            }
            None => {
                winners.insert(slot, (l.clone(), claim.tick, claim.agent.to_string()));
            }
        }
    }
    for d in dropped {
        edges.remove(&d);
    }

    let mut out = KnowledgeGraph::with_groups(groups).expect("groups come from a valid graph");
    for (key, props) in &nodes {
        let id = out.upsert_node(&key.class, &key.name).expect("keys come from valid graphs");
        for (k, claim) in props {
            out.set_property(id, k, claim.value.value.clone(), claim.value.tick)
                .expect("fresh node accepts any tick");
        }
    }
    for ((s, l, t), claim) in &edges {
        let (si, ti) = (
            out.find(&s.class, &s.name).expect("endpoint merged"),
            out.find(&t.class, &t.name).expect("endpoint merged"),
        );
        out.upsert_edge(si, l, ti, claim.tick).expect("valid edge");
    }
    Ok(out.snapshot())
}

/// Keeps the latest snapshot of every agent and the merged global graph.
/// Each update is a full rebuild over the stored locals.
#[derive(Debug, Clone)]
pub struct Federation {
    locals: LocalGraphSet,
    global: GraphSnapshot,
}

impl Default for Federation {
    fn default() -> Self {
        Self::new()
    }
}

impl Federation {
    pub fn new() -> Self {
        Self { locals: LocalGraphSet::new(), global: GraphSnapshot::empty() }
    }

    pub fn global(&self) -> &GraphSnapshot {
        &self.global
    }

    pub fn locals(&self) -> &LocalGraphSet {
        &self.locals
    }

    /// Replaces (or registers) `agent`'s snapshot and rebuilds the global graph.
    /// On error the previous state is kept.
    pub fn merge_incremental(&mut self, agent: &str, local: GraphSnapshot) -> Result<&GraphSnapshot, MergeError> {
        let previous = self.locals.insert(agent.to_string(), local);
        match merge(&self.locals) {
            Ok(g) => {
                self.global = g;
                Ok(&self.global)
            }
            Err(e) => {
                match previous {
                    Some(p) => self.locals.insert(agent.to_string(), p),
                    None => self.locals.remove(agent),
                };
                Err(e)
            }
        }
    }

    pub fn remove_agent(&mut self, agent: &str) -> Result<&GraphSnapshot, MergeError> {
        self.locals.remove(agent);
        self.global = merge(&self.locals)?;
        Ok(&self.global)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::graph::PropertyValue;
    use crate::vocab;

    fn local(level: &str, tick: Tick) -> GraphSnapshot {
        let mut g = KnowledgeGraph::new();
        let d = g.upsert_node(vocab::DRONE, "drone_0").unwrap();
        let b = g.upsert_node(vocab::BATTERY, "battery_0").unwrap();
        g.upsert_node(vocab::PERSON, "person").unwrap();
        g.upsert_edge(d, level, b, tick).unwrap();
        g.snapshot()
    }

    fn set(entries: &[(&str, GraphSnapshot)]) -> LocalGraphSet {
        entries.iter().map(|(a, s)| (a.to_string(), s.clone())).collect()
    }

    #[test]
    fn single_graph_is_identity() {
        let g = local(vocab::HIGH, 3);
        let m = merge(&set(&[("a", g.clone())])).unwrap();
        assert_eq!(m.to_json(), g.to_json());
    }

    #[test]
    fn persons_are_deduplicated() {
        let m = merge(&set(&[("a", local(vocab::HIGH, 0)), ("b", local(vocab::HIGH, 0))])).unwrap();
        assert_eq!(m.nodes_of_class(vocab::PERSON).count(), 1);
    }

    #[test]
    fn newest_exclusive_edge_wins() {
        let m = merge(&set(&[("A", local(vocab::HIGH, 5)), ("B", local(vocab::LOW, 9))])).unwrap();
        let labels: Vec<_> = m.edges().map(|e| e.label.to_string()).collect();
        assert_eq!(labels, vec![vocab::LOW]);
        // tie on tick: smallest agent name wins
        let m = merge(&set(&[("B", local(vocab::HIGH, 5)), ("A", local(vocab::LOW, 5))])).unwrap();
        let labels: Vec<_> = m.edges().map(|e| e.label.to_string()).collect();
        assert_eq!(labels, vec![vocab::LOW]);
    }

    #[test]
    fn property_conflicts_resolve_by_tick_then_agent() {
        let with_pose = |x: f64, tick: Tick| {
            let mut g = KnowledgeGraph::new();
            let d = g.upsert_node(vocab::DRONE, "drone_0").unwrap();
            g.set_property(d, vocab::POSE, PropertyValue::Pose(Pose::xyz(x, 0.0, 0.0)), tick).unwrap();
            g.snapshot()
        };
        let pose_of = |s: &GraphSnapshot| s.find(vocab::DRONE, "drone_0").unwrap().property(vocab::POSE).cloned();
        let m = merge(&set(&[("a", with_pose(1.0, 2)), ("b", with_pose(2.0, 7))])).unwrap();
        assert_eq!(pose_of(&m), Some(PropertyValue::Pose(Pose::xyz(2.0, 0.0, 0.0))));
        let m = merge(&set(&[("b", with_pose(1.0, 7)), ("a", with_pose(2.0, 7))])).unwrap();
        assert_eq!(pose_of(&m), Some(PropertyValue::Pose(Pose::xyz(2.0, 0.0, 0.0))));
    }

    #[test]
    fn incompatible_groups_are_rejected() {
        let odd = KnowledgeGraph::with_groups(vec![ExclusivityGroup::new(["x", "y"], "A", "B")]).unwrap().snapshot();
        let err = merge(&set(&[("a", local(vocab::HIGH, 0)), ("b", odd)])).unwrap_err();
        assert!(matches!(err, MergeError::IncompatibleGroups { .. }));
    }

    #[test]
    fn empty_set_merges_to_empty_graph() {
        let m = merge(&LocalGraphSet::new()).unwrap();
        assert_eq!(m.node_count(), 0);
    }

    #[test]
    fn incremental_matches_one_shot() {
        let a = local(vocab::HIGH, 5);
        let b = local(vocab::LOW, 9);
        let mut fed = Federation::new();
        fed.merge_incremental("a", a.clone()).unwrap();
        let prev = fed.global().clone();
        fed.merge_incremental("a", a.clone()).unwrap();
        assert!(fed.global().same_content(&prev));
        fed.merge_incremental("b", b.clone()).unwrap();
        let expected = merge(&set(&[("a", a), ("b", b)])).unwrap();
        assert_eq!(fed.global().to_json(), expected.to_json());

        // the High edge came from a; dropping b restores it
        fed.remove_agent("b").unwrap();
        assert_eq!(fed.global().to_json(), prev.to_json());
    }

    #[test]
    fn removed_agent_contributions_disappear() {
        let mut extra = KnowledgeGraph::new();
        extra.upsert_node(vocab::HOME_STATION, "home_9").unwrap();
        let mut fed = Federation::new();
        fed.merge_incremental("a", local(vocab::HIGH, 0)).unwrap();
        fed.merge_incremental("z", extra.snapshot()).unwrap();
        assert!(fed.global().find(vocab::HOME_STATION, "home_9").is_some());
        fed.remove_agent("z").unwrap();
        assert!(fed.global().find(vocab::HOME_STATION, "home_9").is_none());
    }

    #[test]
    fn failed_incremental_keeps_state() {
        let mut fed = Federation::new();
        fed.merge_incremental("a", local(vocab::HIGH, 0)).unwrap();
        let before = fed.global().to_json();
        let odd = KnowledgeGraph::with_groups(vec![]).unwrap().snapshot();
        assert!(fed.merge_incremental("b", odd).is_err());
        assert_eq!(fed.global().to_json(), before);
        assert_eq!(fed.locals().len(), 1);
    }
}
