//! Rule layer: each rule pairs a retriever query with an expected value and a
//! consequence command.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::graph::{GraphSnapshot, Tick};
use crate::retrieve::{self, BatteryLevel, InspectionStatus, QueryError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "snake_case", deny_unknown_fields)]
pub enum Query {
    BatteryLevel { drone: String },
    InspectionStatus {},
    AreClose { a: String, b: String },
}

/// Result of running a [`Query`].
#[derive(Debug, Clone, PartialEq)]
pub enum QueryValue {
    Battery(BatteryLevel),
    Inspection(InspectionStatus),
    Close(bool),
}

impl Query {
    pub fn run(&self, snapshot: &GraphSnapshot) -> Result<QueryValue, QueryError> {
        Ok(match self {
            Query::BatteryLevel { drone } => QueryValue::Battery(retrieve::battery_level(snapshot, drone)),
            Query::InspectionStatus {} => QueryValue::Inspection(retrieve::inspection_status(snapshot)?),
            Query::AreClose { a, b } => QueryValue::Close(retrieve::are_close(snapshot, a, b)),
        })
    }
}

/// Value a rule waits for: a label ("Low", "Located", ...) or a flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expected {
    Flag(bool),
    Label(String),
}

const BATTERY_LABELS: [&str; 4] = ["High", "Medium", "Low", "Unknown"];
const INSPECTION_LABELS: [&str; 2] = ["Searching", "Located"];

impl Expected {
    fn compatible_with(&self, query: &Query) -> bool {
        match (query, self) {
            (Query::BatteryLevel { .. }, Expected::Label(l)) => BATTERY_LABELS.contains(&l.as_str()),
            (Query::InspectionStatus {}, Expected::Label(l)) => INSPECTION_LABELS.contains(&l.as_str()),
            (Query::AreClose { .. }, Expected::Flag(_)) => true,
            _ => false,
        }
    }

    pub fn matches(&self, value: &QueryValue) -> bool {
        match (value, self) {
            (QueryValue::Battery(level), Expected::Label(l)) => level.to_string() == *l,
            (QueryValue::Inspection(InspectionStatus::Searching), Expected::Label(l)) => l == "Searching",
            (QueryValue::Inspection(InspectionStatus::Located { .. }), Expected::Label(l)) => l == "Located",
            (QueryValue::Close(c), Expected::Flag(f)) => c == f,
            _ => false,
        }
    }
}

/// Consequence template; `send_position` takes the locator and location
/// from the inspection query result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "snake_case", deny_unknown_fields)]
pub enum Consequence {
    ReturnHome { drone: String },
    SendPosition {},
    MoveAway { drone: String, distance: f64 },
    PreventTakeoff { drone: String },
    ReassignArea { from_drone: String, to_drone: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    ReturnHome { drone: String },
    SendPosition { drone: String, location: Pose },
    MoveAway { drone: String, distance: f64 },
    PreventTakeoff { drone: String },
    ReassignArea { from_drone: String, to_drone: String },
}

impl Command {
    /// The drone the command is addressed to.
    pub fn target(&self) -> &str {
        match self {
            Command::ReturnHome { drone }
            | Command::SendPosition { drone, .. }
            | Command::MoveAway { drone, .. }
            | Command::PreventTakeoff { drone } => drone,
            Command::ReassignArea { to_drone, .. } => to_drone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedCommand {
    pub tick: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Firing {
    OnTransition,
    EveryTick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    pub query: Query,
    pub expected: Expected,
    pub consequence: Consequence,
    pub firing: Firing,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("rule '{rule}': {source}")]
    Evaluation { rule: String, source: QueryError },
    #[error("invalid rule set: {0}")]
    Invalid(String),
    #[error("malformed rules document: {0}")]
    Parse(String),
}

impl Rule {
    fn validate(&self) -> Result<(), RuleError> {
        if self.id.is_empty() {
            return Err(RuleError::Invalid("rule id must be non-empty".into()));
        }
        if !self.expected.compatible_with(&self.query) {
            return Err(RuleError::Invalid(format!(
                "rule '{}': expected value {:?} does not fit query {:?}",
                self.id, self.expected, self.query
            )));
        }
        let bad_name = |n: &str| n.is_empty();
        let ok = match &self.consequence {
            Consequence::ReturnHome { drone } | Consequence::PreventTakeoff { drone } => !bad_name(drone),
            Consequence::MoveAway { drone, distance } => !bad_name(drone) && distance.is_finite() && *distance > 0.0,
            Consequence::ReassignArea { from_drone, to_drone } => !bad_name(from_drone) && !bad_name(to_drone),
            Consequence::SendPosition {} => {
                matches!(self.query, Query::InspectionStatus {})
                    && self.expected == Expected::Label("Located".into())
            }
        };
        if !ok {
            return Err(RuleError::Invalid(format!("rule '{}': invalid consequence {:?}", self.id, self.consequence)));
        }
        Ok(())
    }

    fn command(&self, value: &QueryValue) -> Command {
        match &self.consequence {
            Consequence::ReturnHome { drone } => Command::ReturnHome { drone: drone.clone() },
            Consequence::MoveAway { drone, distance } => Command::MoveAway { drone: drone.clone(), distance: *distance },
            Consequence::PreventTakeoff { drone } => Command::PreventTakeoff { drone: drone.clone() },
            Consequence::ReassignArea { from_drone, to_drone } => {
                Command::ReassignArea { from_drone: from_drone.clone(), to_drone: to_drone.clone() }
            }
            Consequence::SendPosition {} => match value {
                QueryValue::Inspection(InspectionStatus::Located { drone, location }) => {
                    Command::SendPosition { drone: drone.clone(), location: *location }
                }
                _ => unreachable!("validated: send_position only runs on a Located match"),
            },
        }
    }
}

pub fn validate_rules(rules: &[Rule]) -> Result<(), RuleError> {
    let mut ids = BTreeSet::new();
    for r in rules {
        r.validate()?;
        if !ids.insert(r.id.as_str()) {
            return Err(RuleError::Invalid(format!("duplicate rule id '{}'", r.id)));
        }
    }
    Ok(())
}

pub fn rules_from_json(text: &str) -> Result<Vec<Rule>, RuleError> {
    let rules: Vec<Rule> = serde_json::from_str(text).map_err(|e| RuleError::Parse(e.to_string()))?;
    validate_rules(&rules)?;
    Ok(rules)
}

pub fn rules_to_json(rules: &[Rule]) -> String {
    let mut s = serde_json::to_string_pretty(rules).expect("rules serialize");
    s.push('\n');
    s
}

/// The three consequences of the search and rescue mission, expanded per
/// drone (battery) and per unordered drone pair (proximity).
pub fn default_ruleset(drones: &[String], move_away_distance: f64) -> Vec<Rule> {
    let mut names: Vec<&String> = drones.iter().collect();
    names.sort();
    names.dedup();
    let mut rules = Vec::new();
    for d in &names {
        rules.push(Rule {
            id: format!("battery_low:{d}"),
            query: Query::BatteryLevel { drone: d.to_string() },
            expected: Expected::Label("Low".into()),
            consequence: Consequence::ReturnHome { drone: d.to_string() },
            firing: Firing::OnTransition,
        });
    }
    rules.push(Rule {
        id: "person_located".into(),
        query: Query::InspectionStatus {},
        expected: Expected::Label("Located".into()),
        consequence: Consequence::SendPosition {},
        firing: Firing::OnTransition,
    });
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            rules.push(Rule {
                id: format!("drones_close:{a}:{b}"),
                query: Query::AreClose { a: a.to_string(), b: b.to_string() },
                expected: Expected::Flag(true),
                consequence: Consequence::MoveAway { drone: b.to_string(), distance: move_away_distance },
                firing: Firing::OnTransition,
            });
        }
    }
    rules.sort_by(|a, b| a.id.cmp(&b.id));
    rules
}

/// Last matched/unmatched status of every rule, keyed by rule id. Rules
/// never seen count as unmatched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionState {
    matched: BTreeMap<String, bool>,
}

impl TransitionState {
    pub fn was_matched(&self, rule: &str) -> bool {
        self.matched.get(rule).copied().unwrap_or(false)
    }
}

/// Runs every rule's query; `(rule, matched, value)` in rule id order.
fn assess<'r>(rules: &'r [Rule], snapshot: &GraphSnapshot) -> Result<Vec<(&'r Rule, bool, QueryValue)>, RuleError> {
    let mut ordered: Vec<&Rule> = rules.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    ordered
        .into_iter()
        .map(|r| {
            let value = r
                .query
                .run(snapshot)
                .map_err(|source| RuleError::Evaluation { rule: r.id.clone(), source })?;
            Ok((r, r.expected.matches(&value), value))
        })
        .collect()
}

/// Commands due for `snapshot` given the previous transition state, in
/// rule id order.
pub fn evaluate(rules: &[Rule], snapshot: &GraphSnapshot, state: &TransitionState) -> Result<Vec<IssuedCommand>, RuleError> {
    Ok(assess(rules, snapshot)?
        .into_iter()
        .filter(|(r, matched, _)| *matched && (r.firing == Firing::EveryTick || !state.was_matched(&r.id)))
        .map(|(r, _, value)| IssuedCommand { tick: snapshot.tick(), rule: Some(r.id.clone()), command: r.command(&value) })
        .collect())
}

pub fn transition_state_update(
    rules: &[Rule],
    previous: &TransitionState,
    snapshot: &GraphSnapshot,
) -> Result<TransitionState, RuleError> {
    let mut next = previous.clone();
    for (r, matched, _) in assess(rules, snapshot)? {
        next.matched.insert(r.id.clone(), matched);
    }
    Ok(next)
}

/// Rules plus the transition state they carry between ticks.
#[derive(Debug, Clone)]
pub struct RuleEngine {
    rules: Vec<Rule>,
    state: TransitionState,
}

impl RuleEngine {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        validate_rules(&rules)?;
        Ok(Self { rules, state: TransitionState::default() })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn state(&self) -> &TransitionState {
        &self.state
    }

    /// Evaluates and advances the transition state; on error the state is
    /// left as it was.
    pub fn step(&mut self, snapshot: &GraphSnapshot) -> Result<Vec<IssuedCommand>, RuleError> {
        let commands = evaluate(&self.rules, snapshot, &self.state)?;
        self.state = transition_state_update(&self.rules, &self.state, snapshot)?;
        Ok(commands)
    }
}
