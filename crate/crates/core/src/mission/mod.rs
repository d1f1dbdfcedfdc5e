//! Per-drone mission executor: pre-flight battery check, takeoff, area
//! sweep, reaction to rule commands and located signals, return and land.
//!
//! The executor never sees ground truth. Its own pose, battery level,
//! navigation status and detections are read from the global graph.

mod coverage;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rect};
use crate::graph::{GraphSnapshot, NodeKey, Tick};
use crate::retrieve::{self, BatteryLevel};
use crate::rules::Command;
use crate::vocab;

pub use coverage::{lawnmower_path, max_gap};

/// Distance at which a waypoint counts as reached.
pub const ARRIVAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("command {command:?} is not addressed to {drone}")]
    ForeignCommand { drone: String, command: Command },
    #[error("unknown drone '{0}'")]
    UnknownDrone(String),
    #[error("mission aborted: no drone left to take over from {failed}")]
    Aborted { failed: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    PreFlight,
    Transit,
    Sweeping,
    Responding,
    Returning,
    Landed,
    Grounded,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::PreFlight => "PreFlight",
            Phase::Transit => "Transit",
            Phase::Sweeping => "Sweeping",
            Phase::Responding => "Responding",
            Phase::Returning => "Returning",
            Phase::Landed => "Landed",
            Phase::Grounded => "Grounded",
        }
    }

    pub fn is_airborne(self) -> bool {
        matches!(self, Phase::Transit | Phase::Sweeping | Phase::Responding | Phase::Returning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    Takeoff { altitude: f64 },
    GoTo { waypoint: Pose, speed: f64 },
    Sweep { area: Rect, lane_spacing: f64, speed: f64 },
    Hover,
    Land,
    ReturnHome,
}

impl Behavior {
    pub fn validate(&self) -> Result<(), MissionError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match self {
            Behavior::Takeoff { altitude } => positive(*altitude),
            Behavior::GoTo { waypoint, speed } => waypoint.is_finite() && positive(*speed),
            Behavior::Sweep { area, lane_spacing, speed } => area.is_valid() && positive(*lane_spacing) && positive(*speed),
            Behavior::Hover | Behavior::Land | Behavior::ReturnHome => true,
        };
        if ok {
            Ok(())
        } else {
            Err(MissionError::InvalidArgument(format!("invalid behavior {self:?}")))
        }
    }
}

/// What the drone is asked to do during the next simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setpoint {
    /// On the ground, motors idle.
    Idle,
    /// Airborne, keep the current position.
    Hold,
    Takeoff { altitude: f64 },
    Position { target: Pose, speed: f64 },
    Land,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Located { from: String, location: Pose, tick: Tick },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnReason {
    LowBattery,
    SweepComplete,
}

/// How a drone got into Responding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Response {
    Locator,
    Approaching { locator: String, signal_tick: Tick },
}

/// Waypoints of one area sweep and the index of the next one to reach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLeg {
    pub area: Rect,
    pub waypoints: Vec<Pose>,
    pub next: usize,
}

impl SweepLeg {
    fn remaining(&self) -> &[Pose] {
        &self.waypoints[self.next.min(self.waypoints.len())..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MissionEvent {
    Phase { from: Phase, to: Phase },
    TakeoffPrevented { reason: String },
    LocatedBroadcast { location: Pose },
    PositionSent { location: Pose },
    MoveAway { from: Pose, to: Pose },
    CommandIgnored { command: Command, phase: Phase },
    AreaTaken { from_drone: String, waypoints: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: Tick,
    pub drone: String,
    #[serde(flatten)]
    pub event: MissionEvent,
}

/// Per-tick observations of one drone, taken from the global graph.
#[derive(Debug, Clone, PartialEq)]
struct Observation {
    pose: Pose,
    battery: BatteryLevel,
    status: Option<String>,
    located: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub drone: String,
    pub home: Pose,
    pub assigned_area: Rect,
    pub altitude: f64,
    pub speed: f64,
    pub lane_spacing: f64,
    pub phase: Phase,
    pub behaviors: VecDeque<Behavior>,
    /// One entry per `Sweep` behavior still queued, in queue order.
    pub legs: VecDeque<SweepLeg>,
    pub return_reason: Option<ReturnReason>,
    pub response: Option<Response>,
    /// Uncovered sweep work left behind after a low-battery return.
    pub handover: Vec<SweepLeg>,
    pub log: Vec<LogEntry>,
}

fn observe(snapshot: &GraphSnapshot, drone: &str, fallback: Pose) -> Observation {
    let node = snapshot.find(vocab::DRONE, drone);
    let pose = node.and_then(|n| n.property(vocab::POSE)).and_then(|v| v.as_pose()).unwrap_or(fallback);
    let key = NodeKey::new(vocab::DRONE, drone);
    let status = snapshot
        .edges()
        .find(|e| e.source.key() == key && e.label == vocab::IS && e.target.class == vocab::STATUS)
        .map(|e| e.target.name.clone());
    let located = snapshot
        .edges()
        .any(|e| e.source.key() == key && e.label == vocab::LOCATED && e.target.class == vocab::PERSON);
    Observation { pose, battery: retrieve::battery_level(snapshot, drone), status, located }
}

fn person_location(snapshot: &GraphSnapshot) -> Option<Pose> {
    snapshot
        .nodes_of_class(vocab::PERSON)
        .find_map(|n| n.property(vocab::LOCATION).and_then(|v| v.as_pose()))
}

impl MissionPlan {
    pub fn new(
        drone: &str,
        home: Pose,
        assigned_area: Rect,
        altitude: f64,
        speed: f64,
        lane_spacing: f64,
    ) -> Result<Self, MissionError> {
        Behavior::Takeoff { altitude }.validate()?;
        let sweep = Behavior::Sweep { area: assigned_area, lane_spacing, speed };
        sweep.validate()?;
        let above_home = home.with_z(home.z + altitude);
        let waypoints = lawnmower_path(&assigned_area, lane_spacing, &above_home)?;
        let entry = waypoints[0];
        Ok(Self {
            drone: drone.to_string(),
            home,
            assigned_area,
            altitude,
            speed,
            lane_spacing,
            phase: Phase::PreFlight,
            behaviors: VecDeque::from([
                Behavior::Takeoff { altitude },
                Behavior::GoTo { waypoint: entry, speed },
                sweep,
            ]),
            legs: VecDeque::from([SweepLeg { area: assigned_area, waypoints, next: 0 }]),
            return_reason: None,
            response: None,
            handover: Vec::new(),
            log: Vec::new(),
        })
    }

    fn cruise_z(&self) -> f64 {
        self.home.z + self.altitude
    }

    fn record(&mut self, tick: Tick, event: MissionEvent) {
        self.log.push(LogEntry { tick, drone: self.drone.clone(), event });
    }

    fn enter(&mut self, tick: Tick, to: Phase) {
        if self.phase != to {
            let from = self.phase;
            self.phase = to;
            self.record(tick, MissionEvent::Phase { from, to });
        }
    }

    /// A drone whose takeoff was prevented or that is heading home on low
    /// battery.
    pub fn has_failed(&self) -> bool {
        self.phase == Phase::Grounded || self.return_reason == Some(ReturnReason::LowBattery)
    }

    /// Responding and holding position.
    pub fn is_hovering(&self) -> bool {
        self.phase == Phase::Responding && matches!(self.behaviors.front(), Some(Behavior::Hover))
    }

    /// Waypoints of every sweep leg not yet reached.
    pub fn remaining_waypoints(&self) -> Vec<Pose> {
        self.legs.iter().flat_map(|l| l.remaining().iter().copied()).collect()
    }

    fn go_home(&mut self, tick: Tick, reason: ReturnReason) {
        self.return_reason = Some(reason);
        self.response = None;
        self.behaviors = VecDeque::from([Behavior::ReturnHome]);
        if reason == ReturnReason::LowBattery {
            self.handover = self
                .legs
                .drain(..)
                .map(|l| {
                    let from = l.next.saturating_sub(1);
                    SweepLeg { area: l.area, waypoints: l.waypoints[from..].to_vec(), next: 0 }
                })
                .collect();
        }
        self.enter(tick, Phase::Returning);
    }

    fn can_respond(&self) -> bool {
        matches!(self.phase, Phase::Transit | Phase::Sweeping)
            || (self.phase == Phase::Returning && self.return_reason == Some(ReturnReason::SweepComplete))
    }

    /// One decision step. `signals` are the located signals delivered this
    /// tick; the returned list holds the signals this drone broadcasts.
    pub fn execute_tick(
        &mut self,
        snapshot: &GraphSnapshot,
        commands: &[Command],
        signals: &[Signal],
        tick: Tick,
    ) -> Result<(Setpoint, Vec<Signal>), MissionError> {
        if let Some(c) = commands.iter().find(|c| c.target() != self.drone) {
            return Err(MissionError::ForeignCommand { drone: self.drone.clone(), command: c.clone() });
        }
        let obs = observe(snapshot, &self.drone, self.home);
        let mut outgoing = Vec::new();

        if self.phase == Phase::PreFlight {
            let prevented = commands
                .iter()
                .find(|c| matches!(c, Command::PreventTakeoff { .. } | Command::ReturnHome { .. }));
            if obs.battery == BatteryLevel::Low || prevented.is_some() {
                let reason = match prevented {
                    Some(c) if obs.battery != BatteryLevel::Low => format!("{c:?}"),
                    _ => "battery Low before takeoff".to_string(),
                };
                self.record(tick, MissionEvent::TakeoffPrevented { reason });
                self.behaviors.clear();
                self.legs.clear();
                self.enter(tick, Phase::Grounded);
                return Ok((Setpoint::Idle, outgoing));
            }
            if obs.battery == BatteryLevel::Unknown {
                return Ok((Setpoint::Idle, outgoing));
            }
            self.enter(tick, Phase::Transit);
        }

        if matches!(self.phase, Phase::Grounded | Phase::Landed) {
            for c in commands {
                self.record(tick, MissionEvent::CommandIgnored { command: c.clone(), phase: self.phase });
            }
            return Ok((Setpoint::Idle, outgoing));
        }

        let mut detour = None;
        for c in commands {
            match c {
                Command::ReturnHome { .. } => {
                    if self.return_reason != Some(ReturnReason::LowBattery) {
                        self.go_home(tick, ReturnReason::LowBattery);
                    }
                }
                Command::SendPosition { location, .. } => {
                    self.record(tick, MissionEvent::PositionSent { location: *location });
                }
                Command::MoveAway { distance, .. } => {
                    if self.phase == Phase::Responding || detour.is_some() {
                        self.record(tick, MissionEvent::CommandIgnored { command: c.clone(), phase: self.phase });
                    } else {
                        detour = Some(self.move_away_target(snapshot, &obs.pose, *distance));
                    }
                }
                Command::PreventTakeoff { .. } | Command::ReassignArea { .. } => {
                    self.record(tick, MissionEvent::CommandIgnored { command: c.clone(), phase: self.phase });
                }
            }
        }

        if obs.located && self.can_respond() {
            let location = person_location(snapshot).unwrap_or(obs.pose);
            self.response = Some(Response::Locator);
            self.behaviors = VecDeque::from([Behavior::Hover]);
            self.record(tick, MissionEvent::LocatedBroadcast { location });
            outgoing.push(Signal::Located { from: self.drone.clone(), location, tick });
            self.enter(tick, Phase::Responding);
            detour = None;
        } else if let Some(Signal::Located { from, location, tick: sent }) =
            signals.iter().find(|s| matches!(s, Signal::Located { from, .. } if *from != self.drone))
        {
            if self.can_respond() {
                // head for the hovering locator and stop once "close"
                let target = snapshot
                    .find(vocab::DRONE, from)
                    .and_then(|n| n.property(vocab::POSE))
                    .and_then(|v| v.as_pose())
                    .unwrap_or(*location)
                    .with_z(self.cruise_z());
                self.response = Some(Response::Approaching { locator: from.clone(), signal_tick: *sent });
                self.behaviors = VecDeque::from([Behavior::GoTo { waypoint: target, speed: self.speed }, Behavior::Hover]);
                self.enter(tick, Phase::Responding);
                detour = None;
            }
        }

        if let Some(to) = detour {
            self.record(tick, MissionEvent::MoveAway { from: obs.pose, to });
            self.behaviors.push_front(Behavior::GoTo { waypoint: to, speed: self.speed });
        }

        let setpoint = self.advance(snapshot, &obs, tick);
        Ok((setpoint, outgoing))
    }

    /// Lateral offset away from the nearest other drone, at the current
    /// altitude.
    fn move_away_target(&self, snapshot: &GraphSnapshot, pose: &Pose, distance: f64) -> Pose {
        let nearest = snapshot
            .nodes_of_class(vocab::DRONE)
            .filter(|n| n.name != self.drone)
            .filter_map(|n| n.property(vocab::POSE).and_then(|v| v.as_pose()))
            .min_by(|a, b| a.horizontal_distance(pose).total_cmp(&b.horizontal_distance(pose)));
        let (mut dx, mut dy) = match nearest {
            Some(o) => (pose.x - o.x, pose.y - o.y),
            None => (1.0, 0.0),
        };
        let norm = dx.hypot(dy);
        if norm < ARRIVAL_TOLERANCE {
            (dx, dy) = (1.0, 0.0);
        } else {
            (dx, dy) = (dx / norm, dy / norm);
        }
        Pose { x: pose.x + dx * distance, y: pose.y + dy * distance, ..*pose }
    }

    /// Pops finished behaviors and returns the setpoint of the current one.
    fn advance(&mut self, snapshot: &GraphSnapshot, obs: &Observation, tick: Tick) -> Setpoint {
        loop {
            let Some(front) = self.behaviors.front().cloned() else {
                return match self.phase {
                    Phase::Returning | Phase::Landed => Setpoint::Idle,
                    _ => {
                        self.go_home(tick, ReturnReason::SweepComplete);
                        continue;
                    }
                };
            };
            match front {
                Behavior::Takeoff { altitude } => {
                    let airborne = obs.status.as_deref() == Some(vocab::STATUS_VALUES[1]);
                    if airborne && obs.pose.z >= self.home.z + altitude - ARRIVAL_TOLERANCE {
                        self.behaviors.pop_front();
                        continue;
                    }
                    return Setpoint::Takeoff { altitude };
                }
                Behavior::GoTo { waypoint, speed } => {
                    let arrived = obs.pose.distance(&waypoint) <= ARRIVAL_TOLERANCE;
                    let rendezvous = match &self.response {
                        Some(Response::Approaching { locator, .. }) => retrieve::are_close(snapshot, &self.drone, locator),
                        _ => false,
                    };
                    if arrived || rendezvous {
                        self.behaviors.pop_front();
                        continue;
                    }
                    return Setpoint::Position { target: waypoint, speed };
                }
                Behavior::Sweep { speed, .. } => {
                    if self.phase == Phase::Transit {
                        self.enter(tick, Phase::Sweeping);
                    }
                    let Some(leg) = self.legs.front_mut() else {
                        self.behaviors.pop_front();
                        continue;
                    };
                    while leg.next < leg.waypoints.len() && obs.pose.distance(&leg.waypoints[leg.next]) <= ARRIVAL_TOLERANCE {
                        leg.next += 1;
                    }
                    if leg.next >= leg.waypoints.len() {
                        self.legs.pop_front();
                        self.behaviors.pop_front();
                        continue;
                    }
                    return Setpoint::Position { target: leg.waypoints[leg.next], speed };
                }
                Behavior::Hover => return Setpoint::Hold,
                Behavior::ReturnHome => {
                    self.behaviors.pop_front();
                    let above = self.home.with_z(self.cruise_z());
                    self.behaviors.push_front(Behavior::Land);
                    self.behaviors.push_front(Behavior::GoTo { waypoint: above, speed: self.speed });
                    continue;
                }
                Behavior::Land => {
                    if obs.status.as_deref() == Some(vocab::STATUS_VALUES[2]) {
                        self.behaviors.pop_front();
                        self.enter(tick, Phase::Landed);
                        return Setpoint::Idle;
                    }
                    return Setpoint::Land;
                }
            }
        }
    }

    /// Appends a sweep leg before any trailing non-sweep behaviors. A drone
    /// already heading home after its own sweep turns back.
    fn push_leg(&mut self, tick: Tick, leg: SweepLeg) {
        if self.phase == Phase::Returning && self.return_reason == Some(ReturnReason::SweepComplete) {
            self.behaviors.clear();
            self.return_reason = None;
            self.enter(tick, Phase::Sweeping);
        }
        let sweep = Behavior::Sweep { area: leg.area, lane_spacing: self.lane_spacing, speed: self.speed };
        let at = self
            .behaviors
            .iter()
            .rposition(|b| matches!(b, Behavior::Sweep { .. }))
            .map(|i| i + 1)
            .unwrap_or(self.behaviors.len());
        self.behaviors.insert(at, sweep);
        self.legs.push_back(leg);
    }
}

/// Hands the failed drone's unswept work to `survivor`.
///
/// A drone grounded before takeoff has its whole area re-planned, entered
/// from the survivor's last waypoint. A drone that failed mid-sweep passes
/// on its remaining waypoints, starting from the last one it reached so the
/// interrupted lane is flown in full.
pub fn reassign_area(
    plans: &mut BTreeMap<String, MissionPlan>,
    failed: &str,
    survivor: &str,
    tick: Tick,
) -> Result<(), MissionError> {
    let f = plans.get(failed).ok_or_else(|| MissionError::UnknownDrone(failed.to_string()))?;
    if !plans.contains_key(survivor) {
        return Err(MissionError::UnknownDrone(survivor.to_string()));
    }
    if !f.has_failed() {
        return Err(MissionError::InvalidArgument(format!("{failed} has not failed")));
    }
    let s = &plans[survivor];
    if s.has_failed() || s.phase == Phase::Landed || failed == survivor {
        return Err(MissionError::Aborted { failed: failed.to_string() });
    }

    let handed: Vec<SweepLeg> = if f.phase == Phase::Grounded {
        let entry = s
            .legs
            .back()
            .and_then(|l| l.waypoints.last().copied())
            .unwrap_or_else(|| s.home.with_z(s.cruise_z()))
            .with_z(s.cruise_z());
        let waypoints = lawnmower_path(&f.assigned_area, s.lane_spacing, &entry)?;
        vec![SweepLeg { area: f.assigned_area, waypoints, next: 0 }]
    } else {
        f.handover.clone()
    };

    let total: usize = handed.iter().map(|l| l.waypoints.len()).sum();
    let s = plans.get_mut(survivor).expect("checked");
    for leg in handed {
        if leg.waypoints.is_empty() {
            continue;
        }
        let leg = SweepLeg { waypoints: leg.waypoints.iter().map(|w| w.with_z(s.cruise_z())).collect(), ..leg };
        s.push_leg(tick, leg);
    }
    s.record(tick, MissionEvent::AreaTaken { from_drone: failed.to_string(), waypoints: total });
    Ok(())
}
