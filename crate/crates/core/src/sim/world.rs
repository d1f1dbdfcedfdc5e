use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bus::{NavStatus, TopicMessage, TopicName};
use crate::geometry::{point_segment_distance, Pose};
use crate::graph::Tick;
use crate::mission::Setpoint;

use super::{SimError, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub pose: Pose,
    pub voltage: f64,
    pub status: NavStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonState {
    pub name: String,
    pub location: Pose,
    pub present: bool,
}

/// Ground truth. Only the simulator reads it; everyone else sees the bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: Tick,
    pub drones: BTreeMap<String, DroneState>,
    pub person: PersonState,
}

impl WorldState {
    /// Drones start landed at home. The seed only matters when the person
    /// is placed at random.
    pub fn new(config: &WorldConfig, seed: u64) -> Self {
        let drones = config
            .drones
            .iter()
            .map(|d| {
                (d.name.clone(), DroneState { pose: d.home, voltage: d.start_voltage(), status: NavStatus::Landed })
            })
            .collect();
        let p = &config.person;
        let location = match p.random_area {
            Some(a) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Pose::xyz(rng.gen_range(a.min_x..=a.max_x), rng.gen_range(a.min_y..=a.max_y), p.location.z)
            }
            None => p.location,
        };
        Self { tick: 0, drones, person: PersonState { name: p.name.clone(), location, present: p.present } }
    }

    /// Pose, battery and navigation status of every drone at the current tick.
    pub fn telemetry(&self) -> Vec<(TopicName, TopicMessage)> {
        let t = self.tick;
        let mut out = Vec::new();
        for (name, d) in &self.drones {
            out.push((TopicName::pose(name), TopicMessage::pose(name, d.pose, t)));
            out.push((TopicName::battery(name), TopicMessage::battery(name, d.voltage, t)));
            out.push((TopicName::nav_status(name), TopicMessage::nav_status(name, d.status, t)));
        }
        out
    }

    /// Advances one tick and returns the messages published during it.
    /// On error the world is left unchanged.
    pub fn step(
        &mut self,
        config: &WorldConfig,
        setpoints: &BTreeMap<String, Setpoint>,
    ) -> Result<Vec<(TopicName, TopicMessage)>, SimError> {
        if let Some(name) = setpoints.keys().find(|n| !self.drones.contains_key(*n)) {
            return Err(SimError::Setpoint { drone: name.clone(), reason: "unknown drone".into() });
        }
        let mut next = self.drones.clone();
        let tick = self.tick + 1;
        let mut detections = Vec::new();
        for d in &config.drones {
            let state = next.get_mut(&d.name).expect("world built from config");
            let flying = state.status == NavStatus::Flying;
            let setpoint = match setpoints.get(&d.name) {
                Some(s) => *s,
                None if flying => {
                    return Err(SimError::Setpoint { drone: d.name.clone(), reason: "airborne drone without setpoint".into() })
                }
                None => Setpoint::Idle,
            };
            let reject = |why: &str| SimError::Setpoint { drone: d.name.clone(), reason: format!("{setpoint:?}: {why}") };
            let reach = d.speed * config.tick_duration;
            let before = state.pose;
            match setpoint {
                Setpoint::Idle if flying => return Err(reject("drone is airborne")),
                Setpoint::Idle => {}
                Setpoint::Takeoff { altitude } => {
                    state.status = NavStatus::Flying;
                    let target = state.pose.with_z(d.home.z + altitude);
                    state.pose = state.pose.step_toward(&target, reach);
                }
                Setpoint::Hold | Setpoint::Position { .. } | Setpoint::Land if !flying => {
                    return Err(reject("drone is not airborne"))
                }
                Setpoint::Hold => {}
                Setpoint::Position { target, speed } => {
                    state.pose = state.pose.step_toward(&target, reach.min(speed * config.tick_duration));
                }
                Setpoint::Land => {
                    let ground = state.pose.with_z(d.home.z);
                    state.pose = state.pose.step_toward(&ground, reach);
                    if state.pose.z <= d.home.z {
                        state.status = NavStatus::Landed;
                    }
                }
            }
            let rate = if state.status == NavStatus::Flying { d.discharge_per_tick_flying } else { d.discharge_per_tick_idle };
            state.voltage = (state.voltage - rate).max(0.0);

            let p = &self.person;
            if p.present && state.status == NavStatus::Flying {
                let gap = point_segment_distance(
                    (p.location.x, p.location.y),
                    (before.x, before.y),
                    (state.pose.x, state.pose.y),
                );
                if gap <= config.thresholds.detection_radius {
                    detections.push(d.name.clone());
                }
            }
        }
        self.drones = next;
        self.tick = tick;
        let mut out = self.telemetry();
        for name in detections {
            out.push((TopicName::detection(&name), TopicMessage::detection(&name, true, self.person.location, tick)));
        }
        Ok(out)
    }
}
