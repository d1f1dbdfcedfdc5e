use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::bus::{Bus, Payload, TopicMessage, TopicName};
use crate::extract::{apply_proximity, AgentExtractor, ExtractError};
use crate::graph::{GraphSnapshot, KnowledgeGraph, Tick};
use crate::merge::{merge, LocalGraphSet};
use crate::mission::{reassign_area, MissionError, MissionPlan, Phase, Setpoint, Signal};
use crate::rules::{Command, IssuedCommand, Rule, RuleEngine};

use super::{has_errors, validate_config, RunReport, SimError, Termination, TerminationReason, TraceRow, WorldConfig, WorldState};

/// Name under which the knowledge base's own derived graph joins the merge.
pub const DERIVED_AGENT: &str = "kb";

type Shared<T> = Rc<RefCell<T>>;

/// One scenario in progress. Each [`Simulation::step`] runs the fixed
/// pipeline: physics, bus drain, extraction, proximity inference, merge,
/// rules, missions.
pub struct Simulation {
    config: WorldConfig,
    seed: u64,
    world: WorldState,
    bus: Bus,
    locals: BTreeMap<String, Shared<KnowledgeGraph>>,
    ingest_errors: Shared<Vec<ExtractError>>,
    inbox: Shared<Vec<Signal>>,
    derived: KnowledgeGraph,
    engine: RuleEngine,
    plans: BTreeMap<String, MissionPlan>,
    setpoints: BTreeMap<String, Setpoint>,
    global: GraphSnapshot,
    commands: Vec<IssuedCommand>,
    traces: BTreeMap<String, Vec<TraceRow>>,
    handed_over: BTreeSet<String>,
    aborted: bool,
    started: bool,
    termination: Option<Termination>,
}

impl Simulation {
    pub fn new(config: WorldConfig, rules: Vec<Rule>, seed: u64) -> Result<Self, SimError> {
        let diagnostics = validate_config(&config);
        if has_errors(&diagnostics) {
            return Err(SimError::InvalidConfig(diagnostics));
        }
        let world = WorldState::new(&config, seed);
        let mut bus = Bus::with_trace();
        let ingest_errors: Shared<Vec<ExtractError>> = Rc::default();
        let mut locals = BTreeMap::new();
        let mut plans = BTreeMap::new();
        let spacing = config.effective_lane_spacing();

        for d in &config.drones {
            let extractor = AgentExtractor {
                agent: d.name.clone(),
                battery: d.battery(),
                home: d.home_station(),
                person: config.person.name.clone(),
                full_voltage: d.full_voltage,
                thresholds: config.thresholds,
            };
            let mut graph = KnowledgeGraph::new();
            graph.apply_batch(&extractor.bootstrap(d.home), 0)?;
            let graph = Rc::new(RefCell::new(graph));
            for b in extractor.bindings() {
                let topic = b.topic.expect("drone extractors are topic driven");
                let (graph, errors, extractor) = (graph.clone(), ingest_errors.clone(), extractor.clone());
                bus.subscribe(topic, move |_, msg, _| {
                    if let Err(e) = extractor.ingest(&mut graph.borrow_mut(), msg) {
                        errors.borrow_mut().push(e);
                    }
                });
            }
            locals.insert(d.name.clone(), graph);
            plans.insert(d.name.clone(), MissionPlan::new(&d.name, d.home, d.area, config.altitude, d.speed, spacing)?);
        }

        let inbox: Shared<Vec<Signal>> = Rc::default();
        let sink = inbox.clone();
        bus.subscribe(TopicName::located_signal(), move |_, msg, _| {
            if let Payload::Detection { agent, found: true, location } = &msg.payload {
                sink.borrow_mut().push(Signal::Located { from: agent.clone(), location: *location, tick: msg.tick });
            }
        });

        let traces = config.drones.iter().map(|d| (d.name.clone(), Vec::new())).collect();
        Ok(Self {
            seed,
            world,
            bus,
            locals,
            ingest_errors,
            inbox,
            derived: KnowledgeGraph::new(),
            engine: RuleEngine::new(rules)?,
            plans,
            setpoints: BTreeMap::new(),
            global: GraphSnapshot::empty(),
            commands: Vec::new(),
            traces,
            handed_over: BTreeSet::new(),
            aborted: false,
            started: false,
            termination: None,
            config,
        })
    }

    pub fn tick(&self) -> Tick {
        self.world.tick
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn global(&self) -> &GraphSnapshot {
        &self.global
    }

    pub fn plans(&self) -> &BTreeMap<String, MissionPlan> {
        &self.plans
    }

    pub fn local_graphs(&self) -> LocalGraphSet {
        self.locals.iter().map(|(a, g)| (a.clone(), g.borrow().snapshot())).collect()
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.termination.as_ref()
    }

    /// Runs one tick. The first call publishes the initial telemetry
    /// without moving anything.
    pub fn step(&mut self) -> Result<Option<&Termination>, SimError> {
        if self.termination.is_some() {
            return Ok(self.termination.as_ref());
        }
        let messages = if self.started {
            self.world.step(&self.config, &self.setpoints)?
        } else {
            self.started = true;
            self.world.telemetry()
        };
        let tick = self.world.tick;
        for (topic, msg) in messages {
            self.bus.publish(topic, msg)?;
        }
        self.bus.drain(tick);
        if let Some(e) = self.ingest_errors.borrow_mut().drain(..).next() {
            return Err(e.into());
        }

        let mut snapshots = self.local_graphs();
        let perceived = merge(&snapshots)?;
        apply_proximity(&mut self.derived, &perceived, &self.config.thresholds, tick)?;
        snapshots.insert(DERIVED_AGENT.to_string(), self.derived.snapshot());
        self.global = merge(&snapshots)?;

        let issued = self.engine.step(&self.global)?;
        let signals: Vec<Signal> = std::mem::take(&mut *self.inbox.borrow_mut());
        let mut setpoints = BTreeMap::new();
        let mut reassignments = Vec::new();
        for (name, plan) in self.plans.iter_mut() {
            let mine: Vec<Command> = issued
                .iter()
                .map(|c| &c.command)
                .filter(|c| c.target() == name)
                .filter(|c| match c {
                    Command::ReassignArea { from_drone, to_drone } => {
                        reassignments.push((from_drone.clone(), to_drone.clone()));
                        false
                    }
                    _ => true,
                })
                .cloned()
                .collect();
            let (sp, out) = plan.execute_tick(&self.global, &mine, &signals, tick)?;
            for Signal::Located { from, location, tick } in out {
                self.bus.publish(TopicName::located_signal(), TopicMessage::detection(&from, true, location, tick))?;
            }
            setpoints.insert(name.clone(), sp);
        }
        self.commands.extend(issued);

        for (from, to) in reassignments {
            if self.handed_over.contains(&from) {
                continue;
            }
            match reassign_area(&mut self.plans, &from, &to, tick) {
                Ok(()) => {
                    self.handed_over.insert(from);
                }
                Err(e) => log::warn!("tick {tick}: reassign {from} -> {to} refused: {e}"),
            }
        }
        self.hand_over_failures(tick)?;
        self.setpoints = setpoints;

        for (name, rows) in self.traces.iter_mut() {
            let d = &self.world.drones[name];
            rows.push(TraceRow { tick, x: d.pose.x, y: d.pose.y, z: d.pose.z, phase: self.plans[name].phase });
        }

        self.termination = self.check_termination(tick);
        if let Some(t) = &self.termination {
            log::info!("tick {tick}: terminated ({:?})", t.reason);
        }
        Ok(self.termination.as_ref())
    }

    /// Each newly failed drone passes its work to the first healthy drone
    /// by name. No healthy drone left means the mission is aborted.
    fn hand_over_failures(&mut self, tick: Tick) -> Result<(), SimError> {
        let failed: Vec<String> = self
            .plans
            .iter()
            .filter(|(n, p)| p.has_failed() && !self.handed_over.contains(*n))
            .map(|(n, _)| n.clone())
            .collect();
        for f in failed {
            self.handed_over.insert(f.clone());
            if self.plans.values().any(|p| p.phase == Phase::Responding && !p.has_failed()) {
                continue;
            }
            let survivor = self
                .plans
                .iter()
                .find(|(n, p)| **n != f && !p.has_failed() && p.phase != Phase::Landed)
                .map(|(n, _)| n.clone());
            match survivor {
                Some(s) => match reassign_area(&mut self.plans, &f, &s, tick) {
                    Ok(()) => log::info!("tick {tick}: {s} takes over the area of {f}"),
                    Err(MissionError::Aborted { .. }) => self.aborted = true,
                    Err(e) => return Err(e.into()),
                },
                None => {
                    log::warn!("tick {tick}: no drone can take over from {f}, aborting");
                    self.aborted = true;
                }
            }
        }
        Ok(())
    }

    fn check_termination(&self, tick: Tick) -> Option<Termination> {
        let plans: Vec<&MissionPlan> = self.plans.values().collect();
        let settled = |p: &MissionPlan| matches!(p.phase, Phase::Landed | Phase::Grounded);
        let reason = if plans.iter().any(|p| p.phase == Phase::Responding)
            && plans.iter().all(|p| p.is_hovering() || settled(p))
        {
            Some(TerminationReason::Located)
        } else if plans.iter().all(|p| settled(p)) {
            Some(if self.aborted { TerminationReason::Aborted } else { TerminationReason::SweepComplete })
        } else if tick + 1 >= self.config.max_ticks {
            Some(TerminationReason::Timeout)
        } else {
            None
        };
        reason.map(|reason| Termination { reason, tick })
    }

    /// Runs until termination and assembles the report.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        while self.step()?.is_none() {}
        Ok(self.into_report())
    }

    pub fn into_report(self) -> RunReport {
        let termination = self
            .termination
            .unwrap_or(Termination { reason: TerminationReason::Timeout, tick: self.world.tick });
        let mission_log = {
            let mut log: Vec<_> = self.plans.values().flat_map(|p| p.log.iter().cloned()).collect();
            log.sort_by(|a, b| (a.tick, &a.drone).cmp(&(b.tick, &b.drone)));
            log
        };
        RunReport {
            termination,
            seed: self.seed,
            person_location: self.world.person.location,
            person_present: self.world.person.present,
            final_phases: self.plans.iter().map(|(n, p)| (n.clone(), p.phase)).collect(),
            commands: self.commands,
            mission_log,
            final_graph: self.global,
            traces: self.traces,
            messages: self.bus.trace().to_vec(),
        }
    }
}

pub fn run_scenario(config: WorldConfig, rules: Vec<Rule>, seed: u64) -> Result<RunReport, SimError> {
    Simulation::new(config, rules, seed)?.run()
}
