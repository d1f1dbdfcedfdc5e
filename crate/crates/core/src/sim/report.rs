use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bus::TraceRecord;
use crate::geometry::Pose;
use crate::graph::{GraphSnapshot, Tick};
use crate::mission::{LogEntry, Phase};
use crate::rules::IssuedCommand;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// The person was located and every flying drone holds position.
    Located,
    /// Every drone is back on the ground without a detection.
    SweepComplete,
    /// No drone was left to finish the sweep.
    Aborted,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Termination {
    pub reason: TerminationReason,
    pub tick: Tick,
}

/// Ground-truth pose of one drone at the end of a tick, with its phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: Tick,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub termination: Termination,
    pub seed: u64,
    pub person_location: Pose,
    pub person_present: bool,
    pub final_phases: BTreeMap<String, Phase>,
    pub commands: Vec<IssuedCommand>,
    pub mission_log: Vec<LogEntry>,
    #[serde(skip)]
    pub final_graph: GraphSnapshot,
    #[serde(skip)]
    pub traces: BTreeMap<String, Vec<TraceRow>>,
    #[serde(skip)]
    pub messages: Vec<TraceRecord>,
}

fn write(path: &Path, contents: &[u8]) -> Result<(), SimError> {
    fs::write(path, contents).map_err(|source| SimError::Io { path: path.display().to_string(), source })
}

impl RunReport {
    pub fn timed_out(&self) -> bool {
        self.termination.reason == TerminationReason::Timeout
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn trace_csv(&self, drone: &str) -> Option<String> {
        let rows = self.traces.get(drone)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).expect("in-memory csv");
        }
        Some(String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8"))
    }

    pub fn messages_jsonl(&self) -> String {
        self.messages.iter().map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n").collect()
    }

    /// Writes report.json, final_graph.json, final_graph.dot,
    /// messages.jsonl and one `<drone>.trace.csv` per drone into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(|source| SimError::Io { path: dir.display().to_string(), source })?;
        write(&dir.join("report.json"), self.to_json().as_bytes())?;
        write(&dir.join("final_graph.json"), self.final_graph.to_json().as_bytes())?;
        write(&dir.join("final_graph.dot"), self.final_graph.to_dot().as_bytes())?;
        write(&dir.join("messages.jsonl"), self.messages_jsonl().as_bytes())?;
        for name in self.traces.keys() {
            let csv = self.trace_csv(name).expect("known drone");
            write(&dir.join(format!("{name}.trace.csv")), csv.as_bytes())?;
        }
        Ok(())
    }
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_csv_layout() {
        let row = TraceRow { tick: 3, x: 1.5, y: -2.0, z: 5.0, phase: Phase::Sweeping };
        let report = RunReport {
            termination: Termination { reason: TerminationReason::Timeout, tick: 3 },
            seed: 0,
            person_location: Pose::default(),
            person_present: false,
            final_phases: BTreeMap::new(),
            commands: vec![],
            mission_log: vec![],
            final_graph: GraphSnapshot::empty(),
            traces: BTreeMap::from([("drone_0".to_string(), vec![row])]),
            messages: vec![],
        };
        let csv = report.trace_csv("drone_0").unwrap();
        assert_eq!(csv, "tick,x,y,z,phase\n3,1.5,-2.0,5.0,Sweeping\n");
        assert_eq!(parse_trace_csv(&csv).unwrap(), vec![row]);
        assert!(report.timed_out());
        assert!(report.to_json().contains("\"reason\": \"timeout\""));
    }
}
