use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::extract::Thresholds;
use crate::geometry::{Pose, Rect};

fn default_altitude() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneConfig {
    pub name: String,
    pub home: Pose,
    pub area: Rect,
    pub full_voltage: f64,
    pub discharge_per_tick_flying: f64,
    pub discharge_per_tick_idle: f64,
    pub speed: f64,
    /// Starting voltage; a full battery when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_voltage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_name: Option<String>,
}

/// `drone_0` -> `battery_0`; other names get a `battery_` prefix.
fn derived(prefix: &str, drone: &str) -> String {
    match drone.strip_prefix("drone_") {
        Some(suffix) => format!("{prefix}_{suffix}"),
        None => format!("{prefix}_{drone}"),
    }
}

impl DroneConfig {
    pub fn battery(&self) -> String {
        self.battery_name.clone().unwrap_or_else(|| derived("battery", &self.name))
    }

    pub fn home_station(&self) -> String {
        self.home_name.clone().unwrap_or_else(|| derived("home", &self.name))
    }

    pub fn start_voltage(&self) -> f64 {
        self.initial_voltage.unwrap_or(self.full_voltage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonConfig {
    pub name: String,
    pub location: Pose,
    pub present: bool,
    /// When set, the location is drawn uniformly from this area using the
    /// run seed and `location` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_area: Option<Rect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub drones: Vec<DroneConfig>,
    pub person: PersonConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub tick_duration: f64,
    pub max_ticks: u64,
    #[serde(default)]
    pub seed: u64,
    /// Cruise altitude above the home station, meters.
    #[serde(default = "default_altitude")]
    pub altitude: f64,
    /// Sweep lane spacing; twice the detection radius when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_spacing: Option<f64>,
}

impl WorldConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn effective_lane_spacing(&self) -> f64 {
        self.lane_spacing.unwrap_or(2.0 * self.thresholds.detection_radius)
    }

    pub fn drone(&self, name: &str) -> Option<&DroneConfig> {
        self.drones.iter().find(|d| d.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

/// Every invariant violation as an error, plus warnings for overlapping
/// areas and lane spacing too wide for full sensor coverage.
pub fn validate_config(config: &WorldConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut error = |m: String| out.push(Diagnostic { severity: Severity::Error, message: m });
    let positive = |v: f64| v.is_finite() && v > 0.0;

    if config.drones.is_empty() {
        error("no drones configured".into());
    }
    let mut names = BTreeSet::new();
    let mut entities = BTreeSet::new();
    for d in &config.drones {
        let n = &d.name;
        if n.is_empty() {
            error("drone name must be non-empty".into());
        } else if !names.insert(n.as_str()) {
            error(format!("duplicate drone name '{n}'"));
        }
        for entity in [d.battery(), d.home_station()] {
            if !entities.insert(entity.clone()) {
                error(format!("drone '{n}': entity name '{entity}' is used twice"));
            }
        }
        if !d.home.is_finite() {
            error(format!("drone '{n}': home pose must be finite"));
        }
        if !d.area.is_valid() {
            error(format!("drone '{n}': area must have positive width and height"));
        }
        if !positive(d.full_voltage) {
            error(format!("drone '{n}': full_voltage must be positive"));
        }
        if !positive(d.speed) {
            error(format!("drone '{n}': speed must be positive"));
        }
        let (fly, idle) = (d.discharge_per_tick_flying, d.discharge_per_tick_idle);
        if !(fly.is_finite() && fly >= 0.0 && idle.is_finite() && idle >= 0.0) {
            error(format!("drone '{n}': discharge rates must be non-negative"));
        } else if fly < idle {
            error(format!("drone '{n}': flying discharge must be at least the idle discharge"));
        }
        if let Some(v) = d.initial_voltage {
            if !(v.is_finite() && v >= 0.0 && v <= d.full_voltage) {
                error(format!("drone '{n}': initial_voltage must lie in [0, full_voltage]"));
            }
        }
    }
    if config.person.name.is_empty() {
        error("person name must be non-empty".into());
    }
    if !config.person.location.is_finite() {
        error("person location must be finite".into());
    }
    if config.person.random_area.is_some_and(|a| !a.is_valid()) {
        error("person random_area must have positive width and height".into());
    }
    for m in config.thresholds.validate() {
        error(format!("thresholds: {m}"));
    }
    if !positive(config.tick_duration) {
        error("tick_duration must be positive".into());
    }
    if config.max_ticks == 0 {
        error("max_ticks must be positive".into());
    }
    if !positive(config.altitude) {
        error("altitude must be positive".into());
    }
    let spacing = config.effective_lane_spacing();
    if !positive(spacing) {
        error("lane_spacing must be positive".into());
    } else {
        for d in config.drones.iter().filter(|d| d.area.is_valid()) {
            if spacing > d.area.width().min(d.area.height()) {
                error(format!("drone '{}': lane spacing {spacing} exceeds the smaller side of its area", d.name));
            }
        }
    }

    let mut warn = |m: String| out.push(Diagnostic { severity: Severity::Warning, message: m });
    for (i, a) in config.drones.iter().enumerate() {
        for b in &config.drones[i + 1..] {
            if a.area.is_valid() && b.area.is_valid() && a.area.overlaps(&b.area) {
                warn(format!("areas of '{}' and '{}' overlap", a.name, b.name));
            }
        }
    }
    if positive(spacing) && spacing > 2.0 * config.thresholds.detection_radius {
        warn(format!(
            "lane spacing {spacing} exceeds twice the detection radius {}; parts of the areas may go unseen",
            config.thresholds.detection_radius
        ));
    }
    out
}
