#![allow(dead_code)]

use std::path::PathBuf;

use kgmission::geometry::Rect;
use kgmission::rules::{default_ruleset, Rule};
use kgmission::sim::{TraceRow, WorldConfig};

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_path(name: &str) -> PathBuf {
    workspace().join("scenarios").join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> WorldConfig {
    let text = std::fs::read_to_string(scenario_path(name)).unwrap();
    WorldConfig::from_json(&text).unwrap()
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

pub fn rules_for(config: &WorldConfig) -> Vec<Rule> {
    let names: Vec<String> = config.drones.iter().map(|d| d.name.clone()).collect();
    default_ruleset(&names, 2.0 * config.thresholds.close_distance)
}

pub type Segment = ((f64, f64), (f64, f64));

/// Horizontal segments flown off the ground, one per tick.
pub fn flown_segments(rows: &[TraceRow], ground_z: f64) -> Vec<Segment> {
    rows.windows(2)
        .filter(|w| w[1].z > ground_z)
        .map(|w| ((w[0].x, w[0].y), (w[1].x, w[1].y)))
        .collect()
}

/// Distance from `p` to segment `a`-`b` by projection onto the segment's
/// parameter range.
pub fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Largest distance from any 0.5 m grid sample of `areas` to the nearest
/// flown segment.
pub fn worst_gap(areas: &[Rect], segments: &[Segment]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in areas {
        for p in a.grid(0.5) {
            let d = segments.iter().map(|&(s, e)| seg_dist(p, s, e)).fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    worst
}
