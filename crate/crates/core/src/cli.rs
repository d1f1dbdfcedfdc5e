//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on a domain error, 2 on a usage error or unreadable input.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::graph::GraphSnapshot;
use crate::merge::{merge, LocalGraphSet};
use crate::retrieve::{match_edges, EdgePattern};
use crate::rules::{default_ruleset, rules_from_json, Rule};
use crate::sim::{has_errors, run_scenario, validate_config, WorldConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kgmission", version, about = "Knowledge-graph middleware for multi-drone missions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a scenario and write its report directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Rule set; the default search and rescue rules when omitted.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides max_ticks in the config.
        #[arg(long)]
        max_ticks: Option<u64>,
    },
    /// Match an edge pattern against a snapshot.
    Query {
        #[arg(long)]
        snapshot: PathBuf,
        /// JSON object with any of source_class, source_name, label,
        /// target_class, target_name.
        #[arg(long)]
        pattern: String,
    },
    /// Merge snapshots into one global graph.
    Merge {
        #[arg(required = true)]
        snapshots: Vec<PathBuf>,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Check a scenario config and print its diagnostics.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a snapshot as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        snapshot: PathBuf,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: String) -> Failure {
    Failure { code: EXIT_USAGE, message }
}

fn domain(message: String) -> Failure {
    Failure { code: EXIT_DOMAIN, message }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn snapshot(path: &Path) -> Result<GraphSnapshot, Failure> {
    GraphSnapshot::from_json(&read(path)?).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn config(path: &Path) -> Result<WorldConfig, Failure> {
    WorldConfig::from_json(&read(path)?).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn rules(path: Option<&Path>, config: &WorldConfig) -> Result<Vec<Rule>, Failure> {
    match path {
        Some(p) => rules_from_json(&read(p)?).map_err(|e| domain(format!("{}: {e}", p.display()))),
        None => {
            let names: Vec<String> = config.drones.iter().map(|d| d.name.clone()).collect();
            Ok(default_ruleset(&names, 2.0 * config.thresholds.close_distance))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| domain(format!("cannot write {}: {e}", path.display())))
}

fn execute(cmd: Cmd, out: &mut dyn Write) -> Result<(), Failure> {
    let io = |e: std::io::Error| domain(format!("output: {e}"));
    match cmd {
        Cmd::Run { config: path, rules: rules_path, out: dir, seed, max_ticks } => {
            let mut cfg = config(&path)?;
            if let Some(m) = max_ticks {
                cfg.max_ticks = m;
            }
            let rules = rules(rules_path.as_deref(), &cfg)?;
            let seed = seed.unwrap_or(cfg.seed);
            let report = run_scenario(cfg, rules, seed).map_err(|e| domain(e.to_string()))?;
            report.write_dir(&dir).map_err(|e| domain(e.to_string()))?;
            let t = report.termination;
            let reason = serde_json::to_value(t.reason).expect("reason serializes");
            writeln!(out, "terminated: {} at tick {}", reason.as_str().unwrap_or_default(), t.tick).map_err(io)?;
            if report.timed_out() {
                writeln!(out, "warning: max_ticks reached before the mission finished").map_err(io)?;
            }
        }
        Cmd::Query { snapshot: path, pattern } => {
            let pattern: EdgePattern =
                serde_json::from_str(&pattern).map_err(|e| usage(format!("invalid pattern: {e}")))?;
            if pattern.is_unconstrained() {
                return Err(usage("pattern must constrain at least one field".into()));
            }
            let snap = snapshot(&path)?;
            let result = match_edges(&snap, &pattern);
            let text = serde_json::to_string_pretty(&result).expect("query result serializes");
            writeln!(out, "{text}").map_err(io)?;
        }
        Cmd::Merge { snapshots, output } => {
            let mut locals = LocalGraphSet::new();
            for p in &snapshots {
                locals.insert(p.display().to_string(), snapshot(p)?);
            }
            let global = merge(&locals).map_err(|e| domain(e.to_string()))?;
            write_file(&output, &global.to_json())?;
            writeln!(out, "merged {} snapshots: {} nodes, {} edges", locals.len(), global.node_count(), global.edge_count())
                .map_err(io)?;
        }
        Cmd::Validate { config: path } => {
            let diagnostics = validate_config(&config(&path)?);
            for d in &diagnostics {
                writeln!(out, "{d}").map_err(io)?;
            }
            if has_errors(&diagnostics) {
                return Err(domain(format!("{} is invalid", path.display())));
            }
            if diagnostics.is_empty() {
                writeln!(out, "ok").map_err(io)?;
            }
        }
        Cmd::ExportDot { snapshot: path } => {
            write!(out, "{}", snapshot(&path)?.to_dot()).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
