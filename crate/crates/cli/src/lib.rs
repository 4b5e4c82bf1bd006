//! Loading, overriding and running scenario files, and summarizing logs.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use taskmux::scenario::has_errors;
use taskmux::{Diagnostic, LogSeries, Mode, RunError, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable file or malformed scenario.
    Usage(String),
    Invalid(Vec<Diagnostic>),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Invalid(diags) => {
                for (k, d) in diags.iter().enumerate() {
                    if k > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "{d}")?;
                }
                Ok(())
            }
        }
    }
}

/// A parsed scenario with the name used in logs and summaries.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub name: String,
    pub path: PathBuf,
    pub config: ScenarioConfig,
}

/// Sets a scalar leaf at a dotted path (`merging.gamma`, `sim.q0.2`).
/// Missing object keys are created so optional sections can be overridden;
/// strict deserialization afterwards rejects misspelled keys.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{spec}' is not of the form key=value")))?;
    if path.is_empty() {
        return Err(CliError::Usage(format!("override '{spec}' has an empty key")));
    }
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    if value.is_object() || value.is_array() {
        return Err(CliError::Usage(format!("override '{path}': only scalar values can be set")));
    }
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    if map.get(*part).is_some_and(|v| v.is_object() || v.is_array()) {
                        return Err(CliError::Usage(format!("override '{path}' targets a non-scalar value")));
                    }
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Usage(format!("override '{path}': '{part}' is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Usage(format!("override '{path}': index {idx} out of range ({len})")))?;
                if last {
                    if slot.is_object() || slot.is_array() {
                        return Err(CliError::Usage(format!("override '{path}' targets a non-scalar value")));
                    }
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Usage(format!("override '{path}': '{part}' is below a scalar"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

pub fn parse_scenario(text: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("malformed scenario: {e}")))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("malformed scenario: {e}")))
}

pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<LoadedScenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let config = parse_scenario(&text, overrides)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into());
    Ok(LoadedScenario { name, path: path.to_path_buf(), config })
}

/// Validation diagnostics, failing on errors.
pub fn check(config: &ScenarioConfig) -> Result<Vec<Diagnostic>, CliError> {
    let diags = config.validate();
    if has_errors(&diags) {
        return Err(CliError::Invalid(diags));
    }
    Ok(diags)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: String,
    pub steps: usize,
    pub max_primary_error: f64,
    pub min_clearance: Option<f64>,
    pub min_joint_margin: Option<f64>,
    pub saturation_events: usize,
    pub wall_clock_s: f64,
}

impl RunSummary {
    /// Every metric except wall-clock time comes from the log alone.
    pub fn from_series(scenario: &str, series: &LogSeries, wall_clock_s: f64) -> Self {
        Self {
            scenario: scenario.to_string(),
            mode: series.mode.name().to_string(),
            steps: series.records.len(),
            max_primary_error: series.max_primary_error(),
            min_clearance: series.min_aux("clearance_"),
            min_joint_margin: series.min_aux("margin_"),
            saturation_events: series.saturation_events(),
            wall_clock_s,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

/// CSV path for a run: `output.csv` from the scenario, else `<name>_<mode>.csv`.
pub fn output_path(scn: &LoadedScenario) -> PathBuf {
    match &scn.config.output.csv {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(format!("{}_{}.csv", scn.name, scn.config.mode.name())),
    }
}

/// Runs a scenario, streaming its log to `csv`. The partial log is kept on abort.
pub fn run_scenario(scn: &LoadedScenario, csv: &Path) -> Result<(RunSummary, LogSeries), CliError> {
    check(&scn.config)?;
    let file = File::create(csv).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", csv.display())))?;
    let mut out = BufWriter::new(file);
    let start = Instant::now();
    match taskmux::run_to_writer(&scn.config, &mut out) {
        Ok(series) => {
            let summary = RunSummary::from_series(&scn.name, &series, start.elapsed().as_secs_f64());
            Ok((summary, series))
        }
        Err(RunError::Invalid(d)) => Err(CliError::Invalid(d)),
        Err(RunError::Aborted { t, reason, .. }) => {
            Err(CliError::Runtime(format!("run aborted at t = {t}: {reason}; partial log kept in {}", csv.display())))
        }
        Err(e) => Err(CliError::Runtime(e.to_string())),
    }
}

/// One row of the merged-vs-traditional table.
#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub metric: &'static str,
    pub merged: Option<f64>,
    pub traditional: Option<f64>,
}

impl Delta {
    pub fn delta(&self) -> Option<f64> {
        Some(self.merged? - self.traditional?)
    }
}

pub fn delta_table(merged: &RunSummary, traditional: &RunSummary) -> Vec<Delta> {
    vec![
        Delta {
            metric: "max_primary_error",
            merged: Some(merged.max_primary_error),
            traditional: Some(traditional.max_primary_error),
        },
        Delta { metric: "min_clearance", merged: merged.min_clearance, traditional: traditional.min_clearance },
        Delta { metric: "min_joint_margin", merged: merged.min_joint_margin, traditional: traditional.min_joint_margin },
        Delta {
            metric: "saturation_events",
            merged: Some(merged.saturation_events as f64),
            traditional: Some(traditional.saturation_events as f64),
        },
    ]
}

pub fn format_delta_table(rows: &[Delta]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
    let mut out = format!("{:<20} {:>14} {:>14} {:>14}\n", "metric", "merged", "traditional", "delta");
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:>14} {:>14} {:>14}\n",
            r.metric,
            cell(r.merged),
            cell(r.traditional),
            cell(r.delta())
        ));
    }
    out
}

/// Log paths for compare: `<stem>_merged.csv` and `<stem>_traditional.csv`
/// beside the configured output.
pub fn compare_paths(scn: &LoadedScenario) -> (PathBuf, PathBuf) {
    let base = match &scn.config.output.csv {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(format!("{}.csv", scn.name)),
    };
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| scn.name.clone());
    let dir = base.parent().map(Path::to_path_buf).unwrap_or_default();
    (dir.join(format!("{stem}_merged.csv")), dir.join(format!("{stem}_traditional.csv")))
}

/// Runs both modes concurrently with everything else identical.
pub fn compare(scn: &LoadedScenario) -> Result<(RunSummary, RunSummary), CliError> {
    check(&scn.config)?;
    let (merged_csv, trad_csv) = compare_paths(scn);
    let with_mode = |mode: Mode| {
        let mut s = scn.clone();
        s.config.mode = mode;
        s
    };
    let (merged, trad) = (with_mode(Mode::Merged), with_mode(Mode::Traditional));
    let (a, b) = std::thread::scope(|s| {
        let h = s.spawn(|| run_scenario(&merged, &merged_csv));
        let b = run_scenario(&trad, &trad_csv);
        (h.join().expect("rollout thread panicked"), b)
    });
    Ok((a?.0, b?.0))
}

/// Built-in subtask kinds with their parameters and defaults.
pub fn builtin_subtasks() -> &'static str {
    "obstacle_avoidance      point, obstacle, axes=[x,y,yaw], gain=1, threshold=0.5 m; one elementary subtask per axis
joint_limits            joints, lower, upper, margin=0.2 rad, gain=1; one per joint
joint_setpoint          joints, targets, gain=1; one per joint
singularity_avoidance   joints, point=ee, axes=[x,y,yaw], gain=1; one per joint (manipulability gradient)
all kinds               status_slope=100, status_range=0.05 (task status parameters)"
}
