//! Experiment configs on disk and calibration from recorded traces.
//!
//! An experiment file is TOML (or JSON when it ends in `.json`) with the
//! fields of `ExperimentConfig`, plus two conveniences:
//!
//! - `topology = "nodes.txt"` loads nodes from a topology file, resolved
//!   against the config's directory;
//! - a `[battery]` table generates nodes and triangles.
//!
//! Both add to any inline `nodes`/`triangles`.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use geoverity::cpv::{calibrate, CalibrationError, CalibrationGrid, CalibrationParams, Confusion, GroundTruthNode};
use geoverity::netsim::{generate_battery, parse_topology, BatterySpec, ExperimentConfig, TriangleTraces};
use serde_json::Value;

use crate::{read_file, CliError, Result};

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let text = read_file(path)?;
    let mut doc: serde_json::Map<String, Value> = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        serde_json::to_value(toml::from_str::<toml::Table>(&text)?)?
            .as_object()
            .cloned()
            .expect("a TOML document is a table")
    };
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(topo) = doc.remove("topology") {
        let file = topo.as_str().ok_or_else(|| CliError::Invalid("`topology` must be a path".into()))?;
        let nodes = parse_topology(&read_file(&base.join(file))?)?;
        append(&mut doc, "nodes", serde_json::to_value(nodes)?);
    }
    if let Some(spec) = doc.remove("battery") {
        let spec: BatterySpec = serde_json::from_value(spec)?;
        let battery = generate_battery(&spec);
        append(&mut doc, "nodes", serde_json::to_value(battery.nodes)?);
        append(&mut doc, "triangles", serde_json::to_value(battery.triangles)?);
    }
    Ok(serde_json::from_value(Value::Object(doc))?)
}

fn append(doc: &mut serde_json::Map<String, Value>, key: &str, items: Value) {
    let Value::Array(items) = items else { return };
    match doc.entry(key).or_insert_with(|| Value::Array(Vec::new())) {
        Value::Array(existing) => existing.extend(items),
        other => *other = Value::Array(items),
    }
}

/// Reads trace lines. Lines without a `triangle_id` belong to one
/// unnamed group.
pub fn read_traces<R: BufRead>(input: R) -> Result<BTreeMap<String, Vec<GroundTruthNode>>> {
    let mut groups: BTreeMap<String, Vec<GroundTruthNode>> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| CliError::Invalid(format!("trace line {}: {e}", i + 1));
        let value: Value = serde_json::from_str(&line).map_err(bad)?;
        let (id, node) = if value.get("triangle_id").is_some() {
            let t: TriangleTraces = serde_json::from_value(value).map_err(bad)?;
            (t.triangle_id, t.node)
        } else {
            (String::new(), serde_json::from_value(value).map_err(bad)?)
        };
        groups.entry(id).or_default().push(node);
    }
    Ok(groups)
}

/// Parses `a:b:step` or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Invalid(format!("bad grid `{spec}`: use `start:end:step` or `a,b,c`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let [start, end, step] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<f64>());
        let (start, end, step) = (start.map_err(|_| bad())?, end.map_err(|_| bad())?, step.map_err(|_| bad())?);
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let count = ((end - start) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| start + i as f64 * step).collect());
    }
    spec.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
}

/// Calibration result for one trace group.
#[derive(Debug)]
pub enum GroupCalibration {
    /// The tightest grid point with no errors on the ground truth.
    Separated(CalibrationParams),
    /// Nothing separated; the point with the fewest errors, as experiments use it.
    Best { params: CalibrationParams, confusion: Confusion },
    Failed(CalibrationError),
}

impl GroupCalibration {
    pub fn params(&self) -> Option<CalibrationParams> {
        match self {
            GroupCalibration::Separated(p) | GroupCalibration::Best { params: p, .. } => Some(*p),
            GroupCalibration::Failed(_) => None,
        }
    }
}

/// Calibrates every trace group on `grid`.
pub fn calibrate_groups(
    groups: &BTreeMap<String, Vec<GroundTruthNode>>,
    grid: &CalibrationGrid,
) -> Vec<(String, GroupCalibration)> {
    groups
        .iter()
        .map(|(id, nodes)| {
            let outcome = match calibrate(nodes, grid) {
                Ok(p) => GroupCalibration::Separated(p),
                Err(CalibrationError::Failed { best, confusion }) => GroupCalibration::Best { params: best, confusion },
                Err(e) => GroupCalibration::Failed(e),
            };
            (id.clone(), outcome)
        })
        .collect()
}

/// Verifier ids named by a triangle id such as `1-2-3`.
pub fn verifier_ids(triangle_id: &str) -> Option<[u16; 3]> {
    let ids: Vec<u16> = triangle_id
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok())
        .collect::<Option<_>>()?;
    ids.try_into().ok()
}

/// `[[calibrated]]` tables for a Manager config. Groups whose id does not
/// name three verifiers get a placeholder to fill in by hand.
pub fn calibration_toml(results: &[(String, GroupCalibration)]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for (id, result) in results {
        let label = if id.is_empty() { "traces" } else { id.as_str() };
        let Some(p) = result.params() else {
            if let GroupCalibration::Failed(e) = result {
                let _ = writeln!(out, "# {label}: not calibrated: {e}\n");
            }
            continue;
        };
        if let GroupCalibration::Best { confusion: c, .. } = result {
            let _ = writeln!(
                out,
                "# {label}: no separating point; best has {}/{} false rejects, {}/{} false accepts",
                c.false_rejects, c.inside_trials, c.false_accepts, c.outside_trials
            );
        }
        let _ = writeln!(out, "[[calibrated]]");
        if !id.is_empty() {
            let _ = writeln!(out, "triangle_id = {id:?}");
        }
        match verifier_ids(id) {
            Some([a, b, c]) => {
                let _ = writeln!(out, "verifiers = [{a}, {b}, {c}]");
            }
            None => {
                let _ = writeln!(out, "verifiers = [0, 0, 0]  # set to the triangle's verifier ids");
            }
        }
        let _ = writeln!(out, "epsilon_ms = {:?}\nn = {}\ntau = {:?}\n", p.epsilon_ms, p.n, p.tau);
    }
    out
}
