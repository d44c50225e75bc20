//! Per-line schema checks for every JSONL format the tools emit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::IoError;
use crate::geometry::NORM_MAX;
use crate::grounding::{find_markup, parse_markup, GroundingSample, TaskKind as GroundingKind, Geometry, GROUNDING_SCHEMA};
use crate::planning::{parse_step, PlanningSample, Trajectory, PLANNING_SCHEMA, TRAJECTORY_SCHEMA};
use crate::sim::annotate::INDOMAIN_SCHEMA;
use crate::sim::eval::EPISODE_SCHEMA;
use crate::sim::{EpisodeRecord, InDomainQA, FEATURE_DIM, MAX_DELTA};
use crate::spatial::{SpatialQA, SPATIAL_SCHEMA};

pub const SCHEMAS: [&str; 6] =
    [GROUNDING_SCHEMA, SPATIAL_SCHEMA, EPISODE_SCHEMA, INDOMAIN_SCHEMA, PLANNING_SCHEMA, TRAJECTORY_SCHEMA];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn typed<T: DeserializeOwned>(v: &Value) -> Result<T, String> {
    T::deserialize(v).map_err(|e| format!("missing or malformed field: {e}"))
}

fn check_grounding(v: &Value) -> Result<(), String> {
    let s: GroundingSample = typed(v)?;
    let g = &s.norm_geometry;
    if let Some(bad) = g.iter().find(|c| **c > NORM_MAX) {
        return Err(format!("coordinate {bad} outside [0, {NORM_MAX}]"));
    }
    let want = if s.task_kind == GroundingKind::PointFromText { 2 } else { 4 };
    if s.task_kind != GroundingKind::TextFromCoords && g.len() != want {
        return Err(format!("{} needs {want} coordinates, found {}", s.task_kind, g.len()));
    }
    if g.len() != 2 && g.len() != 4 {
        return Err(format!("norm_geometry must have 2 or 4 values, found {}", g.len()));
    }
    if g.len() == 4 && (g[0] > g[2] || g[1] > g[3]) {
        return Err("box corners out of order".into());
    }
    let field = s.markup_field();
    let m = if s.task_kind == GroundingKind::TextFromCoords { find_markup(field) } else { parse_markup(field) };
    let m = m.map_err(|e| format!("markup: {e}"))?;
    if m.values() != *g {
        return Err(format!("markup {:?} disagrees with norm_geometry {g:?}", m.values()));
    }
    Ok(())
}

fn check_spatial(v: &Value) -> Result<(), String> {
    let s: SpatialQA = typed(v)?;
    if s.question.is_empty() || s.answer.is_empty() {
        return Err("empty question or answer".into());
    }
    match (&s.choices, s.answer_index) {
        (Some(c), Some(i)) => {
            if c.get(i) != Some(&s.answer) {
                return Err(format!("answer_index {i} does not select the answer"));
            }
        }
        (None, None) => {}
        _ => return Err("choices and answer_index must appear together".into()),
    }
    if s.value.is_some_and(|x| !x.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(())
}

fn check_episode(v: &Value) -> Result<(), String> {
    let e: EpisodeRecord = typed(v)?;
    if e.states.len() != e.actions.len() + 1 {
        return Err(format!("{} states for {} actions", e.states.len(), e.actions.len()));
    }
    if e.steps_used != e.actions.len() {
        return Err("steps_used differs from the action count".into());
    }
    for (i, a) in e.actions.iter().enumerate() {
        if a.dx.abs() > MAX_DELTA || a.dy.abs() > MAX_DELTA || a.grip.abs() > 1.0 {
            return Err(format!("action {i} outside the action limits"));
        }
    }
    let last = e.states.last().expect("at least one state");
    if e.task.success(last) != e.success {
        return Err("success flag disagrees with the final state".into());
    }
    Ok(())
}

fn check_indomain(v: &Value) -> Result<(), String> {
    let q: InDomainQA = typed(v)?;
    if q.features.len() != FEATURE_DIM || q.features.iter().any(|f| !f.is_finite()) {
        return Err(format!("features must be {FEATURE_DIM} finite numbers"));
    }
    if q.answer.contains('<') {
        let g = find_markup(&q.answer).map_err(|e| format!("markup: {e}"))?;
        if let Geometry::Box(b) = g {
            if b.x1 > b.x2 || b.y1 > b.y2 {
                return Err("box corners out of order".into());
            }
        }
    }
    Ok(())
}

fn check_planning(v: &Value) -> Result<(), String> {
    let s: PlanningSample = typed(v)?;
    let step = parse_step(&s.response, s.step_index + 1)?;
    let allowed = s.prompt.split("Allowed actions: ").nth(1).and_then(|r| r.split(". ").next()).unwrap_or("");
    if !allowed.split(", ").any(|a| a == step.action.name) {
        return Err(format!("action {} is not in the allowed list", step.action));
    }
    Ok(())
}

fn check_trajectory(v: &Value) -> Result<(), String> {
    let t: Trajectory = typed(v)?;
    if t.task.allowed_actions.is_empty() || t.task.max_steps == 0 {
        return Err("task needs allowed actions and max_steps >= 1".into());
    }
    if t.steps.len() > t.task.max_steps {
        return Err(format!("{} steps exceed max_steps {}", t.steps.len(), t.task.max_steps));
    }
    if let Some(s) = t.steps.iter().find(|s| !t.task.allowed_actions.contains(&s.action.name)) {
        return Err(format!("action {} is not allowed", s.action));
    }
    Ok(())
}

/// Check one parsed line against `schema`, or against its own `schema`
/// key when `schema` is `None`.
pub fn check_record(v: &Value, schema: Option<&str>) -> Result<(), String> {
    let declared = v.get("schema").and_then(Value::as_str).ok_or("missing \"schema\" key")?;
    if let Some(want) = schema {
        if declared != want {
            return Err(format!("schema {declared:?}, expected {want:?}"));
        }
    }
    match declared {
        GROUNDING_SCHEMA => check_grounding(v),
        SPATIAL_SCHEMA => check_spatial(v),
        EPISODE_SCHEMA => check_episode(v),
        INDOMAIN_SCHEMA => check_indomain(v),
        PLANNING_SCHEMA => check_planning(v),
        TRAJECTORY_SCHEMA => check_trajectory(v),
        other => Err(format!("unknown schema {other:?}")),
    }
}

pub fn validate_str(text: &str, schema: Option<&str>) -> ValidationReport {
    let mut report = ValidationReport { records: 0, violations: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let result = serde_json::from_str::<Value>(line)
            .map_err(|e| format!("invalid JSON: {e}"))
            .and_then(|v| check_record(&v, schema));
        if let Err(message) = result {
            report.violations.push(Violation { line: i + 1, message });
        }
    }
    report
}

/// Validate a JSONL file. The file is only read.
pub fn validate(path: impl AsRef<Path>, schema: Option<&str>) -> Result<ValidationReport, IoError> {
    if let Some(s) = schema {
        if !SCHEMAS.contains(&s) {
            return Err(IoError::Config(format!("unknown schema {s:?}; known: {}", SCHEMAS.join(", "))));
        }
    }
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    Ok(validate_str(&text, schema))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{generate_grounding_samples, synthetic_mask_records, GroundingConfig, TemplateCaptionProvider};
    use crate::io::jsonl;

    fn grounding_text() -> String {
        let recs = synthetic_mask_records(2, 60);
        let out = generate_grounding_samples(&recs, &TemplateCaptionProvider, &GroundingConfig::default()).unwrap();
        String::from_utf8(jsonl::to_bytes(&out.samples)).unwrap()
    }

    #[test]
    fn generated_grounding_is_clean() {
        let r = validate_str(&grounding_text(), Some(GROUNDING_SCHEMA));
        assert_eq!(r.records, 60);
        assert!(r.is_valid(), "{:?}", r.violations);
    }

    #[test]
    fn out_of_range_coordinate_is_reported_at_its_line() {
        let text = grounding_text();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut v: Value = serde_json::from_str(&lines[6]).unwrap();
        v["norm_geometry"][0] = Value::from(1001);
        lines[6] = v.to_string();
        let r = validate_str(&lines.join("\n"), None);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].line, 7);
        assert!(r.violations[0].message.contains("1001"));
    }

    #[test]
    fn empty_file_is_valid() {
        let r = validate_str("", None);
        assert_eq!(r, ValidationReport { records: 0, violations: vec![] });
    }

    #[test]
    fn missing_keys_and_bad_json() {
        let r = validate_str("{\"schema\":\"spatial/1\"}\nnot json\n{}\n", None);
        let lines: Vec<usize> = r.violations.iter().map(|v| v.line).collect();
        assert_eq!(lines, vec![1, 2, 3]);
        let r = validate_str(&grounding_text(), Some(SPATIAL_SCHEMA));
        assert_eq!(r.violations.len(), r.records);
    }
}
