//! Lenient extraction of the structured answer from free model output.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{Map, Value};

use crate::descriptor::DatasetDescriptor;
use crate::types::{
    category_key, validate_soft_label, Compliance, LabelSpace, PerspectivistPrediction, Prediction,
    Sample, SoftPrediction, SpaceKind, Task, TokenCounts,
};

/// Outcome of parsing one answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub prediction: Option<Prediction>,
    pub steps: Vec<String>,
    pub compliance: Compliance,
    /// Why the answer was rejected, for non-compliant outputs.
    pub reason: Option<String>,
}

impl ParsedAnswer {
    fn reject(reason: impl Into<String>) -> Self {
        Self {
            prediction: None,
            steps: Vec::new(),
            compliance: Compliance::NonCompliant,
            reason: Some(reason.into()),
        }
    }
}

/// End of the balanced `{...}` block starting at byte `start`, honouring
/// JSON string quoting.
fn matching_brace(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset);
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the outermost JSON objects in `text` and returns the last one that
/// has a `prediction` field. Surrounding prose and code fences are ignored.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let mut found = None;
    let mut pos = 0;
    while let Some(rel) = text[pos..].find('{') {
        let start = pos + rel;
        match matching_brace(text, start) {
            Some(end) => {
                if let Ok(Value::Object(obj)) = serde_json::from_str(&text[start..=end]) {
                    if obj.contains_key("prediction") {
                        found = Some(obj);
                    }
                    pos = end + 1;
                } else {
                    pos = start + 1;
                }
            }
            None => pos = start + 1,
        }
    }
    found
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Weights for one part, from an array or a label-keyed object. Labels
/// omitted from an object count as zero.
fn weights_for(value: &Value, space: &LabelSpace) -> Result<Vec<f64>, String> {
    match value {
        Value::Array(items) => items
            .iter()
            .map(|v| as_number(v).ok_or_else(|| format!("non-numeric weight {v}")))
            .collect(),
        Value::Object(map) => {
            let mut weights = vec![0.0; space.len()];
            let mut seen = BTreeSet::new();
            for (key, v) in map {
                let position: f64 = key
                    .trim()
                    .parse()
                    .map_err(|_| format!("label key `{key}` is not a number"))?;
                let idx = space
                    .index_of(position)
                    .ok_or_else(|| format!("label `{key}` is not in the label space"))?;
                if !seen.insert(idx) {
                    return Err(format!("label `{key}` given twice"));
                }
                weights[idx] = as_number(v).ok_or_else(|| format!("non-numeric weight {v}"))?;
            }
            Ok(weights)
        }
        other => Err(format!("unexpected soft label shape {other}")),
    }
}

fn parse_soft(value: &Value, space: &LabelSpace) -> Result<(SoftPrediction, bool), String> {
    let raw_parts: Vec<Vec<f64>> = match space.kind() {
        SpaceKind::MultiCategory => {
            let map = value
                .as_object()
                .ok_or("multi-category prediction must be an object")?;
            space
                .category_names()
                .iter()
                .map(|cat| {
                    let v = map
                        .get(cat)
                        .ok_or_else(|| format!("category `{cat}` missing"))?;
                    match as_number(v) {
                        Some(share) => Ok(vec![1.0 - share, share]),
                        None => weights_for(v, space),
                    }
                })
                .collect::<Result<_, String>>()?
        }
        _ => vec![weights_for(value, space)?],
    };
    let mut renormalized = false;
    let mut parts = Vec::with_capacity(raw_parts.len());
    for raw in raw_parts {
        let v = validate_soft_label(&raw, space).map_err(|e| e.to_string())?;
        renormalized |= v.renormalized;
        parts.push(v.label);
    }
    Ok((SoftPrediction::from_parts(parts), renormalized))
}

fn parse_persp(
    value: &Value,
    space: &LabelSpace,
    annotators: &[String],
) -> Result<PerspectivistPrediction, String> {
    let map = value
        .as_object()
        .ok_or("perspectivist prediction must be an object")?;
    let mut labels = BTreeMap::new();
    for (annotator, v) in map {
        if !annotators.is_empty() && !annotators.contains(annotator) {
            continue;
        }
        if space.kind() == SpaceKind::MultiCategory {
            let chosen: BTreeSet<String> = match v {
                Value::Array(items) => items
                    .iter()
                    .map(|c| {
                        c.as_str()
                            .map(|s| s.trim().to_lowercase())
                            .ok_or_else(|| format!("category {c} is not text"))
                    })
                    .collect::<Result<_, _>>()?,
                Value::Object(flags) => flags
                    .iter()
                    .filter(|(_, f)| as_number(f).is_some_and(|x| x > 0.5))
                    .map(|(c, _)| c.trim().to_lowercase())
                    .collect(),
                other => return Err(format!("unexpected category set {other}")),
            };
            if let Some(unknown) = chosen.iter().find(|c| !space.category_names().contains(c)) {
                return Err(format!("unknown category `{unknown}`"));
            }
            for cat in space.category_names() {
                let flag = if chosen.contains(cat) { 1.0 } else { 0.0 };
                labels.insert(category_key(annotator, cat), flag);
            }
        } else {
            let label = as_number(v).ok_or_else(|| format!("label {v} is not a number"))?;
            let idx = space
                .index_of(label)
                .ok_or_else(|| format!("label {label} is not in the label space"))?;
            labels.insert(annotator.clone(), space.positions()[idx]);
        }
    }
    if let Some(missing) = annotators.iter().find(|a| {
        !labels.contains_key(a.as_str())
            && !space
                .category_names()
                .first()
                .is_some_and(|c| labels.contains_key(&category_key(a, c)))
    }) {
        return Err(format!("annotator `{missing}` has no label"));
    }
    if labels.is_empty() {
        return Err("prediction names no annotators".into());
    }
    Ok(PerspectivistPrediction::from_trusted(labels))
}

/// Parses the answer text of one generation. Never fails: anything that
/// cannot be read becomes a non-compliant answer with a reason.
pub fn parse_answer(
    raw: &str,
    annotators: &[String],
    descriptor: &DatasetDescriptor,
) -> ParsedAnswer {
    let Some(obj) = extract_json_object(raw) else {
        return ParsedAnswer::reject("no JSON object with a `prediction` field");
    };
    let steps: Vec<String> = match obj.get("steps") {
        Some(Value::Array(items)) => {
            let mut steps = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) if !s.trim().is_empty() => steps.push(s.trim().to_string()),
                    Value::String(_) => {}
                    other => return ParsedAnswer::reject(format!("step {other} is not text")),
                }
            }
            steps
        }
        _ => return ParsedAnswer::reject("missing `steps` list"),
    };
    if steps.is_empty() {
        return ParsedAnswer::reject("empty `steps` list");
    }
    let value = &obj["prediction"];
    let space = &descriptor.label_space;
    let (prediction, compliance) = match descriptor.task {
        Task::SoftLabel => match parse_soft(value, space) {
            Ok((p, renormalized)) => (
                Prediction::SoftLabel(p),
                if renormalized {
                    Compliance::Renormalized
                } else {
                    Compliance::Compliant
                },
            ),
            Err(reason) => return ParsedAnswer::reject(reason),
        },
        Task::Perspectivist => match parse_persp(value, space, annotators) {
            Ok(p) => (Prediction::Perspectivist(p), Compliance::Compliant),
            Err(reason) => return ParsedAnswer::reject(reason),
        },
    };
    ParsedAnswer {
        prediction: Some(prediction),
        steps,
        compliance,
        reason: None,
    }
}

/// Wraps [`parse_answer`] into a [`Sample`] that keeps the raw text.
pub fn parse_sample(
    problem_id: &str,
    index: usize,
    raw: &str,
    annotators: &[String],
    descriptor: &DatasetDescriptor,
) -> Sample {
    let parsed = parse_answer(raw, annotators, descriptor);
    Sample {
        problem_id: problem_id.to_string(),
        index,
        prediction: parsed.prediction,
        steps: parsed.steps,
        raw_text: raw.to_string(),
        raw_reasoning: String::new(),
        token_counts: TokenCounts::default(),
        compliance: parsed.compliance,
    }
}
