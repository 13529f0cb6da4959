use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::DataError;
use crate::descriptor::DatasetDescriptor;
use crate::types::{
    category_key, validate_soft_label, LabelError, LabelSpace, PerspectivistPrediction, Problem,
    SoftLabel, SoftPrediction, SpaceKind,
};

/// One line of a canonical dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalRecord {
    pub id: String,
    pub payload: BTreeMap<String, Value>,
    /// Annotator id to label. Multi-category spaces take a list of category
    /// names per annotator.
    #[serde(default)]
    pub annotations: BTreeMap<String, Value>,
    /// Annotators to predict for; defaults to the keys of `annotations`.
    #[serde(default)]
    pub annotators: Option<Vec<String>>,
    /// Target distribution, preferred over the empirical one.
    #[serde(default)]
    pub soft_label: Option<Value>,
    #[serde(default)]
    pub metadata: Option<Value>,
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn scalar_label(v: &Value) -> Result<f64, String> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| format!("bad label {n}")),
        Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| format!("label `{s}` is not a number")),
        other => Err(format!("label {other} is not a number")),
    }
}

fn category_set(v: &Value, space: &LabelSpace) -> Result<BTreeSet<usize>, String> {
    let names: Vec<String> = match v {
        Value::Array(items) => items.iter().map(value_text).collect(),
        Value::String(s) => s
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect(),
        other => return Err(format!("category list expected, got {other}")),
    };
    let cats = space.category_names();
    names
        .iter()
        .map(|name| {
            let lower = name.to_lowercase();
            cats.iter()
                .position(|c| *c == lower)
                .or_else(|| lower.parse::<usize>().ok().filter(|&i| i < cats.len()))
                .ok_or_else(|| format!("unknown category `{name}`"))
        })
        .collect()
}

/// Weights of a provided target, from an array or a label-keyed object.
fn provided_part(v: &Value, space: &LabelSpace, len: usize) -> Result<Vec<f64>, String> {
    match v {
        Value::Array(items) => items.iter().map(scalar_label).collect(),
        Value::Object(map) => {
            let mut w = vec![0.0; len];
            for (key, x) in map {
                let pos: f64 = key
                    .trim()
                    .parse()
                    .map_err(|_| format!("soft-label key `{key}` is not a number"))?;
                let idx = if space.kind() == SpaceKind::MultiCategory {
                    Some(pos as usize).filter(|&i| pos.fract() == 0.0 && i < len)
                } else {
                    space.index_of(pos)
                };
                let idx =
                    idx.ok_or_else(|| format!("soft-label key `{key}` not in label space"))?;
                w[idx] = scalar_label(x)?;
            }
            Ok(w)
        }
        Value::Number(_) if space.kind() == SpaceKind::MultiCategory => {
            let f = scalar_label(v)?;
            Ok(vec![1.0 - f, f])
        }
        other => Err(format!("unsupported soft-label shape {other}")),
    }
}

fn provided_soft(v: &Value, space: &LabelSpace) -> Result<SoftPrediction, String> {
    let raw_parts: Vec<Vec<f64>> = match space.kind() {
        SpaceKind::MultiCategory => match v {
            Value::Object(map) => space
                .category_names()
                .iter()
                .map(|c| {
                    map.get(c)
                        .ok_or_else(|| format!("soft label lacks category `{c}`"))
                        .and_then(|p| provided_part(p, space, 2))
                })
                .collect::<Result<_, _>>()?,
            Value::Array(parts) => parts
                .iter()
                .map(|p| provided_part(p, space, 2))
                .collect::<Result<_, _>>()?,
            other => return Err(format!("unsupported soft-label shape {other}")),
        },
        _ => vec![provided_part(v, space, space.len())?],
    };
    let parts = raw_parts
        .iter()
        .map(|w| validate_soft_label(w, space).map(|v| v.label))
        .collect::<Result<Vec<_>, LabelError>>()
        .map_err(|e| e.to_string())?;
    let pred = SoftPrediction::from_parts(parts);
    pred.check(space).map_err(|e| e.to_string())?;
    Ok(pred)
}

/// Builds a problem from one record. Errors are plain messages; callers add
/// the location.
pub fn parse_canonical_line(
    record: CanonicalRecord,
    descriptor: &DatasetDescriptor,
) -> Result<Problem, String> {
    let space = &descriptor.label_space;
    if record.id.is_empty() {
        return Err("empty `id`".into());
    }
    for field in &descriptor.input_fields {
        if !record.payload.contains_key(field) {
            return Err(format!("payload lacks field `{field}`"));
        }
    }
    let mut payload: BTreeMap<String, String> = record
        .payload
        .iter()
        .map(|(k, v)| (k.clone(), value_text(v)))
        .collect();
    if let Some(meta) = record
        .metadata
        .as_ref()
        .and_then(|m| m.get("annotator_metadata"))
    {
        payload.insert("annotator_metadata".into(), value_text(meta));
    }
    let annotators: Vec<String> = record
        .annotators
        .clone()
        .unwrap_or_else(|| record.annotations.keys().cloned().collect());
    if !descriptor.annotator_ids.is_empty() {
        if let Some(a) = annotators
            .iter()
            .chain(record.annotations.keys())
            .find(|a| !descriptor.annotator_ids.contains(a))
        {
            return Err(format!("annotator `{a}` is not in the descriptor roster"));
        }
    }

    let mut persp = BTreeMap::new();
    let mut soft = None;
    match space.kind() {
        SpaceKind::MultiCategory => {
            let cats = space.category_names();
            let mut selected = vec![0u64; cats.len()];
            for (annotator, v) in &record.annotations {
                let set = category_set(v, space)?;
                for (i, cat) in cats.iter().enumerate() {
                    let on = set.contains(&i);
                    selected[i] += on as u64;
                    persp.insert(category_key(annotator, cat), if on { 1.0 } else { 0.0 });
                }
            }
            let n = record.annotations.len() as u64;
            if n > 0 {
                let parts = selected
                    .iter()
                    .map(|&k| SoftLabel::from_counts(&[n - k, k]))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?;
                soft = Some(SoftPrediction::from_parts(parts));
            }
        }
        _ => {
            let mut counts = vec![0u64; space.len()];
            for (annotator, v) in &record.annotations {
                let label = scalar_label(v)?;
                let idx = space.index_of(label).ok_or_else(|| {
                    format!("annotator `{annotator}` label {label} is not in the label space")
                })?;
                counts[idx] += 1;
                persp.insert(annotator.clone(), space.positions()[idx]);
            }
            if !record.annotations.is_empty() {
                soft = Some(SoftPrediction::single(
                    SoftLabel::from_counts(&counts).map_err(|e| e.to_string())?,
                ));
            }
        }
    }
    if let Some(v) = &record.soft_label {
        soft = Some(provided_soft(v, space)?);
    }
    Ok(Problem {
        id: record.id,
        dataset: descriptor.name.clone(),
        payload,
        annotators,
        human_soft: soft,
        human_persp: (!persp.is_empty()).then(|| PerspectivistPrediction::from_trusted(persp)),
    })
}

fn schema_error(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Schema {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Converts one entry of a LeWiDi-style JSON file (an object keyed by item
/// id) to a canonical record.
fn lewidi_record(id: &str, item: &Value) -> Result<CanonicalRecord, String> {
    let obj = item.as_object().ok_or("item is not an object")?;
    let payload = match obj.get("text") {
        Some(Value::Object(m)) => m.clone().into_iter().collect(),
        Some(other) => BTreeMap::from([("text".to_string(), other.clone())]),
        None => return Err("item has no `text`".into()),
    };
    let annotations: BTreeMap<String, Value> = match obj.get("annotations") {
        Some(Value::Object(m)) => m.clone().into_iter().collect(),
        Some(Value::Null) | None => BTreeMap::new(),
        Some(other) => return Err(format!("unsupported annotations {other}")),
    };
    let annotators = match obj.get("annotators") {
        Some(Value::String(s)) => Some(
            s.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
        ),
        Some(Value::Array(a)) => Some(a.iter().map(value_text).collect()),
        _ => None,
    };
    let metadata = obj
        .iter()
        .filter(|(k, _)| {
            !matches!(
                k.as_str(),
                "text" | "annotations" | "annotators" | "soft_label"
            )
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect::<serde_json::Map<_, _>>();
    Ok(CanonicalRecord {
        id: id.to_string(),
        payload,
        annotations,
        annotators,
        soft_label: obj.get("soft_label").filter(|v| !v.is_null()).cloned(),
        metadata: (!metadata.is_empty()).then_some(Value::Object(metadata)),
    })
}

/// Loads a dataset. `.jsonl` files use the canonical schema, one record per
/// line; `.json` files are read as a LeWiDi-style object keyed by item id.
pub fn load_dataset(
    path: &Path,
    descriptor: &DatasetDescriptor,
) -> Result<Vec<Problem>, DataError> {
    descriptor.check()?;
    let text = std::fs::read_to_string(path)?;
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    if path.extension().is_some_and(|e| e == "json") {
        let root: Value =
            serde_json::from_str(&text).map_err(|e| schema_error(path, e.line(), e.to_string()))?;
        let items = root
            .as_object()
            .ok_or_else(|| schema_error(path, 1, "expected an object keyed by item id"))?;
        for (id, item) in items {
            let problem = lewidi_record(id, item)
                .and_then(|r| parse_canonical_line(r, descriptor))
                .map_err(|m| schema_error(path, 0, format!("item `{id}`: {m}")))?;
            problems.push(problem);
        }
    } else {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: CanonicalRecord =
                serde_json::from_str(line).map_err(|e| schema_error(path, i + 1, e.to_string()))?;
            if !seen.insert(record.id.clone()) {
                return Err(schema_error(
                    path,
                    i + 1,
                    format!("duplicate id `{}`", record.id),
                ));
            }
            problems.push(
                parse_canonical_line(record, descriptor)
                    .map_err(|m| schema_error(path, i + 1, m))?,
            );
        }
    }
    Ok(problems)
}
