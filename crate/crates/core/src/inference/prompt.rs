use std::collections::BTreeMap;
use std::path::Path;

use super::{InferenceError, PromptConfig};
use crate::descriptor::DatasetDescriptor;
use crate::types::{Problem, SpaceKind, Task};

pub(crate) const BUILTIN_TEMPLATE_ID: &str = "builtin-v1";

/// Editable prompt templates. Placeholders are written `{{name}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub soft_label: String,
    pub perspectivist: String,
    pub perspectives_section: String,
    pub judge: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            soft_label: include_str!("../../templates/soft_label.txt").into(),
            perspectivist: include_str!("../../templates/perspectivist.txt").into(),
            perspectives_section: include_str!("../../templates/perspectives.txt").into(),
            judge: include_str!("../../templates/judge.txt").into(),
        }
    }

    /// Loads overrides from `dir`; files that are absent keep the built-in
    /// text.
    pub fn load_dir(dir: &Path) -> Result<Self, InferenceError> {
        let mut t = Self::builtin();
        for (file, slot) in [
            ("soft_label.txt", &mut t.soft_label),
            ("perspectivist.txt", &mut t.perspectivist),
            ("perspectives.txt", &mut t.perspectives_section),
            ("judge.txt", &mut t.judge),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }
}

/// Single-pass `{{name}}` substitution. Substituted values are not
/// rescanned, so payload text containing braces is inserted verbatim.
pub fn render_template(
    template: &str,
    values: &BTreeMap<&str, String>,
) -> Result<String, InferenceError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| InferenceError::Template("unterminated placeholder".into()))?;
        let name = after[..end].trim();
        let value = values
            .get(name)
            .ok_or_else(|| InferenceError::UnknownPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Label positions print as integers when they are whole numbers.
pub fn format_label(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

pub(crate) fn render_input(
    problem: &Problem,
    descriptor: &DatasetDescriptor,
) -> Result<String, InferenceError> {
    let mut lines = Vec::with_capacity(descriptor.input_fields.len());
    for field in &descriptor.input_fields {
        let value = problem
            .payload
            .get(field)
            .ok_or_else(|| InferenceError::MissingField {
                problem: problem.id.clone(),
                field: field.clone(),
            })?;
        lines.push(format!("{field}: {value}"));
    }
    Ok(lines.join("\n"))
}

fn labels_line(descriptor: &DatasetDescriptor) -> String {
    let space = &descriptor.label_space;
    match space.kind() {
        SpaceKind::MultiCategory => format!(
            "any combination of {} (each annotator may choose several)",
            space.category_names().join(", ")
        ),
        _ => space
            .positions()
            .iter()
            .map(|&p| format_label(p))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn output_format(descriptor: &DatasetDescriptor, annotators: &[String]) -> String {
    let space = &descriptor.label_space;
    let steps = r#""steps": ["<first logical step>", "<second logical step>", "..."]"#;
    let prediction = match (descriptor.task, space.kind()) {
        (Task::SoftLabel, SpaceKind::MultiCategory) => {
            let body = space
                .category_names()
                .iter()
                .map(|c| format!("\"{c}\": <share of annotators selecting {c}>"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{{{body}}}")
        }
        (Task::SoftLabel, _) => {
            let body = space
                .positions()
                .iter()
                .map(|&p| format!("\"{}\": <probability>", format_label(p)))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{{{body}}}")
        }
        (Task::Perspectivist, SpaceKind::MultiCategory) => {
            let body = annotators
                .iter()
                .map(|a| format!("\"{a}\": [<selected categories>]"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{{{body}}}")
        }
        (Task::Perspectivist, _) => {
            let body = annotators
                .iter()
                .map(|a| format!("\"{a}\": <label>"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{{{body}}}")
        }
    };
    let mut text = format!(
        "Answer with one JSON object with separate fields for your reasoning steps and your \
         prediction:\n{{{steps}, \"prediction\": {prediction}}}\nEach step is one coherent, \
         logical step of your reasoning."
    );
    if descriptor.task == Task::SoftLabel && space.kind() != SpaceKind::MultiCategory {
        text.push_str(" The probabilities must be non-negative and sum to 1.");
    }
    text
}

/// Deterministic prompt for one problem.
pub fn build_prompt(
    problem: &Problem,
    descriptor: &DatasetDescriptor,
    cfg: &PromptConfig,
    templates: &Templates,
) -> Result<String, InferenceError> {
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    values.insert("task_description", descriptor.task_description.clone());
    values.insert("input", render_input(problem, descriptor)?);
    values.insert("labels", labels_line(descriptor));
    let definition = if cfg.include_definition {
        let def = descriptor
            .definition
            .as_ref()
            .ok_or_else(|| InferenceError::DefinitionUnavailable(descriptor.name.clone()))?;
        format!("\nDefinition. {def}\n")
    } else {
        String::new()
    };
    values.insert("definition_section", definition);
    let perspectives = if cfg.include_perspectives {
        format!("\n{}", templates.perspectives_section.trim_end())
    } else {
        String::new()
    };
    values.insert("perspectives_section", perspectives);
    values.insert(
        "output_format",
        output_format(descriptor, &problem.annotators),
    );
    let template = match descriptor.task {
        Task::SoftLabel => {
            let note = match descriptor.label_space.kind() {
                SpaceKind::MultiCategory => {
                    " Because annotators may select several categories, give for each category \
                     the share of annotators who selected it."
                        .to_string()
                }
                _ => String::new(),
            };
            values.insert("soft_label_note", note);
            &templates.soft_label
        }
        Task::Perspectivist => {
            values.insert("annotators", problem.annotators.join(", "));
            let info = problem
                .payload
                .get("annotator_metadata")
                .map(|m| format!("\nAnnotator information:\n{m}\n"))
                .unwrap_or_default();
            values.insert("annotator_info", info);
            &templates.perspectivist
        }
    };
    render_template(template, &values)
}
