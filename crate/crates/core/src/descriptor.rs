//! Dataset descriptors: label space, task, metric selection and the input
//! fields a prompt shows.

use serde::{Deserialize, Serialize};

use crate::types::{LabelError, LabelSpace, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftMetric {
    Wasserstein,
    Manhattan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerspMetric {
    ErrorRate,
    AbsDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: String,
    pub dev: String,
    pub test: String,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: "train".into(),
            dev: "dev".into(),
            test: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub label_space: LabelSpace,
    pub task: Task,
    pub soft_metric: SoftMetric,
    pub persp_metric: PerspMetric,
    /// Empty means the roster is taken from the data.
    #[serde(default)]
    pub annotator_ids: Vec<String>,
    #[serde(default)]
    pub splits: Splits,
    /// Payload fields rendered into prompts, in order.
    pub input_fields: Vec<String>,
    /// What is being annotated, in one or two sentences.
    pub task_description: String,
    /// Optional dictionary-style definition of the annotated phenomenon.
    #[serde(default)]
    pub definition: Option<String>,
}

const BUILTIN_NAMES: [&str; 4] = ["CSC", "MP", "PAR", "VEN"];

impl DatasetDescriptor {
    /// Descriptors for the four shared-task datasets.
    pub fn builtin(name: &str, task: Task) -> Option<Self> {
        let upper = name.to_ascii_uppercase();
        let d = match upper.as_str() {
            "CSC" => Self {
                name: "CSC".into(),
                label_space: LabelSpace::likert(1, 6),
                task,
                soft_metric: SoftMetric::Wasserstein,
                persp_metric: PerspMetric::AbsDistance,
                annotator_ids: Vec::new(),
                splits: Splits::default(),
                input_fields: vec!["context".into(), "response".into()],
                task_description: "Sarcasm detection in conversation. Given a context and a \
                                   response, annotators rated how sarcastic the response is on a \
                                   6-point scale from 1 (not at all sarcastic) to 6 (completely \
                                   sarcastic)."
                    .into(),
                definition: Some(
                    "Sarcasm: saying the opposite of what you mean, usually to mock, criticise or \
                     be funny at someone's expense."
                        .into(),
                ),
            },
            "MP" => Self {
                name: "MP".into(),
                label_space: LabelSpace::binary(),
                task,
                soft_metric: SoftMetric::Manhattan,
                persp_metric: PerspMetric::ErrorRate,
                annotator_ids: Vec::new(),
                splits: Splits::default(),
                input_fields: vec!["post".into(), "reply".into()],
                task_description: "Irony detection in social media threads. Given a post and a \
                                   reply, annotators labelled the reply as ironic (1) or not \
                                   ironic (0)."
                    .into(),
                definition: Some(
                    "Irony: using words that mean something different from, often the opposite \
                     of, what is literally said, typically for humorous or emphatic effect."
                        .into(),
                ),
            },
            "PAR" => Self {
                name: "PAR".into(),
                label_space: LabelSpace::likert(-5, 5),
                task,
                soft_metric: SoftMetric::Wasserstein,
                persp_metric: PerspMetric::AbsDistance,
                annotator_ids: Vec::new(),
                splits: Splits::default(),
                input_fields: vec!["question1".into(), "question2".into()],
                task_description: "Paraphrase detection. Annotators rated how strongly two \
                                   questions are paraphrases of one another on a scale from -5 \
                                   (clearly not paraphrases) to 5 (clearly paraphrases)."
                    .into(),
                definition: None,
            },
            "VEN" => Self {
                name: "VEN".into(),
                label_space: LabelSpace::multi_category(["entailment", "contradiction", "neutral"])
                    .expect("static categories"),
                task,
                soft_metric: SoftMetric::Manhattan,
                persp_metric: PerspMetric::ErrorRate,
                annotator_ids: Vec::new(),
                splits: Splits::default(),
                input_fields: vec!["context".into(), "statement".into()],
                task_description: "Natural language inference. For a context and a statement, \
                                   annotators could assign any number of the categories \
                                   entailment, contradiction and neutral."
                    .into(),
                definition: None,
            },
            _ => return None,
        };
        Some(d)
    }

    /// Checks the fixed metric assignment of the built-in datasets.
    pub fn check(&self) -> Result<(), LabelError> {
        let expected = match self.name.as_str() {
            "CSC" | "PAR" => Some((SoftMetric::Wasserstein, PerspMetric::AbsDistance)),
            "MP" | "VEN" => Some((SoftMetric::Manhattan, PerspMetric::ErrorRate)),
            _ => None,
        };
        if let Some((soft, persp)) = expected {
            if (self.soft_metric, self.persp_metric) != (soft, persp) {
                return Err(LabelError::InvalidSpace(format!(
                    "{} must use {soft:?} and {persp:?}",
                    self.name
                )));
            }
        }
        if self.persp_metric == PerspMetric::AbsDistance
            && self.label_space.kind() != crate::types::SpaceKind::OrderedScale
        {
            return Err(LabelError::InvalidSpace(
                "absolute distance needs an ordered scale".into(),
            ));
        }
        Ok(())
    }

    pub fn is_builtin(&self) -> bool {
        BUILTIN_NAMES.contains(&self.name.as_str())
    }

    pub fn with_task(mut self, task: Task) -> Self {
        self.task = task;
        self
    }

    pub fn metric_name(&self) -> &'static str {
        match self.task {
            Task::SoftLabel => match self.soft_metric {
                SoftMetric::Wasserstein => "wasserstein",
                SoftMetric::Manhattan => "manhattan",
            },
            Task::Perspectivist => match self.persp_metric {
                PerspMetric::ErrorRate => "error-rate",
                PerspMetric::AbsDistance => "abs-distance",
            },
        }
    }
}
