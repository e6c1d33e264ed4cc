//! Prompt rendering for teacher rationale extraction and student
//! confidence elicitation.
//!
//! Templates are plain text with `{question}`, `{options}` (`A. x B. y`) and
//! `{option_list}` (`A: x, B: y`) placeholders. One template exists per
//! (template id, task kind); the built-in set lives under `templates/` and a
//! directory with the same file names can replace any of them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{TaskItem, TaskKind};

pub const ANSWER_ANCHOR: &str = "Answer and Confidence (0-100):";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    CotExtraction,
    ConfidenceInference,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::CotExtraction => "cot_extraction",
            TemplateId::ConfidenceInference => "confidence_inference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_id: TemplateId,
    pub item_id: String,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("cannot read template {name}: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
}

const TEMPLATE_VERSION: &str = "v1";

const BUILTIN: [(TemplateId, TaskKind, &str); 4] = [
    (
        TemplateId::CotExtraction,
        TaskKind::Sentiment,
        include_str!("../templates/cot_extraction.sentiment.v1.txt"),
    ),
    (
        TemplateId::CotExtraction,
        TaskKind::MultipleChoice,
        include_str!("../templates/cot_extraction.multiple_choice.v1.txt"),
    ),
    (
        TemplateId::ConfidenceInference,
        TaskKind::Sentiment,
        include_str!("../templates/confidence_inference.sentiment.v1.txt"),
    ),
    (
        TemplateId::ConfidenceInference,
        TaskKind::MultipleChoice,
        include_str!("../templates/confidence_inference.multiple_choice.v1.txt"),
    ),
];

pub fn template_file_name(id: TemplateId, kind: TaskKind) -> String {
    format!("{}.{}.{TEMPLATE_VERSION}.txt", id.as_str(), kind.as_str())
}

/// The four templates in use for a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<(TemplateId, TaskKind, String)>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> TemplateSet {
        TemplateSet {
            templates: BUILTIN
                .iter()
                .map(|(id, kind, text)| (*id, *kind, strip_final_newline(text).to_string()))
                .collect(),
        }
    }

    /// Built-in templates, replaced by any same-named file found in `dir`.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet, TemplateError> {
        let mut set = TemplateSet::builtin();
        for (id, kind, text) in &mut set.templates {
            let name = template_file_name(*id, *kind);
            let path = dir.join(&name);
            if path.is_file() {
                let raw = fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    name: name.clone(),
                    source,
                })?;
                validate_template(&name, &raw)?;
                *text = strip_final_newline(&raw).to_string();
            }
        }
        Ok(set)
    }

    pub fn template(&self, id: TemplateId, kind: TaskKind) -> &str {
        self.templates
            .iter()
            .find(|(i, k, _)| *i == id && *k == kind)
            .map(|(_, _, t)| t.as_str())
            .expect("every (id, kind) pair is populated")
    }

    pub fn render(&self, id: TemplateId, item: &TaskItem) -> RenderedPrompt {
        RenderedPrompt {
            text: fill(self.template(id, item.task_kind), item),
            template_id: id,
            item_id: item.id.clone(),
        }
    }
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

fn validate_template(name: &str, text: &str) -> Result<(), TemplateError> {
    let invalid = |reason: &str| TemplateError::Invalid {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    if !text.contains("{question}") {
        return Err(invalid("missing {question} placeholder"));
    }
    if !text.contains("{options}") && !text.contains("{option_list}") {
        return Err(invalid("missing {options} or {option_list} placeholder"));
    }
    if text.matches(ANSWER_ANCHOR).count() != 1 {
        return Err(invalid("must contain the answer anchor exactly once"));
    }
    Ok(())
}

/// "A. Positive B. Negative"
pub fn inline_options(item: &TaskItem) -> String {
    item.options
        .iter()
        .map(|o| format!("{}. {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join(" ")
}

/// "A: Positive, B: Negative"
pub fn option_list(item: &TaskItem) -> String {
    item.options
        .iter()
        .map(|o| format!("{}: {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join(", ")
}

// Single left-to-right pass so placeholder-like text inside a question is
// never substituted a second time.
fn fill(template: &str, item: &TaskItem) -> String {
    const SLOTS: [&str; 3] = ["{question}", "{options}", "{option_list}"];
    let mut out = String::with_capacity(template.len() + item.question.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        match SLOTS.iter().find(|s| tail.starts_with(**s)) {
            Some(&slot) => {
                match slot {
                    "{question}" => out.push_str(&item.question),
                    "{options}" => out.push_str(&inline_options(item)),
                    _ => out.push_str(&option_list(item)),
                }
                rest = &tail[slot.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_cot_prompt(item: &TaskItem) -> RenderedPrompt {
    TemplateSet::builtin().render(TemplateId::CotExtraction, item)
}

pub fn render_inference_prompt(item: &TaskItem) -> RenderedPrompt {
    TemplateSet::builtin().render(TemplateId::ConfidenceInference, item)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use proptest::prelude::*;

    fn sentiment(q: &str) -> TaskItem {
        TaskItem::new(
            "s1",
            TaskKind::Sentiment,
            q,
            &["Positive", "Negative"],
            Label::new('A').unwrap(),
            "sst2",
        )
        .unwrap()
    }

    #[test]
    fn cot_prompt_embeds_instruction_and_options() {
        let p = render_cot_prompt(&sentiment("A rollicking good time for the most part."));
        assert_eq!(p.template_id, TemplateId::CotExtraction);
        assert!(p.text.contains("analyze the sentiment step by step"));
        assert!(p
            .text
            .contains("Explanation: [insert step-by-step analysis here]"));
        assert!(p.text.contains("if your confidence level is 80%"));
        assert!(p.text.ends_with(
            "Question: A rollicking good time for the most part. Options: A. Positive B. Negative"
        ));
        assert_eq!(p.text.matches(ANSWER_ANCHOR).count(), 1);
    }

    #[test]
    fn inference_prompt_matches_reference_layout() {
        let q = "it shows us a slice of life that's very different from our own and yet instantly recognizable";
        let p = render_inference_prompt(&sentiment(q));
        assert!(p.text.starts_with(
            "Read this sentence, select the correct sentiment for it and give the option letter: A: Positive, B: Negative."
        ));
        assert!(p.text.contains("if your confidence level is 80%"));
        assert!(p.text.ends_with(&format!("Sentence: [{q}]")));
    }

    #[test]
    fn rendering_is_pure() {
        let item = sentiment("fine");
        assert_eq!(render_cot_prompt(&item), render_cot_prompt(&item));
        assert_eq!(
            render_inference_prompt(&item).text,
            render_inference_prompt(&item).text
        );
    }

    #[test]
    fn four_option_item_lists_letters_in_order() {
        let item = TaskItem::new(
            "m1",
            TaskKind::MultipleChoice,
            "Which is a mammal?",
            &["shark", "whale", "trout", "squid"],
            Label::new('B').unwrap(),
            "arc",
        )
        .unwrap();
        let text = render_cot_prompt(&item).text;
        let positions: Vec<usize> = ["A. shark", "B. whale", "C. trout", "D. squid"]
            .iter()
            .map(|needle| text.find(needle).expect("option rendered"))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(!text.contains("analyze the sentiment"));
    }

    #[test]
    fn bracket_in_question_survives_verbatim() {
        let q = "the plot [sic] is thin ] but charming";
        let p = render_inference_prompt(&sentiment(q));
        assert!(p.text.contains(&format!("[{q}]")));
    }

    #[test]
    fn placeholder_text_in_question_is_not_expanded() {
        let p = render_cot_prompt(&sentiment("what about {options}?"));
        assert!(p
            .text
            .contains("Question: what about {options}? Options: A. Positive"));
    }

    #[test]
    fn template_dir_overrides_one_file() {
        let dir = tempfile::tempdir().unwrap();
        let name = template_file_name(TemplateId::ConfidenceInference, TaskKind::Sentiment);
        fs::write(
            dir.path().join(name),
            "Classify: {question} ({option_list})\nAnswer and Confidence (0-100):\n",
        )
        .unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        let p = set.render(TemplateId::ConfidenceInference, &sentiment("ok"));
        assert_eq!(
            p.text,
            "Classify: ok (A: Positive, B: Negative)\nAnswer and Confidence (0-100):"
        );
        // untouched templates stay built-in
        assert_eq!(
            set.template(TemplateId::CotExtraction, TaskKind::Sentiment),
            TemplateSet::builtin().template(TemplateId::CotExtraction, TaskKind::Sentiment)
        );
    }

    #[test]
    fn template_without_anchor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let name = template_file_name(TemplateId::CotExtraction, TaskKind::MultipleChoice);
        fs::write(dir.path().join(name), "{question} {options}").unwrap();
        assert!(matches!(
            TemplateSet::from_dir(dir.path()),
            Err(TemplateError::Invalid { .. })
        ));
    }

    #[test]
    fn builtin_templates_are_valid() {
        for (id, kind, text) in BUILTIN {
            validate_template(&template_file_name(id, kind), text).unwrap();
        }
    }

    proptest! {
        #[test]
        fn anchor_once_and_question_injective(a in "[a-zA-Z0-9 ,.'\\[\\]!?]{1,60}", b in "[a-zA-Z0-9 ,.'\\[\\]!?]{1,60}") {
            prop_assume!(!a.trim().is_empty() && !b.trim().is_empty());
            for id in [TemplateId::CotExtraction, TemplateId::ConfidenceInference] {
                let set = TemplateSet::builtin();
                let pa = set.render(id, &sentiment(&a));
                prop_assert_eq!(pa.text.matches(ANSWER_ANCHOR).count(), 1);
                prop_assert!(pa.text.contains(a.as_str()));
                if a != b {
                    prop_assert_ne!(pa.text, set.render(id, &sentiment(&b)).text);
                }
            }
        }
    }
}
