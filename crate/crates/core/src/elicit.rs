//! Live confidence elicitation: prompt a student model for every item and
//! score its verbalized answers.

use thiserror::Error;

use crate::backend::{BackendError, Client, CompletionRequest, GenerationParams};
use crate::calibration::{to_eval_record, EvalRecord, UnparseablePolicy};
use crate::dataset::TaskItem;
use crate::parser::{parse_prediction, ParsedPrediction};
use crate::pool::ordered_map;
use crate::prompting::{TemplateId, TemplateSet};

#[derive(Debug, Error)]
#[error("item {item_id}: {source}")]
pub struct ElicitError {
    pub item_id: String,
    pub completed: usize,
    #[source]
    pub source: BackendError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elicited {
    pub item_id: String,
    pub raw_text: String,
    pub parsed: ParsedPrediction,
}

/// Asks `model_id` every item's inference prompt; replies come back in item order.
pub fn elicit(
    items: &[TaskItem],
    client: &Client,
    templates: &TemplateSet,
    params: &GenerationParams,
    model_id: &str,
    max_concurrency: usize,
) -> Result<Vec<Elicited>, ElicitError> {
    ordered_map(items, max_concurrency, |item| {
        let prompt = templates.render(TemplateId::ConfidenceInference, item);
        let reply = client.complete(&CompletionRequest::new(prompt, *params, model_id))?;
        let parsed = parse_prediction(&reply.raw_text, &item.labels());
        Ok(Elicited {
            item_id: item.id.clone(),
            raw_text: reply.raw_text,
            parsed,
        })
    })
    .map_err(|f| ElicitError {
        item_id: items[f.index].id.clone(),
        completed: f.completed,
        source: f.error,
    })
}

/// Scores elicited replies; `Drop` removes unparseable ones.
pub fn score(
    items: &[TaskItem],
    elicited: &[Elicited],
    policy: UnparseablePolicy,
) -> Vec<EvalRecord> {
    items
        .iter()
        .zip(elicited)
        .filter_map(|(item, e)| to_eval_record(item, &e.parsed, policy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FixtureEntry, ReplayTransport};
    use crate::dataset::{Label, TaskKind};

    #[test]
    fn replay_student_scores_in_order() {
        let items: Vec<TaskItem> = (0..6)
            .map(|i| {
                TaskItem::new(
                    format!("s{i}"),
                    TaskKind::Sentiment,
                    format!("sentence {i}"),
                    &["Positive", "Negative"],
                    Label::new('A').unwrap(),
                    "sst2",
                )
                .unwrap()
            })
            .collect();
        let templates = TemplateSet::builtin();
        let params = GenerationParams::default();
        let replies = ["A, 90", "B, 85", "A, 60", "no idea", "A", "B, 40"];
        let entries = items.iter().zip(replies).map(|(item, r)| FixtureEntry {
            fingerprint: CompletionRequest::new(
                templates.render(TemplateId::ConfidenceInference, item),
                params,
                "vicuna-7b",
            )
            .fingerprint(),
            raw_text: r.into(),
        });
        let client = Client::new(Box::new(ReplayTransport::from_entries(entries)));
        let got = elicit(&items, &client, &templates, &params, "vicuna-7b", 3).unwrap();
        assert_eq!(
            got.iter().map(|e| e.raw_text.as_str()).collect::<Vec<_>>(),
            replies
        );

        let records = score(&items, &got, UnparseablePolicy::Incorrect);
        assert_eq!(records.len(), 6);
        assert_eq!(records[3].predicted_label, None);
        assert_eq!(records[4].confidence, None);
        assert_eq!(records[0].confidence, Some(0.9));
        assert_eq!(score(&items, &got, UnparseablePolicy::Drop).len(), 4);

        let short = Client::new(Box::new(ReplayTransport::default()));
        assert!(elicit(&items, &short, &templates, &params, "vicuna-7b", 2).is_err());
    }
}
