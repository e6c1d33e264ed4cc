//! The data side of chain-of-thought knowledge transfer: harvest teacher
//! rationales, keep the ones that reach the gold answer, serialize them as
//! instruction-tuning strings, and cut nested subsets for quantity sweeps.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::backend::{BackendError, Client, CompletionRequest, GenerationParams};
use crate::dataset::{seeded_order, Label, TaskItem};
use crate::io::{sha256_hex, to_jsonl, to_pretty_json, write_atomic};
use crate::parser::{parse_cot_reply, ParseStatus};
use crate::pool::ordered_map;
use crate::prompting::{inline_options, TemplateId, TemplateSet};

/// One teacher rationale with its parsed answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRecord {
    pub item_id: String,
    pub sample: u32,
    pub teacher_model: String,
    pub explanation: String,
    pub answer_label: Option<Label>,
    pub confidence_pct: Option<u8>,
    pub status: ParseStatus,
    /// Answer equals the item's gold label (always false for unparsed replies).
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestOptions {
    #[serde(default = "one")]
    pub samples_per_item: u32,
    /// Extra draws for items whose initial samples were all incorrect.
    #[serde(default)]
    pub retry_incorrect: u32,
    #[serde(default = "four")]
    pub max_concurrency: usize,
}

fn one() -> u32 {
    1
}

fn four() -> usize {
    4
}

impl Default for HarvestOptions {
    fn default() -> Self {
        HarvestOptions {
            samples_per_item: 1,
            retry_incorrect: 0,
            max_concurrency: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum KtError {
    #[error("item {item_id}: {source}")]
    Backend {
        item_id: String,
        /// Items fully harvested (and cached) before the failure.
        completed: usize,
        #[source]
        source: BackendError,
    },
    #[error("CoT for {cot} does not belong to item {item}")]
    MismatchedItem { item: String, cot: String },
    #[error("CoT for item {0} did not reach the gold answer")]
    IncorrectCot(String),
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("sweep size {size} exceeds the {available} available examples")]
    SizeTooLarge { size: usize, available: usize },
    #[error("unknown training manifest key {0:?}")]
    UnknownKey(String),
    #[error("bad value for training manifest key {key:?}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("training text does not match the expected grammar: {0}")]
    Grammar(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct HarvestOutcome {
    pub records: Vec<CotRecord>,
    pub cache_hits: usize,
    pub requests: usize,
}

fn record_from_reply(item: &TaskItem, sample: u32, teacher: &str, raw: &str) -> CotRecord {
    let (explanation, pred) = parse_cot_reply(raw, &item.labels());
    let correct = pred.status == ParseStatus::Ok && pred.answer_label == Some(item.gold_label);
    if pred.status != ParseStatus::Ok {
        log::info!(
            "{}#{sample}: teacher reply parsed as {:?}",
            item.id,
            pred.status
        );
    }
    CotRecord {
        item_id: item.id.clone(),
        sample,
        teacher_model: teacher.to_string(),
        explanation: explanation.unwrap_or_default(),
        answer_label: pred.answer_label,
        confidence_pct: pred.confidence_pct,
        status: pred.status,
        correct,
    }
}

/// Prompts the teacher for every item and parses the rationales.
///
/// Records come back in item order, then sample order, regardless of how
/// workers interleave. Every reply is written to the client's cache as it
/// arrives, so a failed run resumes without re-asking answered prompts.
pub fn harvest_cots(
    items: &[TaskItem],
    client: &Client,
    templates: &TemplateSet,
    params: &GenerationParams,
    teacher_model: &str,
    opts: &HarvestOptions,
) -> Result<HarvestOutcome, KtError> {
    let hits = AtomicUsize::new(0);
    let requests = AtomicUsize::new(0);

    let harvest_item = |item: &TaskItem| -> Result<Vec<CotRecord>, BackendError> {
        let prompt = templates.render(TemplateId::CotExtraction, item);
        let ask = |sample: u32| -> Result<CotRecord, BackendError> {
            let req =
                CompletionRequest::new(prompt.clone(), *params, teacher_model).with_sample(sample);
            let reply = client.complete(&req)?;
            requests.fetch_add(1, Ordering::Relaxed);
            if reply.from_cache {
                hits.fetch_add(1, Ordering::Relaxed);
            }
            Ok(record_from_reply(
                item,
                sample,
                teacher_model,
                &reply.raw_text,
            ))
        };
        let mut records = (0..opts.samples_per_item)
            .map(&ask)
            .collect::<Result<Vec<_>, _>>()?;
        let mut extra = 0;
        while extra < opts.retry_incorrect && !records.iter().any(|r| r.correct) {
            records.push(ask(opts.samples_per_item + extra)?);
            extra += 1;
        }
        Ok(records)
    };

    let per_item =
        ordered_map(items, opts.max_concurrency, harvest_item).map_err(|f| KtError::Backend {
            item_id: items[f.index].id.clone(),
            completed: f.completed,
            source: f.error,
        })?;
    Ok(HarvestOutcome {
        records: per_item.into_iter().flatten().collect(),
        cache_hits: hits.into_inner(),
        requests: requests.into_inner(),
    })
}

pub fn filter_correct(cots: &[CotRecord]) -> Vec<CotRecord> {
    cots.iter().filter(|c| c.correct).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    pub item_id: String,
    pub text: String,
}

const FRAMING: [(&str, &str); 4] = [
    ("[/INST]", "\\[/INST\\]"),
    ("[INST]", "\\[INST\\]"),
    ("</s>", "\\</s\\>"),
    ("<s>", "\\<s\\>"),
];

/// Backslash-escapes instruction and sequence delimiters inside free text.
pub fn escape_framing(text: &str) -> String {
    FRAMING
        .iter()
        .fold(text.to_string(), |acc, (token, escaped)| {
            acc.replace(token, escaped)
        })
}

/// `<s> [INST] Question: {q} Options: {opts} [/INST] Explanation: {e} </s>`
pub fn format_train_example(item: &TaskItem, cot: &CotRecord) -> Result<TrainExample, KtError> {
    if cot.item_id != item.id {
        return Err(KtError::MismatchedItem {
            item: item.id.clone(),
            cot: cot.item_id.clone(),
        });
    }
    if !cot.correct {
        return Err(KtError::IncorrectCot(item.id.clone()));
    }
    let text = format!(
        "<s> [INST] Question: {} Options: {} [/INST] Explanation: {} </s>",
        escape_framing(&item.question),
        escape_framing(&inline_options(item)),
        escape_framing(&cot.explanation),
    );
    Ok(TrainExample {
        item_id: item.id.clone(),
        text,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainTextParts<'a> {
    pub question: &'a str,
    pub options: &'a str,
    pub explanation: &'a str,
}

/// Splits a serialized training string back into its three fields. The
/// question/options boundary is the last ` Options: ` before `[/INST]`.
pub fn parse_train_text(text: &str) -> Result<TrainTextParts<'_>, KtError> {
    let grammar = |m: &str| KtError::Grammar(m.to_string());
    if text.matches("[INST]").count() != 1 || text.matches("[/INST]").count() != 1 {
        return Err(grammar("expected exactly one [INST] and one [/INST]"));
    }
    let body = text
        .strip_prefix("<s> [INST] Question: ")
        .ok_or_else(|| grammar("missing '<s> [INST] Question: ' prefix"))?;
    let body = body
        .strip_suffix(" </s>")
        .ok_or_else(|| grammar("missing ' </s>' suffix"))?;
    let (prompt, explanation) = body
        .split_once(" [/INST] Explanation: ")
        .ok_or_else(|| grammar("missing ' [/INST] Explanation: '"))?;
    let (question, options) = prompt
        .rsplit_once(" Options: ")
        .ok_or_else(|| grammar("missing ' Options: '"))?;
    Ok(TrainTextParts {
        question,
        options,
        explanation,
    })
}

/// Builds one training example per correct CoT, in CoT order.
pub fn build_train_examples(
    items: &[TaskItem],
    correct_cots: &[CotRecord],
) -> Result<Vec<TrainExample>, KtError> {
    let by_id: HashMap<&str, &TaskItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    correct_cots
        .iter()
        .map(|cot| {
            let item = by_id
                .get(cot.item_id.as_str())
                .ok_or_else(|| KtError::MismatchedItem {
                    item: "<none>".into(),
                    cot: cot.item_id.clone(),
                })?;
            format_train_example(item, cot)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingManifest {
    pub lora_dim: u32,
    pub alpha: u32,
    pub dropout: f64,
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: String,
    pub warmup: f64,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        TrainingManifest {
            lora_dim: 64,
            alpha: 16,
            dropout: 0.1,
            epochs: 20,
            batch_size: 4,
            learning_rate: 2e-4,
            weight_decay: 0.001,
            optimizer: "Adam".into(),
            warmup: 0.03,
        }
    }
}

/// Default QLoRA settings with `overrides` applied key by key.
pub fn emit_training_manifest(overrides: &Map<String, Value>) -> Result<TrainingManifest, KtError> {
    let Value::Object(mut fields) =
        serde_json::to_value(TrainingManifest::default()).expect("plain struct")
    else {
        unreachable!("struct serializes to an object")
    };
    for (key, value) in overrides {
        if !fields.contains_key(key) {
            return Err(KtError::UnknownKey(key.clone()));
        }
        fields.insert(key.clone(), value.clone());
        serde_json::from_value::<TrainingManifest>(Value::Object(fields.clone())).map_err(|e| {
            KtError::BadValue {
                key: key.clone(),
                reason: e.to_string(),
            }
        })?;
    }
    Ok(serde_json::from_value(Value::Object(fields)).expect("validated above"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainFileSummary {
    pub path: PathBuf,
    pub manifest_path: PathBuf,
    pub count: usize,
    /// SHA-256 of the JSONL bytes.
    pub sha256: String,
}

pub fn train_file_bytes(examples: &[TrainExample]) -> Vec<u8> {
    to_jsonl(examples)
}

/// Sidecar manifest path: `train.jsonl` → `train.manifest.json`.
pub fn sidecar_manifest_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

/// Writes `{item_id, text}` JSONL plus a sidecar manifest.
pub fn emit_train_file(
    examples: &[TrainExample],
    path: &Path,
    manifest: &TrainingManifest,
) -> Result<TrainFileSummary, KtError> {
    if examples.is_empty() {
        return Err(KtError::EmptyTrainingSet);
    }
    let bytes = train_file_bytes(examples);
    write_atomic(path, &bytes)?;
    let manifest_path = sidecar_manifest_path(path);
    write_atomic(&manifest_path, &to_pretty_json(manifest))?;
    Ok(TrainFileSummary {
        path: path.to_path_buf(),
        manifest_path,
        count: examples.len(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn load_train_file(path: &Path) -> Result<Vec<TrainExample>, KtError> {
    Ok(crate::io::read_jsonl(path)?)
}

pub const DEFAULT_SWEEP_SIZES: [usize; 6] = [4, 8, 16, 32, 64, 128];

/// The default sweep sizes that fit in `available` examples.
pub fn default_sweep_sizes(available: usize) -> Vec<usize> {
    DEFAULT_SWEEP_SIZES
        .iter()
        .copied()
        .filter(|&s| s <= available)
        .collect()
}

/// Nested subsets: every subset is a prefix of one seeded permutation, so a
/// smaller size is always contained in a larger one.
pub fn subset_for_sweep(
    examples: &[TrainExample],
    sizes: &[usize],
    seed: u64,
) -> Result<BTreeMap<usize, Vec<TrainExample>>, KtError> {
    if let Some(&size) = sizes.iter().max().filter(|&&s| s > examples.len()) {
        return Err(KtError::SizeTooLarge {
            size,
            available: examples.len(),
        });
    }
    let order = seeded_order(examples.len(), seed);
    Ok(sizes
        .iter()
        .map(|&size| {
            (
                size,
                order[..size].iter().map(|&i| examples[i].clone()).collect(),
            )
        })
        .collect())
}
