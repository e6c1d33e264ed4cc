//! Dataset ingestion: CSV/TSV/JSONL sources mapped onto one canonical
//! [`TaskItem`] schema, plus deterministic sampling.
//!
//! Both multiple-choice and sentiment items use lettered options (`A`, `B`, ...)
//! so that a single prompt and parse path serves every dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// A single uppercase option letter, `A` through `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(u8);

impl Label {
    pub fn new(c: char) -> Option<Label> {
        if c.is_ascii_uppercase() {
            Some(Label(c as u8))
        } else {
            None
        }
    }

    /// The label at zero-based position `index` (0 → `A`).
    pub fn from_index(index: usize) -> Option<Label> {
        if index < 26 {
            Some(Label(b'A' + index as u8))
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        (self.0 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0 as char
    }

    /// Parses a label from text such as `"B"` or `" b "`.
    pub fn parse(s: &str) -> Option<Label> {
        let mut chars = s.trim().chars();
        let c = chars.next()?;
        if chars.next().is_some() {
            return None;
        }
        Label::new(c.to_ascii_uppercase())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let mut chars = s.chars();
        match (chars.next().and_then(Label::new), chars.next()) {
            (Some(label), None) => Ok(label),
            _ => Err(serde::de::Error::custom(format!(
                "expected a single uppercase letter, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    Sentiment,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::MultipleChoice => "multiple_choice",
            TaskKind::Sentiment => "sentiment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: Label,
    pub text: String,
}

/// One question or sentence with lettered options and a gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub task_kind: TaskKind,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub gold_label: Label,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ItemError {
    #[error("item has no options")]
    NoOptions,
    #[error("option {position} has label {found}, expected {expected}")]
    NonConsecutiveLabels {
        position: usize,
        found: Label,
        expected: Label,
    },
    #[error("gold label {0} is not one of the option labels")]
    GoldNotAnOption(Label),
    #[error("question is empty")]
    EmptyQuestion,
}

impl TaskItem {
    /// Builds an item, assigning labels `A`, `B`, ... to `option_texts` in order.
    pub fn new(
        id: impl Into<String>,
        task_kind: TaskKind,
        question: impl Into<String>,
        option_texts: &[&str],
        gold_label: Label,
        source: impl Into<String>,
    ) -> Result<TaskItem, ItemError> {
        let options = option_texts
            .iter()
            .enumerate()
            .map(|(i, text)| AnswerOption {
                label: Label::from_index(i).expect("at most 26 options"),
                text: (*text).to_string(),
            })
            .collect();
        let item = TaskItem {
            id: id.into(),
            task_kind,
            question: question.into(),
            options,
            gold_label,
            source: source.into(),
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), ItemError> {
        if self.options.is_empty() {
            return Err(ItemError::NoOptions);
        }
        for (i, opt) in self.options.iter().enumerate() {
            let expected = Label::from_index(i).ok_or(ItemError::NoOptions)?;
            if opt.label != expected {
                return Err(ItemError::NonConsecutiveLabels {
                    position: i,
                    found: opt.label,
                    expected,
                });
            }
        }
        if !self.options.iter().any(|o| o.label == self.gold_label) {
            return Err(ItemError::GoldNotAnOption(self.gold_label));
        }
        if self.question.trim().is_empty() {
            return Err(ItemError::EmptyQuestion);
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.options.iter().map(|o| o.label).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
    Tsv,
}

/// Which source columns feed which canonical fields.
///
/// Options come from exactly one of: `options` (one column per option, in
/// letter order), `options_list` (one column holding a JSON array of option
/// texts), or the fixed option texts on [`DatasetSpec::options`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    #[serde(default)]
    pub id: Option<String>,
    pub question: String,
    /// Optional passage prepended to the question (reading-comprehension sets).
    #[serde(default)]
    pub context: Option<String>,
    pub label: String,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub options_list: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub format: DatasetFormat,
    pub task_kind: TaskKind,
    pub column_map: ColumnMap,
    /// Fixed option texts shared by every row, e.g. `["Positive", "Negative"]`.
    #[serde(default)]
    pub options: Vec<String>,
    /// Raw label value → option letter, e.g. `{"1": "A", "0": "B"}`.
    #[serde(default)]
    pub label_map: Option<BTreeMap<String, Label>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("dataset {0}: no option source (set options, column_map.options or column_map.options_list)")]
    NoOptionSource(String),
    #[error("dataset {0}: more than one option source configured")]
    ConflictingOptionSources(String),
    #[error(
        "dataset {name}: label_map targets {found:?} but the declared options are {expected:?}"
    )]
    LabelMapMismatch {
        name: String,
        found: Vec<Label>,
        expected: Vec<Label>,
    },
    #[error("dataset {0}: sentiment datasets need fixed options and a label_map")]
    SentimentNeedsLabelMap(String),
    #[error("dataset {0}: more than 26 options")]
    TooManyOptions(String),
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let cm = &self.column_map;
        let sources = [
            !self.options.is_empty(),
            !cm.options.is_empty(),
            cm.options_list.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if sources == 0 {
            return Err(SpecError::NoOptionSource(self.name.clone()));
        }
        if sources > 1 {
            return Err(SpecError::ConflictingOptionSources(self.name.clone()));
        }
        if self.options.len() > 26 || cm.options.len() > 26 {
            return Err(SpecError::TooManyOptions(self.name.clone()));
        }
        if self.task_kind == TaskKind::Sentiment
            && (self.options.is_empty() || self.label_map.is_none())
        {
            return Err(SpecError::SentimentNeedsLabelMap(self.name.clone()));
        }
        if let (Some(map), false) = (&self.label_map, self.options.is_empty()) {
            let found: BTreeSet<Label> = map.values().copied().collect();
            let expected: BTreeSet<Label> = (0..self.options.len())
                .filter_map(Label::from_index)
                .collect();
            if found != expected {
                return Err(SpecError::LabelMapMismatch {
                    name: self.name.clone(),
                    found: found.into_iter().collect(),
                    expected: expected.into_iter().collect(),
                });
            }
        }
        Ok(())
    }
}

/// Why a single source row could not become a [`TaskItem`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RowProblem {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("unparseable record: {0}")]
    Syntax(String),
    #[error("column {0:?} is not a JSON array of strings")]
    BadOptionsList(String),
    #[error(transparent)]
    Invalid(#[from] ItemError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file not found: {0}")]
    FileMissing(PathBuf),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: RowProblem },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot sample {requested} items from {available}")]
    NTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Report malformed rows instead of aborting the load.
    pub skip_bad_rows: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub items: Vec<TaskItem>,
    /// `(line, problem)` for each row skipped under [`LoadOptions::skip_bad_rows`].
    pub skipped: Vec<(usize, RowProblem)>,
}

/// Loads every row of `spec`, aborting on the first malformed row.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<TaskItem>, DatasetError> {
    load_dataset_with(spec, LoadOptions::default()).map(|o| o.items)
}

pub fn load_dataset_with(
    spec: &DatasetSpec,
    opts: LoadOptions,
) -> Result<LoadOutcome, DatasetError> {
    spec.validate()?;
    if !spec.path.is_file() {
        return Err(DatasetError::FileMissing(spec.path.clone()));
    }
    let rows = match spec.format {
        DatasetFormat::Jsonl => read_jsonl_rows(&spec.path)?,
        DatasetFormat::Csv => read_delimited_rows(&spec.path, b',')?,
        DatasetFormat::Tsv => read_delimited_rows(&spec.path, b'\t')?,
    };
    let mut outcome = LoadOutcome::default();
    for (line, row) in rows {
        match row.and_then(|r| row_to_item(spec, line, &r)) {
            Ok(item) => outcome.items.push(item),
            Err(reason) if opts.skip_bad_rows => {
                log::warn!("{}: skipping line {line}: {reason}", spec.name);
                outcome.skipped.push((line, reason));
            }
            Err(reason) => return Err(DatasetError::MalformedRow { line, reason }),
        }
    }
    Ok(outcome)
}

type Row = BTreeMap<String, Value>;

/// A source line number with its parsed row.
type NumberedRow = (usize, Result<Row, RowProblem>);

fn read_jsonl_rows(path: &Path) -> Result<Vec<NumberedRow>, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed =
            serde_json::from_str::<Row>(&line).map_err(|e| RowProblem::Syntax(e.to_string()));
        rows.push((i + 1, parsed));
    }
    Ok(rows)
}

fn read_delimited_rows(path: &Path, delimiter: u8) -> Result<Vec<NumberedRow>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_to_io)?;
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_to_io(e)),
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header occupies line 1
        let fallback_line = i + 2;
        match record {
            Ok(rec) => {
                let line = rec
                    .position()
                    .map(|p| p.line() as usize)
                    .unwrap_or(fallback_line);
                let row = headers
                    .iter()
                    .zip(rec.iter())
                    .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                    .collect();
                rows.push((line, Ok(row)));
            }
            Err(e) => rows.push((fallback_line, Err(RowProblem::Syntax(e.to_string())))),
        }
    }
    Ok(rows)
}

fn csv_to_io(e: csv::Error) -> DatasetError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::Io(io),
        other => DatasetError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{other:?}"),
        )),
    }
}

fn cell(row: &Row, column: &str) -> Result<String, RowProblem> {
    match row.get(column) {
        None | Some(Value::Null) => Err(RowProblem::MissingColumn(column.to_string())),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Ok(other.to_string()),
    }
}

fn row_to_item(spec: &DatasetSpec, line: usize, row: &Row) -> Result<TaskItem, RowProblem> {
    let cm = &spec.column_map;
    let id = match &cm.id {
        Some(col) => cell(row, col)?,
        None => format!("{}-{line}", spec.name),
    };
    let mut question = cell(row, &cm.question)?;
    if let Some(ctx_col) = &cm.context {
        let ctx = cell(row, ctx_col)?;
        if !ctx.trim().is_empty() {
            question = format!("{ctx}\n{question}");
        }
    }

    let option_texts: Vec<String> = if !spec.options.is_empty() {
        spec.options.clone()
    } else if !cm.options.is_empty() {
        cm.options
            .iter()
            .map(|c| cell(row, c))
            .collect::<Result<_, _>>()?
    } else {
        let col = cm.options_list.as_deref().unwrap_or_default();
        let parsed = match row.get(col) {
            None | Some(Value::Null) => return Err(RowProblem::MissingColumn(col.to_string())),
            Some(Value::Array(a)) => Value::Array(a.clone()),
            Some(Value::String(s)) => {
                serde_json::from_str(s).map_err(|_| RowProblem::BadOptionsList(col.to_string()))?
            }
            Some(_) => return Err(RowProblem::BadOptionsList(col.to_string())),
        };
        serde_json::from_value(parsed).map_err(|_| RowProblem::BadOptionsList(col.to_string()))?
    };
    if option_texts.len() > 26 {
        return Err(RowProblem::BadOptionsList("more than 26 options".into()));
    }

    let raw_label = cell(row, &cm.label)?;
    let gold_label = match &spec.label_map {
        Some(map) => map
            .get(raw_label.trim())
            .copied()
            .ok_or_else(|| RowProblem::UnknownLabel(raw_label.clone()))?,
        None => {
            Label::parse(&raw_label).ok_or_else(|| RowProblem::UnknownLabel(raw_label.clone()))?
        }
    };
    if gold_label.index() >= option_texts.len() {
        return Err(RowProblem::UnknownLabel(raw_label));
    }

    let options = option_texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| AnswerOption {
            label: Label::from_index(i).expect("checked above"),
            text,
        })
        .collect();
    let item = TaskItem {
        id,
        task_kind: spec.task_kind,
        question,
        options,
        gold_label,
        source: spec.name.clone(),
    };
    item.validate()?;
    Ok(item)
}

/// Writes items as canonical JSONL, one object per line.
pub fn write_items_jsonl<W: Write>(mut out: W, items: &[TaskItem]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads canonical JSONL written by [`write_items_jsonl`], validating each item.
pub fn read_items_jsonl(path: &Path) -> Result<Vec<TaskItem>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::FileMissing(path.to_path_buf()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: TaskItem =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRow {
                line: i + 1,
                reason: RowProblem::Syntax(e.to_string()),
            })?;
        item.validate().map_err(|e| DatasetError::MalformedRow {
            line: i + 1,
            reason: e.into(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Seeded shuffle-then-take. The result depends only on `(items, n, seed)`.
pub fn sample_items(
    items: &[TaskItem],
    n: usize,
    seed: u64,
) -> Result<Vec<TaskItem>, DatasetError> {
    if n > items.len() {
        return Err(DatasetError::NTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    Ok(seeded_order(items.len(), seed)
        .into_iter()
        .take(n)
        .map(|i| items[i].clone())
        .collect())
}

/// A seeded permutation of `0..len`, stable across platforms (ChaCha8 stream).
pub(crate) fn seeded_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sst2_spec(path: &Path, format: DatasetFormat) -> DatasetSpec {
        DatasetSpec {
            name: "sst2".into(),
            path: path.to_path_buf(),
            format,
            task_kind: TaskKind::Sentiment,
            column_map: ColumnMap {
                question: "sentence".into(),
                label: "label".into(),
                ..Default::default()
            },
            options: vec!["Positive".into(), "Negative".into()],
            label_map: Some(BTreeMap::from([
                ("1".to_string(), Label::new('A').unwrap()),
                ("0".to_string(), Label::new('B').unwrap()),
            ])),
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn sst2_jsonl_row_maps_to_letter() {
        let f = write_tmp(
            "{\"sentence\":\"a rollicking good time for the most part\",\"label\":\"1\"}\n",
        );
        let items = load_dataset(&sst2_spec(f.path(), DatasetFormat::Jsonl)).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].gold_label, Label::new('A').unwrap());
        assert_eq!(
            items[0].question,
            "a rollicking good time for the most part"
        );
        assert_eq!(items[0].options[1].text, "Negative");
    }

    #[test]
    fn numeric_json_labels_are_stringified() {
        let f = write_tmp("{\"sentence\":\"dull\",\"label\":0}\n");
        let items = load_dataset(&sst2_spec(f.path(), DatasetFormat::Jsonl)).unwrap();
        assert_eq!(items[0].gold_label.as_char(), 'B');
    }

    #[test]
    fn empty_file_loads_nothing() {
        let f = write_tmp("");
        for format in [DatasetFormat::Csv, DatasetFormat::Jsonl, DatasetFormat::Tsv] {
            let out =
                load_dataset_with(&sst2_spec(f.path(), format), LoadOptions::default()).unwrap();
            assert!(out.items.is_empty());
            assert!(out.skipped.is_empty());
        }
    }

    #[test]
    fn unknown_label_names_csv_line() {
        let f = write_tmp("sentence,label\ngreat film,2\n");
        let err = load_dataset(&sst2_spec(f.path(), DatasetFormat::Csv)).unwrap_err();
        match err {
            DatasetError::MalformedRow { line, reason } => {
                assert_eq!(line, 2);
                assert_eq!(reason, RowProblem::UnknownLabel("2".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skip_bad_rows_reports_instead_of_dropping() {
        let f = write_tmp("sentence,label\ngreat film,1\nodd,7\nawful,0\n");
        let out = load_dataset_with(
            &sst2_spec(f.path(), DatasetFormat::Csv),
            LoadOptions {
                skip_bad_rows: true,
            },
        )
        .unwrap();
        assert_eq!(out.items.len(), 2);
        assert_eq!(out.skipped, vec![(3, RowProblem::UnknownLabel("7".into()))]);
    }

    #[test]
    fn missing_file() {
        let spec = sst2_spec(Path::new("/nonexistent/sst2.csv"), DatasetFormat::Csv);
        assert!(matches!(
            load_dataset(&spec),
            Err(DatasetError::FileMissing(_))
        ));
    }

    #[test]
    fn multiple_choice_tsv_with_option_columns() {
        let f = write_tmp("qid\tq\tA\tB\tC\tD\tanswer\nq1\tWhat is 2+2?\t3\t4\t5\t22\tB\n");
        let spec = DatasetSpec {
            name: "arc".into(),
            path: f.path().to_path_buf(),
            format: DatasetFormat::Tsv,
            task_kind: TaskKind::MultipleChoice,
            column_map: ColumnMap {
                id: Some("qid".into()),
                question: "q".into(),
                label: "answer".into(),
                options: vec!["A".into(), "B".into(), "C".into(), "D".into()],
                ..Default::default()
            },
            options: vec![],
            label_map: None,
        };
        let items = load_dataset(&spec).unwrap();
        assert_eq!(items[0].id, "q1");
        assert_eq!(items[0].options.len(), 4);
        assert_eq!(items[0].gold_label.as_char(), 'B');
    }

    #[test]
    fn options_list_column_and_context() {
        let f = write_tmp(
            "{\"story\":\"Tom has a cat.\",\"question\":\"What pet?\",\"choices\":[\"dog\",\"cat\",\"fish\"],\"answer\":\"B\"}\n",
        );
        let spec = DatasetSpec {
            name: "mctest".into(),
            path: f.path().to_path_buf(),
            format: DatasetFormat::Jsonl,
            task_kind: TaskKind::MultipleChoice,
            column_map: ColumnMap {
                question: "question".into(),
                context: Some("story".into()),
                label: "answer".into(),
                options_list: Some("choices".into()),
                ..Default::default()
            },
            options: vec![],
            label_map: None,
        };
        let items = load_dataset(&spec).unwrap();
        assert_eq!(items[0].question, "Tom has a cat.\nWhat pet?");
        assert_eq!(items[0].id, "mctest-1");
        assert_eq!(items[0].options[2].text, "fish");
    }

    #[test]
    fn label_past_last_option_is_rejected() {
        let f = write_tmp("{\"q\":\"x?\",\"choices\":[\"a\",\"b\"],\"answer\":\"C\"}\n");
        let spec = DatasetSpec {
            name: "t".into(),
            path: f.path().to_path_buf(),
            format: DatasetFormat::Jsonl,
            task_kind: TaskKind::MultipleChoice,
            column_map: ColumnMap {
                question: "q".into(),
                label: "answer".into(),
                options_list: Some("choices".into()),
                ..Default::default()
            },
            options: vec![],
            label_map: None,
        };
        assert!(matches!(
            load_dataset(&spec),
            Err(DatasetError::MalformedRow {
                line: 1,
                reason: RowProblem::UnknownLabel(_)
            })
        ));
    }

    #[test]
    fn label_map_must_cover_declared_options() {
        let mut spec = sst2_spec(Path::new("x"), DatasetFormat::Csv);
        spec.options.push("Neutral".into());
        assert!(matches!(
            spec.validate(),
            Err(SpecError::LabelMapMismatch { .. })
        ));
    }

    #[test]
    fn blank_question_is_malformed() {
        let f = write_tmp("sentence,label\n   ,1\n");
        assert!(matches!(
            load_dataset(&sst2_spec(f.path(), DatasetFormat::Csv)),
            Err(DatasetError::MalformedRow {
                line: 2,
                reason: RowProblem::Invalid(ItemError::EmptyQuestion)
            })
        ));
    }

    #[test]
    fn sample_edge_cases() {
        let items: Vec<TaskItem> = (0..5)
            .map(|i| {
                TaskItem::new(
                    format!("i{i}"),
                    TaskKind::Sentiment,
                    "q",
                    &["P", "N"],
                    Label::new('A').unwrap(),
                    "s",
                )
                .unwrap()
            })
            .collect();
        assert!(sample_items(&items, 0, 9).unwrap().is_empty());
        let all = sample_items(&items, 5, 7).unwrap();
        let ids: BTreeSet<_> = all.iter().map(|i| i.id.clone()).collect();
        assert_eq!(ids, items.iter().map(|i| i.id.clone()).collect());
        assert!(matches!(
            sample_items(&items, 6, 7),
            Err(DatasetError::NTooLarge { .. })
        ));
    }

    #[test]
    fn label_serde() {
        let l: Label = serde_json::from_str("\"C\"").unwrap();
        assert_eq!(l.index(), 2);
        assert!(serde_json::from_str::<Label>("\"c\"").is_err());
        assert!(serde_json::from_str::<Label>("\"AB\"").is_err());
        assert_eq!(Label::parse(" b "), Label::new('B'));
    }
}
