//! CoT-quantity sweeps: plan nested training files, then fold in the
//! student's predictions for each size and emit a metric curve.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{build_report, Arm, EvalRecord, EvalReport, MetricError, MetricOptions};
use crate::io::{hash_file, read_jsonl, sha256_hex, to_pretty_json, write_atomic};
use crate::kt::{subset_for_sweep, train_file_bytes, KtError, TrainExample, TrainingManifest};

pub const STATE_FILE: &str = "sweep_state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    /// Relative to the sweep directory.
    pub train_file: PathBuf,
    pub train_file_hash: String,
    pub predictions: Option<PathBuf>,
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepState {
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Kt(#[from] KtError),
    #[error("no predictions for sweep size {0}")]
    MissingPredictions(usize),
    #[error("predictions supplied for size {0}, which is not in the plan")]
    UnplannedSize(usize),
    #[error("train file for size {size} changed since planning ({path})")]
    StaleTrainFile { size: usize, path: PathBuf },
    #[error("size {size}: {source}")]
    Metric {
        size: usize,
        #[source]
        source: MetricError,
    },
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A file name relative to the sweep directory and its bytes.
pub type PlanFile = (PathBuf, Vec<u8>);

pub fn train_file_name(size: usize) -> PathBuf {
    PathBuf::from(format!("train_{size}.jsonl"))
}

/// Files for a sweep plan, relative to the sweep directory: one
/// `train_{size}.jsonl` and manifest sidecar per size plus `sweep_state.json`.
/// Sizes are sorted and de-duplicated.
pub fn plan_files(
    examples: &[TrainExample],
    sizes: &[usize],
    seed: u64,
    manifest: &TrainingManifest,
) -> Result<(SweepState, Vec<PlanFile>), SweepError> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let subsets = subset_for_sweep(examples, &sizes, seed)?;
    let manifest_bytes = to_pretty_json(manifest);
    let mut files = Vec::new();
    let mut points = Vec::with_capacity(subsets.len());
    for (size, subset) in subsets {
        let name = train_file_name(size);
        let bytes = train_file_bytes(&subset);
        points.push(SweepPoint {
            size,
            train_file: name.clone(),
            train_file_hash: sha256_hex(&bytes),
            predictions: None,
            report: None,
        });
        files.push((
            crate::kt::sidecar_manifest_path(&name),
            manifest_bytes.clone(),
        ));
        files.push((name, bytes));
    }
    let state = SweepState { seed, points };
    files.push((PathBuf::from(STATE_FILE), to_pretty_json(&state)));
    Ok((state, files))
}

/// [`plan_files`] written into `dir`.
pub fn plan_sweep(
    examples: &[TrainExample],
    sizes: &[usize],
    seed: u64,
    dir: &Path,
    manifest: &TrainingManifest,
) -> Result<SweepState, SweepError> {
    let (state, files) = plan_files(examples, sizes, seed, manifest)?;
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &bytes)?;
    }
    Ok(state)
}

pub fn save_state(dir: &Path, state: &SweepState) -> std::io::Result<()> {
    write_atomic(&dir.join(STATE_FILE), &to_pretty_json(state))
}

pub fn load_state(dir: &Path) -> Result<SweepState, SweepError> {
    let path = dir.join(STATE_FILE);
    let bytes = std::fs::read(&path).map_err(|source| SweepError::Read {
        path: path.clone(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| SweepError::Read {
        path,
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Computes one report per planned size and returns the updated state with
/// the curve CSV (`size,acc,rob,ece`, ascending size).
pub fn attach_results(
    dir: &Path,
    state: &SweepState,
    predictions: &BTreeMap<usize, PathBuf>,
    arm: &Arm,
    opts: &MetricOptions,
) -> Result<(SweepState, String), SweepError> {
    if let Some(&size) = predictions
        .keys()
        .find(|s| !state.points.iter().any(|p| p.size == **s))
    {
        return Err(SweepError::UnplannedSize(size));
    }
    let mut done = state.clone();
    for point in &mut done.points {
        let pred_path = predictions
            .get(&point.size)
            .ok_or(SweepError::MissingPredictions(point.size))?;
        let train_path = dir.join(&point.train_file);
        let current = hash_file(&train_path).map_err(|source| SweepError::Read {
            path: train_path.clone(),
            source,
        })?;
        if current != point.train_file_hash {
            return Err(SweepError::StaleTrainFile {
                size: point.size,
                path: train_path,
            });
        }
        let records: Vec<EvalRecord> =
            read_jsonl(pred_path).map_err(|source| SweepError::Read {
                path: pred_path.clone(),
                source,
            })?;
        let report =
            build_report(&records, arm.clone(), opts).map_err(|source| SweepError::Metric {
                size: point.size,
                source,
            })?;
        point.predictions = Some(pred_path.clone());
        point.report = Some(report);
    }
    let csv = curve_csv(&done);
    Ok((done, csv))
}

pub fn curve_csv(state: &SweepState) -> String {
    let mut rows: Vec<&SweepPoint> = state.points.iter().collect();
    rows.sort_by_key(|p| p.size);
    let mut out = String::from("size,acc,rob,ece\n");
    for p in rows {
        let Some(r) = &p.report else { continue };
        let ece = r.ece.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", p.size, r.acc, r.rob, ece));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::Method;
    use crate::dataset::Label;
    use crate::io::to_jsonl;

    fn examples(n: usize) -> Vec<TrainExample> {
        (0..n)
            .map(|i| TrainExample {
                item_id: format!("i{i}"),
                text: format!(
                    "<s> [INST] Question: q{i} Options: A. x B. y [/INST] Explanation: e{i} </s>"
                ),
            })
            .collect()
    }

    fn predictions(dir: &Path, size: usize, n_correct: usize, n: usize) -> PathBuf {
        let a = Label::new('A').unwrap();
        let b = Label::new('B').unwrap();
        let records: Vec<EvalRecord> = (0..n)
            .map(|i| EvalRecord {
                item_id: format!("t{i}"),
                gold_label: a,
                predicted_label: Some(if i < n_correct { a } else { b }),
                confidence: Some(0.9),
            })
            .collect();
        let path = dir.join(format!("pred_{size}.jsonl"));
        std::fs::write(&path, to_jsonl(&records)).unwrap();
        path
    }

    fn arm() -> Arm {
        Arm::new("vicuna-7b", Method::Kt, "sst2")
    }

    #[test]
    fn single_size_plan() {
        let dir = tempfile::tempdir().unwrap();
        let state = plan_sweep(
            &examples(100),
            &[16],
            7,
            dir.path(),
            &TrainingManifest::default(),
        )
        .unwrap();
        assert_eq!(state.points.len(), 1);
        let text = std::fs::read_to_string(dir.path().join("train_16.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 16);
        assert!(dir.path().join("train_16.manifest.json").exists());
        assert_eq!(load_state(dir.path()).unwrap(), state);
    }

    #[test]
    fn empty_plan_and_too_large() {
        let dir = tempfile::tempdir().unwrap();
        let state = plan_sweep(
            &examples(10),
            &[],
            7,
            dir.path(),
            &TrainingManifest::default(),
        )
        .unwrap();
        assert!(state.points.is_empty());
        assert!(matches!(
            plan_sweep(
                &examples(10),
                &[4, 11],
                7,
                dir.path(),
                &TrainingManifest::default()
            ),
            Err(SweepError::Kt(KtError::SizeTooLarge { size: 11, .. }))
        ));
    }

    #[test]
    fn files_share_common_prefix() {
        let dir = tempfile::tempdir().unwrap();
        plan_sweep(
            &examples(40),
            &[16, 8],
            1,
            dir.path(),
            &TrainingManifest::default(),
        )
        .unwrap();
        let small = std::fs::read_to_string(dir.path().join("train_8.jsonl")).unwrap();
        let large = std::fs::read_to_string(dir.path().join("train_16.jsonl")).unwrap();
        assert!(large.starts_with(&small));
    }

    #[test]
    fn attach_produces_monotone_curve() {
        let dir = tempfile::tempdir().unwrap();
        let state = plan_sweep(
            &examples(64),
            &[4, 8, 16],
            3,
            dir.path(),
            &TrainingManifest::default(),
        )
        .unwrap();
        let preds: BTreeMap<usize, PathBuf> = [(4, 3), (8, 5), (16, 9)]
            .into_iter()
            .map(|(size, c)| (size, predictions(dir.path(), size, c, 10)))
            .collect();
        let (done, csv) = attach_results(
            dir.path(),
            &state,
            &preds,
            &arm(),
            &MetricOptions::default(),
        )
        .unwrap();
        assert!(done.points.iter().all(|p| p.report.is_some()));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "size,acc,rob,ece");
        assert_eq!(lines.len(), 4);
        let accs: Vec<f64> = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(accs.windows(2).all(|w| w[0] < w[1]));
        let (_, again) = attach_results(
            dir.path(),
            &state,
            &preds,
            &arm(),
            &MetricOptions::default(),
        )
        .unwrap();
        assert_eq!(csv, again);
    }

    #[test]
    fn missing_and_stale() {
        let dir = tempfile::tempdir().unwrap();
        let state = plan_sweep(
            &examples(64),
            &[16, 32],
            3,
            dir.path(),
            &TrainingManifest::default(),
        )
        .unwrap();
        let mut preds = BTreeMap::new();
        preds.insert(16, predictions(dir.path(), 16, 5, 10));
        assert!(matches!(
            attach_results(
                dir.path(),
                &state,
                &preds,
                &arm(),
                &MetricOptions::default()
            ),
            Err(SweepError::MissingPredictions(32))
        ));
        preds.insert(32, predictions(dir.path(), 32, 5, 10));
        std::fs::write(dir.path().join("train_32.jsonl"), "tampered\n").unwrap();
        assert!(matches!(
            attach_results(
                dir.path(),
                &state,
                &preds,
                &arm(),
                &MetricOptions::default()
            ),
            Err(SweepError::StaleTrainFile { size: 32, .. })
        ));
    }
}
