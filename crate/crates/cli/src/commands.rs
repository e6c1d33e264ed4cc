use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cotkt_core::backend::{write_fixture, CompletionRequest, FixtureEntry};
use cotkt_core::calibration::{
    bins_to_csv, build_report, compare_reports, reliability_svg, Arm, EvalRecord, EvalReport,
    Method,
};
use cotkt_core::dataset::{load_dataset, sample_items, TaskItem};
use cotkt_core::elicit::{elicit, score};
use cotkt_core::io::{read_jsonl, to_jsonl, to_pretty_json, write_atomic};
use cotkt_core::kt::{
    build_train_examples, emit_training_manifest, filter_correct, harvest_cots, train_file_bytes,
    CotRecord, HarvestOptions, KtError, TrainExample,
};
use cotkt_core::parser::ParseStatus;
use cotkt_core::prompting::TemplateId;
use cotkt_core::sweep::{self, SweepState};

use crate::config::{build_client, Config, Loaded};
use crate::rundir::{Outputs, RunDir};
use crate::{Cli, Command, SweepCommand, TemplateArg, UsageError};

pub const ITEMS: &str = "items.jsonl";
pub const COTS: &str = "cots.jsonl";
pub const COTS_CORRECT: &str = "cots_correct.jsonl";
pub const TRAIN: &str = "train.jsonl";
pub const TRAINING_MANIFEST: &str = "training_manifest.json";

struct Ctx {
    loaded: Loaded,
    run_dir: Option<PathBuf>,
    verify: bool,
}

impl Ctx {
    fn config(&self) -> &Config {
        &self.loaded.config
    }

    /// The given run directory, or a fresh one when `create` is set.
    fn run(&self, create: bool) -> Result<RunDir> {
        let root = match (&self.run_dir, create) {
            (Some(d), _) => d.clone(),
            (None, true) => RunDir::fresh_name(&self.config().runs_dir, &self.loaded.hash()),
            (None, false) => bail!(UsageError("--run-dir is required for this command".into())),
        };
        if !create && !root.is_dir() {
            bail!(UsageError(format!(
                "run directory {} does not exist",
                root.display()
            )));
        }
        Ok(RunDir::new(root, self.loaded.hash()))
    }

    fn finish(&self, run: &RunDir, stage: &str, outputs: Outputs) -> Result<()> {
        if self.verify {
            let problems = run.verify(stage, &outputs)?;
            if !problems.is_empty() {
                bail!(
                    "verification failed for {}:\n  {}",
                    run.root.display(),
                    problems.join("\n  ")
                );
            }
            eprintln!(
                "verified {} ({} outputs recomputed)",
                run.root.display(),
                outputs.0.len()
            );
        } else {
            run.commit(stage, outputs)?;
        }
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<Loaded> {
    let mut loaded = Loaded::read(&cli.config)?;
    if let Some(seed) = cli.seed {
        loaded.config.seed = seed;
    }
    if let Some(n) = cli.max_concurrency {
        if n == 0 {
            bail!(UsageError("--max-concurrency must be positive".into()));
        }
        loaded.config.max_concurrency = n;
    }
    Ok(loaded)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Report { reports, out } = &cli.command {
        if cli.run_dir.is_none() {
            return report_files(reports, out.as_deref());
        }
    }
    let ctx = Ctx {
        loaded: load_config(&cli)?,
        run_dir: cli.run_dir.clone(),
        verify: cli.verify,
    };
    match &cli.command {
        Command::Harvest {
            dataset,
            teacher,
            n,
            samples_per_item,
            retry_incorrect,
        } => harvest(
            &ctx,
            dataset.as_deref(),
            teacher.as_deref(),
            *n,
            *samples_per_item,
            *retry_incorrect,
        ),
        Command::BuildTrain { sizes } => build_train(&ctx, sizes.as_deref()),
        Command::Eval {
            arms,
            live,
            model,
            dataset,
            n,
        } => eval(&ctx, arms, live, model.as_deref(), dataset.as_deref(), *n),
        Command::Report { reports, out } => report_run(&ctx, reports, out.as_deref()),
        Command::Sweep { action } => match action {
            SweepCommand::Plan { sizes } => sweep_plan(&ctx, sizes.as_deref()),
            SweepCommand::Attach {
                preds,
                model,
                method,
                dataset,
            } => sweep_attach(&ctx, preds, model, method, dataset.as_deref()),
        },
        Command::Fixture {
            dataset,
            model,
            template,
            replies,
            out,
            n,
        } => fixture(&ctx, dataset.as_deref(), model, *template, replies, out, *n),
    }
}

fn select_items(config: &Config, dataset: Option<&str>, n: Option<usize>) -> Result<Vec<TaskItem>> {
    let spec = config.dataset(dataset)?;
    let items = load_dataset(spec)?;
    match n.or(config.harvest.n) {
        Some(n) => Ok(sample_items(&items, n, config.seed)?),
        None => Ok(items),
    }
}

fn harvest(
    ctx: &Ctx,
    dataset: Option<&str>,
    teacher: Option<&str>,
    n: Option<usize>,
    samples_per_item: Option<u32>,
    retry_incorrect: Option<u32>,
) -> Result<()> {
    let config = ctx.config();
    let teacher = teacher.or(config.teacher.as_deref()).ok_or_else(|| {
        UsageError("--teacher is required (or set \"teacher\" in the config)".into())
    })?;
    let backend = config.backend(teacher)?;
    let templates = config.templates()?;
    let items = select_items(config, dataset, n)?;
    let run = ctx.run(true)?;
    let client = build_client(backend, &run.cache_path(), config.max_concurrency)?;
    let opts = HarvestOptions {
        samples_per_item: samples_per_item
            .or(config.harvest.samples_per_item)
            .unwrap_or(1),
        retry_incorrect: retry_incorrect.unwrap_or(config.harvest.retry_incorrect),
        max_concurrency: config.max_concurrency,
    };
    let outcome = harvest_cots(&items, &client, &templates, &config.generation, backend.model(), &opts).map_err(
        |e| match e {
            KtError::Backend { completed, .. } => anyhow::Error::new(e).context(format!(
                "harvest interrupted after {completed} items; replies so far are cached in {}, rerun with --run-dir {} to resume",
                run.cache_path().display(),
                run.root.display()
            )),
            other => other.into(),
        },
    )?;
    let correct = filter_correct(&outcome.records);
    let unparsed = outcome
        .records
        .iter()
        .filter(|r| r.status != ParseStatus::Ok)
        .count();
    eprintln!(
        "harvested {} CoTs for {} items ({} correct, {} unparsed, {} of {} replies from cache)",
        outcome.records.len(),
        items.len(),
        correct.len(),
        unparsed,
        outcome.cache_hits,
        outcome.requests
    );
    let mut out = Outputs::default();
    out.add(ITEMS, to_jsonl(&items));
    out.add(COTS, to_jsonl(&outcome.records));
    out.add(COTS_CORRECT, to_jsonl(&correct));
    ctx.finish(&run, "harvest", out)?;
    println!("{}", run.root.display());
    Ok(())
}

fn train_examples(run: &RunDir) -> Result<Vec<TrainExample>> {
    let items: Vec<TaskItem> = read_jsonl(&run.input(ITEMS)?)?;
    let cots: Vec<CotRecord> = read_jsonl(&run.input(COTS_CORRECT)?)?;
    Ok(build_train_examples(&items, &cots)?)
}

fn sweep_outputs(
    ctx: &Ctx,
    out: &mut Outputs,
    examples: &[TrainExample],
    sizes: &[usize],
) -> Result<()> {
    let manifest = emit_training_manifest(&ctx.config().training)?;
    let (_, files) = sweep::plan_files(examples, sizes, ctx.config().seed, &manifest)?;
    for (name, bytes) in files {
        out.add(format!("sweep/{}", name.display()), bytes);
    }
    Ok(())
}

fn build_train(ctx: &Ctx, sizes: Option<&[usize]>) -> Result<()> {
    let run = ctx.run(false)?;
    let examples = train_examples(&run)?;
    if examples.is_empty() {
        return Err(KtError::EmptyTrainingSet.into());
    }
    let manifest = emit_training_manifest(&ctx.config().training)
        .map_err(|e| UsageError(format!("training overrides: {e}")))?;
    let mut out = Outputs::default();
    out.add(TRAIN, train_file_bytes(&examples));
    out.add(TRAINING_MANIFEST, to_pretty_json(&manifest));
    if let Some(sizes) = sizes {
        sweep_outputs(ctx, &mut out, &examples, sizes)?;
    }
    eprintln!("{} training examples", examples.len());
    ctx.finish(&run, "build-train", out)
}

fn split_pair<'a>(arg: &'a str, what: &str) -> Result<(&'a str, &'a str)> {
    arg.split_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| UsageError(format!("expected {what}, got {arg:?}")).into())
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse::<Method>()
        .map_err(|e| UsageError(e.to_string()).into())
}

#[derive(Serialize, Deserialize)]
struct ReplyRow {
    item_id: String,
    status: ParseStatus,
    raw_text: String,
}

fn arm_outputs(out: &mut Outputs, report: &EvalReport, records: &[EvalRecord]) {
    let dir = format!("eval/{}", report.arm.slug());
    out.add(format!("{dir}/predictions.jsonl"), to_jsonl(records));
    out.add(format!("{dir}/report.json"), to_pretty_json(report));
    out.add(
        format!("{dir}/reliability.csv"),
        bins_to_csv(&report.bins).into_bytes(),
    );
    out.add(
        format!("{dir}/reliability.svg"),
        reliability_svg(report).into_bytes(),
    );
}

fn eval(
    ctx: &Ctx,
    arms: &[String],
    live: &[String],
    model: Option<&str>,
    dataset: Option<&str>,
    n: Option<usize>,
) -> Result<()> {
    if arms.is_empty() && live.is_empty() {
        bail!(UsageError(
            "give at least one --arm METHOD=PREDICTIONS or --live METHOD=BACKEND".into()
        ));
    }
    let config = ctx.config();
    let run = ctx.run(true)?;
    let stored_items = run.path(ITEMS);
    let items: Option<Vec<TaskItem>> = if !live.is_empty() {
        Some(if stored_items.is_file() {
            read_jsonl(&stored_items)?
        } else {
            select_items(config, dataset, n)?
        })
    } else {
        None
    };
    let dataset_name = match dataset {
        Some(d) => d.to_string(),
        None => match items.as_ref().and_then(|i| i.first()) {
            Some(item) => item.source.clone(),
            None if stored_items.is_file() => read_jsonl::<TaskItem>(&stored_items)?
                .first()
                .map(|i| i.source.clone())
                .unwrap_or_default(),
            None => config.dataset(None)?.name.clone(),
        },
    };

    let mut out = Outputs::default();
    let mut reports = Vec::new();
    let file_arms = arms
        .iter()
        .map(|spec| {
            let (method, path) = split_pair(spec, "METHOD=PREDICTIONS")?;
            Ok((parse_method(method)?, path))
        })
        .collect::<Result<Vec<_>>>()?;
    let live_arms = live
        .iter()
        .map(|spec| {
            let (method, backend) = split_pair(spec, "METHOD=BACKEND")?;
            Ok((parse_method(method)?, config.backend(backend)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if !file_arms.is_empty() && model.is_none() {
        bail!(UsageError("--model is required with --arm".into()));
    }
    for (method, path) in file_arms {
        let records: Vec<EvalRecord> =
            read_jsonl(Path::new(path)).with_context(|| format!("reading predictions {path}"))?;
        let report = build_report(
            &records,
            Arm::new(model.unwrap_or_default(), method, &dataset_name),
            &config.metrics,
        )
        .with_context(|| format!("evaluating {path}"))?;
        arm_outputs(&mut out, &report, &records);
        reports.push(report);
    }
    if let Some(items) = &items {
        let templates = config.templates()?;
        for (method, backend) in live_arms {
            let client = build_client(backend, &run.cache_path(), config.max_concurrency)?;
            let model_id = model.unwrap_or(backend.model());
            let replies = elicit(
                items,
                &client,
                &templates,
                &config.generation,
                backend.model(),
                config.max_concurrency,
            )?;
            let records = score(items, &replies, config.metrics.unparseable);
            let report = build_report(
                &records,
                Arm::new(model_id, method, &dataset_name),
                &config.metrics,
            )?;
            let rows: Vec<ReplyRow> = replies
                .into_iter()
                .map(|r| ReplyRow {
                    item_id: r.item_id,
                    status: r.parsed.status,
                    raw_text: r.raw_text,
                })
                .collect();
            out.add(
                format!("eval/{}/replies.jsonl", report.arm.slug()),
                to_jsonl(&rows),
            );
            arm_outputs(&mut out, &report, &records);
            reports.push(report);
        }
    }
    for r in &reports {
        eprintln!(
            "{}: n={} ACC={:.3} ROB={:.3} ECE={}",
            r.arm.slug(),
            r.n,
            r.acc,
            r.rob,
            r.ece.map_or("NA".into(), |e| format!("{e:.3}"))
        );
    }
    if reports.len() > 1 {
        let table = compare_reports(&reports);
        out.add("eval/comparison.csv", table.to_csv().into_bytes());
        out.add("eval/comparison.txt", table.to_text().into_bytes());
        print!("{}", table.to_text());
    }
    ctx.finish(&run, "eval", out)?;
    println!("{}", run.root.display());
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn comparison_files(reports: &[EvalReport]) -> Result<Outputs> {
    if reports.is_empty() {
        bail!(UsageError("no reports to combine".into()));
    }
    let table = compare_reports(reports);
    print!("{}", table.to_text());
    let mut out = Outputs::default();
    out.add("comparison.csv", table.to_csv().into_bytes());
    out.add("comparison.txt", table.to_text().into_bytes());
    Ok(out)
}

fn report_files(paths: &[PathBuf], out_dir: Option<&Path>) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>>>()?;
    let out = comparison_files(&reports)?;
    if let Some(dir) = out_dir {
        for (name, bytes) in out.0 {
            write_atomic(&dir.join(name), &bytes)?;
        }
    }
    Ok(())
}

fn report_run(ctx: &Ctx, extra: &[PathBuf], out_dir: Option<&Path>) -> Result<()> {
    let run = ctx.run(false)?;
    let mut paths = Vec::new();
    let eval_dir = run.path("eval");
    if eval_dir.is_dir() {
        for entry in std::fs::read_dir(&eval_dir)? {
            let p = entry?.path().join("report.json");
            if p.is_file() {
                paths.push(p);
            }
        }
    }
    paths.extend(extra.iter().cloned());
    let mut reports = paths
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| {
        (&a.arm.model, &a.arm.dataset, a.arm.method).cmp(&(
            &b.arm.model,
            &b.arm.dataset,
            b.arm.method,
        ))
    });
    let files = comparison_files(&reports)?;
    if let Some(dir) = out_dir {
        for (name, bytes) in &files.0 {
            write_atomic(&dir.join(name), bytes)?;
        }
    }
    let mut out = Outputs::default();
    for (name, bytes) in files.0 {
        out.add(format!("report/{name}"), bytes);
    }
    ctx.finish(&run, "report", out)
}

fn sweep_plan(ctx: &Ctx, sizes: Option<&[usize]>) -> Result<()> {
    let run = ctx.run(false)?;
    let examples = train_examples(&run)?;
    let sizes = match (sizes, &ctx.config().sweep_sizes) {
        (Some(s), _) => s.to_vec(),
        (None, Some(s)) => s.clone(),
        (None, None) => cotkt_core::kt::default_sweep_sizes(examples.len()),
    };
    let mut out = Outputs::default();
    sweep_outputs(ctx, &mut out, &examples, &sizes)?;
    eprintln!("sweep sizes {sizes:?} over {} examples", examples.len());
    ctx.finish(&run, "sweep-plan", out)
}

fn sweep_attach(
    ctx: &Ctx,
    preds: &[String],
    model: &str,
    method: &str,
    dataset: Option<&str>,
) -> Result<()> {
    let run = ctx.run(false)?;
    let sweep_dir = run.path("sweep");
    let state: SweepState = sweep::load_state(&sweep_dir)?;
    let mut paths = BTreeMap::new();
    for p in preds {
        let (size, path) = split_pair(p, "SIZE=PREDICTIONS")?;
        let size: usize = size
            .parse()
            .map_err(|_| UsageError(format!("bad sweep size {size:?}")))?;
        paths.insert(size, PathBuf::from(path));
    }
    let dataset_name = match dataset {
        Some(d) => d.to_string(),
        None => read_jsonl::<TaskItem>(&run.input(ITEMS)?)?
            .first()
            .map(|i| i.source.clone())
            .unwrap_or_default(),
    };
    let arm = Arm::new(model, parse_method(method)?, dataset_name);
    let (mut done, csv) =
        sweep::attach_results(&sweep_dir, &state, &paths, &arm, &ctx.config().metrics)?;
    let mut out = Outputs::default();
    for point in &mut done.points {
        let name = format!("predictions_{}.jsonl", point.size);
        let source = &paths[&point.size];
        out.add(
            format!("sweep/{name}"),
            std::fs::read(source).with_context(|| format!("reading {}", source.display()))?,
        );
        point.predictions = Some(PathBuf::from(name));
    }
    out.add("sweep/sweep_results.json", to_pretty_json(&done));
    out.add("sweep/curve.csv", csv.clone().into_bytes());
    print!("{csv}");
    ctx.finish(&run, "sweep-attach", out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplyInput {
    item_id: String,
    #[serde(default)]
    sample: u32,
    raw_text: String,
}

/// Writes a replay fixture from hand-written replies keyed by item id.
fn fixture(
    ctx: &Ctx,
    dataset: Option<&str>,
    model: &str,
    template: TemplateArg,
    replies: &Path,
    out: &Path,
    n: Option<usize>,
) -> Result<()> {
    let config = ctx.config();
    let items = select_items(config, dataset, n)?;
    let templates = config.templates()?;
    let id = match template {
        TemplateArg::Cot => TemplateId::CotExtraction,
        TemplateArg::Inference => TemplateId::ConfidenceInference,
    };
    let inputs: Vec<ReplyInput> =
        read_jsonl(replies).with_context(|| format!("reading replies {}", replies.display()))?;
    let mut entries = Vec::new();
    let mut report = String::new();
    for input in inputs {
        let Some(item) = items.iter().find(|i| i.id == input.item_id) else {
            bail!(UsageError(format!(
                "reply for unknown or unselected item {:?}",
                input.item_id
            )));
        };
        let req = CompletionRequest::new(templates.render(id, item), config.generation, model)
            .with_sample(input.sample);
        let fp = req.fingerprint();
        writeln!(report, "{} #{} {}", item.id, input.sample, fp)?;
        entries.push(FixtureEntry {
            fingerprint: fp,
            raw_text: input.raw_text,
        });
    }
    let mut bytes = Vec::new();
    write_fixture(&mut bytes, &entries)?;
    write_atomic(out, &bytes)?;
    eprint!("{report}");
    eprintln!("wrote {} entries to {}", entries.len(), out.display());
    Ok(())
}
