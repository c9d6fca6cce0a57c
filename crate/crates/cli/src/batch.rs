//! Batch runs of one pipeline step, and full experiments.

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use uslink_core::detection::Verdict;
use uslink_core::eval::{self, EvalError, EvalOptions, EvalReport, Item, Question};
use uslink_core::fewshot::{build_pool, builtin_pool};
use uslink_core::gateway::{BackendConfig, Gateway, GatewayError};
use uslink_core::gold::GoldStandard;
use uslink_core::matching::MatchResult;
use uslink_core::model::{GuiPrototype, PrototypeStore, UserStory};
use uslink_core::pipeline::{run_parallel, ExamplePool, Pipeline, PipelineError};
use uslink_core::prompt::{CotTemperature, PromptEngine, PromptKind, Task, Templates};
use uslink_core::recommendation::{export_previews, DEFAULT_TEMPERATURE};

use crate::{load_store, read, Classify, CliResult, Failure, Status};

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Gold standard file, or JSON lines of
    /// `{us_id, gui_id, story_text[, gold_component_ids]}`.
    pub input: PathBuf,
    #[arg(long)]
    pub prototypes: PathBuf,
    /// Prompt kind, e.g. `zs`, `fs5`, `cot`, `zs-b`, `fs-cot`.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Backend shorthand (`oracle-mock`, `noisy-oracle-mock:0.15:7`,
    /// `remote`, `scripted:<cassette>`) or a TOML config file.
    #[arg(long)]
    pub backend: String,
    /// Sampling temperature; picks the CoT variant for detection and
    /// matching.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Bound on concurrent backend calls.
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
    /// JSON-lines output; progress goes to `<out>.log`.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip items already present in the output file.
    #[arg(long)]
    pub resume: bool,
    /// Directory overriding prompt templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum Step {
    Detect,
    Match,
    Recommend { k: usize, previews: Option<PathBuf> },
}

impl Step {
    fn task(&self) -> Task {
        match self {
            Step::Detect => Task::Detect,
            Step::Match => Task::Match,
            Step::Recommend { .. } => Task::Recommend,
        }
    }
}

struct WorkItem {
    story: UserStory,
    prototype: Arc<GuiPrototype>,
    gold: Option<BTreeSet<u32>>,
}

#[derive(Debug, Deserialize)]
struct StoryRow {
    us_id: String,
    gui_id: String,
    story_text: String,
    #[serde(default)]
    gold_component_ids: Option<BTreeSet<u32>>,
}

fn is_gold_file(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v["kind"] == "header")
}

fn load_items(step: &Step, input: &Path, store: &PrototypeStore) -> CliResult<(Vec<WorkItem>, ExamplePool)> {
    let text = read(input)?;
    if is_gold_file(&text) {
        let gold = GoldStandard::load(&text, store)
            .with_context(|| input.display().to_string())
            .schema()?;
        let items = gold
            .records
            .iter()
            .map(|r| WorkItem {
                story: r.pair.story.clone(),
                prototype: match step {
                    Step::Match => r.original.clone(),
                    _ => r.effective_prototype.clone(),
                },
                gold: Some(r.pair.gold_component_ids.clone()),
            })
            .collect();
        return Ok((items, build_pool(&gold.fewshot_pairs, store, gold.seed)));
    }
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let at = || format!("{}:{}", input.display(), i + 1);
        let row: StoryRow = serde_json::from_str(line).with_context(at).schema()?;
        if !seen.insert(row.us_id.clone()) {
            return Err(anyhow!("duplicate us_id {}", row.us_id)).with_context(at).schema();
        }
        let proto = store
            .get(&row.gui_id)
            .ok_or_else(|| anyhow!("unknown GUI {}", row.gui_id))
            .with_context(at)
            .schema()?;
        let story = UserStory::new(&row.us_id, &row.story_text, &row.gui_id);
        story.validate().with_context(at).schema()?;
        let mut prototype = proto.clone();
        prototype.assign_ids();
        if let Some(gold) = &row.gold_component_ids {
            let present: BTreeSet<u32> = prototype.components().map(|c| c.id).collect();
            if let Some(id) = gold.difference(&present).next() {
                return Err(anyhow!("component {id} is not in GUI {}", row.gui_id)).with_context(at).schema();
            }
        }
        items.push(WorkItem {
            story,
            prototype: Arc::new(prototype),
            gold: row.gold_component_ids,
        });
    }
    Ok((items, builtin_pool()))
}

fn resolve_kind(task: Task, prompt: Option<&str>, temperature: Option<f64>) -> CliResult<PromptKind> {
    let default = match task {
        Task::Detect => "zs",
        Task::Match => "zs-a",
        Task::Recommend => "fs",
    };
    let kind = PromptKind::parse_for(task, prompt.unwrap_or(default)).schema()?;
    let Some(t) = temperature.filter(|_| task != Task::Recommend) else {
        return Ok(kind);
    };
    let cot = || {
        CotTemperature::new(t)
            .ok_or_else(|| anyhow!("no chain-of-thought variant at temperature {t}"))
            .schema()
    };
    match kind {
        PromptKind::DetectCot(_) => Ok(PromptKind::DetectCot(cot()?)),
        PromptKind::MatchCot(_) => Ok(PromptKind::MatchCot(cot()?)),
        _ if t == 0.0 => Ok(kind),
        _ => Err(anyhow!("{} runs at temperature 0; use a CoT prompt to sample", kind.id())).schema(),
    }
}

fn classify_gateway(e: GatewayError) -> Failure {
    let status = match e {
        GatewayError::Config(_) => Status::Schema,
        _ => Status::Backend,
    };
    Failure {
        status,
        error: e.into(),
    }
}

pub fn build_pipeline(
    backend: &str,
    parallel: usize,
    templates: Option<&Path>,
    pool: ExamplePool,
) -> CliResult<Pipeline> {
    let mut cfg = BackendConfig::from_arg(backend).map_err(classify_gateway)?;
    if parallel == 0 {
        return Err(anyhow!("--parallel must be at least 1")).schema();
    }
    cfg.max_parallel = parallel;
    let gateway = Gateway::from_config(&cfg).map_err(classify_gateway)?;
    let templates = match templates {
        Some(dir) => Templates::from_dir(dir).schema()?,
        None => Templates::default(),
    };
    Ok(Pipeline::new(PromptEngine::new(templates, cfg.model.clone()), gateway, pool))
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Gateway(g) => classify_gateway(g),
        other => Failure {
            status: Status::Schema,
            error: other.into(),
        },
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

/// Serialized writer for the JSON-lines output and its sidecar log.
struct Sink {
    out: Mutex<File>,
    log: Mutex<File>,
    errors: AtomicUsize,
    written: AtomicUsize,
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".log");
    PathBuf::from(name)
}

impl Sink {
    /// Opens `out`. When resuming, lines accepted by `keep` are retained and
    /// the rest dropped; otherwise the file starts empty.
    fn open(out: &Path, log: &Path, resume: bool, keep: impl Fn(&str) -> bool) -> CliResult<(Sink, Vec<String>)> {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .with_context(|| parent.display().to_string())
                .schema()?;
        }
        let kept: Vec<String> = if resume && out.exists() {
            read(out)?
                .lines()
                .filter(|l| !l.trim().is_empty() && keep(l))
                .map(str::to_string)
                .collect()
        } else {
            Vec::new()
        };
        let body: String = kept.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(out, body)
            .with_context(|| out.display().to_string())
            .schema()?;
        let open_append = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| p.display().to_string())
                .schema()
        };
        let sink = Sink {
            out: Mutex::new(open_append(out)?),
            log: Mutex::new(open_append(log)?),
            errors: AtomicUsize::new(0),
            written: AtomicUsize::new(0),
        };
        sink.note(&format!("start: {} item(s) kept from a previous run", kept.len()));
        Ok((sink, kept))
    }

    fn note(&self, message: &str) {
        let mut log = self.log.lock().unwrap();
        let _ = writeln!(log, "{} {message}", now_ms());
    }

    fn record<T: Serialize>(&self, us_id: &str, value: &T, error: Option<&str>) {
        let line = serde_json::to_string(value).expect("results serialize");
        {
            let mut out = self.out.lock().unwrap();
            if let Err(e) = writeln!(out, "{line}") {
                log::error!("cannot append output: {e}");
            }
        }
        self.written.fetch_add(1, Ordering::SeqCst);
        match error {
            Some(e) => {
                self.errors.fetch_add(1, Ordering::SeqCst);
                self.note(&format!("{us_id} error: {e}"));
            }
            None => self.note(&format!("{us_id} ok")),
        }
    }

    fn fail(&self, us_id: &str, error: &str) {
        self.errors.fetch_add(1, Ordering::SeqCst);
        self.note(&format!("{us_id} error: {error}"));
    }
}

/// `(us_id, prompt kind)` of a successful output line.
fn done_key(line: &str) -> Option<(String, String)> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    if !v["error"].is_null() {
        return None;
    }
    Some((v["us_id"].as_str()?.to_string(), v["prompt_kind"].as_str()?.to_string()))
}

pub fn run_batch(step: Step, args: &BatchArgs) -> CliResult {
    let task = step.task();
    let kind = resolve_kind(task, args.prompt.as_deref(), args.temperature)?;
    let store = load_store(&args.prototypes)?;
    let (items, pool) = load_items(&step, &args.input, &store)?;
    let pipeline = build_pipeline(&args.backend, args.parallel, args.templates.as_deref(), pool)?;
    let (sink, kept) = Sink::open(&args.out, &sidecar(&args.out), args.resume, |l| {
        done_key(l).is_some_and(|(_, k)| k == kind.id())
    })?;
    let done: HashSet<String> = kept.iter().filter_map(|l| done_key(l)).map(|(us, _)| us).collect();
    let pending: Vec<&WorkItem> = items.iter().filter(|i| !done.contains(&i.story.us_id)).collect();
    sink.note(&format!("{}: {} pending of {}", kind.id(), pending.len(), items.len()));

    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<PipelineError>> = Mutex::new(None);
    let recommendations = Mutex::new(Vec::new());
    let handle_error = |item: &WorkItem, e: PipelineError| -> Option<PipelineError> {
        if e.is_fatal() {
            abort.store(true, Ordering::SeqCst);
            fatal.lock().unwrap().get_or_insert(e);
            None
        } else {
            log::warn!("{}: {e}", item.story.us_id);
            Some(e)
        }
    };
    run_parallel(&pending, args.parallel, |item| {
        if abort.load(Ordering::SeqCst) {
            return;
        }
        let gold = item.gold.as_ref();
        let us_id = item.story.us_id.as_str();
        match &step {
            Step::Detect => match pipeline.detect(&item.story, &item.prototype, kind, gold) {
                Ok(v) => sink.record(us_id, &v, None),
                Err(e) => {
                    if let Some(e) = handle_error(item, e) {
                        let v = Verdict::failed(&item.story, &item.prototype.gui_id, kind, &e);
                        sink.record(us_id, &v, v.error.as_deref());
                    }
                }
            },
            Step::Match => match pipeline.match_components(&item.story, &item.prototype, kind, gold) {
                Ok(m) => sink.record(us_id, &m, None),
                Err(e) => {
                    if let Some(e) = handle_error(item, e) {
                        let m = MatchResult::failed(&item.story, &item.prototype, kind, gold, &e);
                        sink.record(us_id, &m, m.error.as_deref());
                    }
                }
            },
            Step::Recommend { k, .. } => {
                let t = args.temperature.unwrap_or(DEFAULT_TEMPERATURE);
                match pipeline.recommend(&item.story, &item.prototype, kind, *k, t) {
                    Ok(recs) => {
                        for r in &recs {
                            sink.record(us_id, r, None);
                        }
                        recommendations.lock().unwrap().extend(recs);
                    }
                    Err(e) => {
                        if let Some(e) = handle_error(item, e) {
                            sink.fail(us_id, &e.to_string());
                        }
                    }
                }
            }
        }
    });
    if let Some(e) = fatal.into_inner().unwrap() {
        sink.note(&format!("aborted: {e}"));
        return Err(pipeline_failure(e));
    }
    if let Step::Recommend {
        previews: Some(dir), ..
    } = &step
    {
        let recs = recommendations.into_inner().unwrap();
        let stories: Vec<UserStory> = items.iter().map(|i| i.story.clone()).collect();
        let paths = export_previews(&recs, &stories, dir, &pipeline.engine.templates.preview_shell).schema()?;
        eprintln!("{} preview(s) in {}", paths.len(), dir.display());
    }
    let errors = sink.errors.load(Ordering::SeqCst);
    sink.note(&format!("done: {} written, {errors} error(s)", sink.written.load(Ordering::SeqCst)));
    eprintln!(
        "{}: {} item(s) processed, {} kept, {errors} error(s); output {}",
        kind.id(),
        pending.len(),
        done.len(),
        args.out.display()
    );
    Ok(if errors > 0 { Status::Partial } else { Status::Ok })
}

fn parse_kinds(task: Task, list: &str) -> CliResult<Vec<PromptKind>> {
    if list.trim() == "all" {
        return Ok(PromptKind::evaluated(task));
    }
    let mut kinds = Vec::new();
    for token in list.split(',').filter(|t| !t.trim().is_empty()) {
        let kind = PromptKind::parse_for(task, token).schema()?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(anyhow!("--prompts names no prompt kind")).schema();
    }
    Ok(kinds)
}

/// `n` items at indices `i * len / n`; all of them when `n >= len`.
fn evenly_spaced<T>(items: Vec<T>, n: usize) -> Vec<T> {
    let len = items.len();
    if n >= len {
        return items;
    }
    let picked: HashSet<usize> = (0..n).map(|i| i * len / n).collect();
    items
        .into_iter()
        .enumerate()
        .filter(|(i, _)| picked.contains(i))
        .map(|(_, t)| t)
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn run_evaluate(
    question: Question,
    gold_path: &Path,
    prototypes: &Path,
    prompts: &str,
    backend: &str,
    parallel: usize,
    sample: Option<usize>,
    resume: bool,
    out: &Path,
) -> CliResult {
    let task = match question {
        Question::Rq1 => Task::Detect,
        Question::Rq2 => Task::Match,
    };
    let kinds = parse_kinds(task, prompts)?;
    let store = load_store(prototypes)?;
    let mut gold = GoldStandard::load(&read(gold_path)?, &store)
        .with_context(|| gold_path.display().to_string())
        .schema()?;
    if let Some(n) = sample {
        gold.records = evenly_spaced(std::mem::take(&mut gold.records), n);
    }
    let pool = build_pool(&gold.fewshot_pairs, &store, gold.seed);
    let pipeline = build_pipeline(backend, parallel, None, pool)?;
    let items_name = match question {
        Question::Rq1 => "verdicts.jsonl",
        Question::Rq2 => "matches.jsonl",
    };
    let (sink, kept) = Sink::open(&out.join(items_name), &out.join("evaluate.log"), resume, |l| {
        done_key(l).is_some()
    })?;
    let mut opts = EvalOptions {
        parallel,
        ..Default::default()
    };
    for line in &kept {
        match question {
            Question::Rq1 => opts.done_verdicts.extend(serde_json::from_str::<Verdict>(line).ok()),
            Question::Rq2 => opts.done_matches.extend(serde_json::from_str::<MatchResult>(line).ok()),
        }
    }
    let on_item = |item: Item<'_>| match item {
        Item::Verdict(v) => sink.record(&v.us_id, v, v.error.as_deref()),
        Item::Match(m) => sink.record(&m.us_id, m, m.error.as_deref()),
    };
    opts.on_item = Some(&on_item);
    let result = match question {
        Question::Rq1 => eval::run_rq1(&gold, &kinds, &pipeline, &opts),
        Question::Rq2 => eval::run_rq2(&gold, &kinds, &pipeline, &opts),
    };
    let report: EvalReport = match result {
        Ok(r) => r,
        Err(EvalError::Pipeline(e)) => {
            sink.note(&format!("aborted: {e}"));
            return Err(pipeline_failure(e));
        }
        Err(e) => return Err(e).schema(),
    };
    drop(sink);
    report.write_dir(out).schema()?;
    print!("{}", report.to_text());
    Ok(if report.error_count() > 0 {
        Status::Partial
    } else {
        Status::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evenly_spaced_picks_spread_indices() {
        assert_eq!(evenly_spaced((0..10).collect(), 4), [0, 2, 5, 7]);
        assert_eq!(evenly_spaced((0..3).collect(), 5), [0, 1, 2]);
        assert!(evenly_spaced((0..3).collect::<Vec<i32>>(), 0).is_empty());
    }

    #[test]
    fn temperature_selects_cot_variant() {
        let kind = resolve_kind(Task::Detect, Some("cot"), Some(1.3)).unwrap();
        assert_eq!(kind.id(), "detect-cot-t1.3");
        assert!(resolve_kind(Task::Detect, Some("zs"), Some(1.0)).is_err());
        assert_eq!(resolve_kind(Task::Match, None, None).unwrap().id(), "match-zs-a");
        assert!(resolve_kind(Task::Detect, Some("cot"), Some(0.7)).is_err());
    }

    #[test]
    fn gold_files_are_sniffed_by_header() {
        assert!(is_gold_file("\n{\"kind\":\"header\",\"seed\":1}\n"));
        assert!(!is_gold_file("{\"us_id\":\"US1\"}"));
    }
}
