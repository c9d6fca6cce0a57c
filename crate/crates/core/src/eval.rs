//! Experiment drivers: binary detection (RQ1) and component matching (RQ2)
//! over a gold standard, with pairwise significance tests and report
//! writers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::detection::Verdict;
use crate::fewshot::audit_leakage;
use crate::gold::{GoldRecord, GoldStandard};
use crate::matching::MatchResult;
use crate::metrics::{
    aggregate, binary_confusion, mcnemar, wilcoxon_signed_rank, BinaryMetrics, MetricsError,
    SetInstance, SignificanceResult,
};
use crate::pipeline::{run_parallel, Pipeline, PipelineError};
use crate::prompt::{PromptKind, Task};

pub const RQ1_HEADER: [&str; 8] = ["method", "P1", "R1", "F1_1", "P0", "R0", "F1_0", "ACC"];
pub const RQ2_HEADER: [&str; 8] = [
    "method", "macro_P", "macro_R", "macro_F1", "micro_P", "micro_R", "micro_F1", "micro_ACC",
];
pub const SIGNIFICANCE_HEADER: [&str; 7] =
    ["method_a", "method_b", "test", "statistic", "p_value", "n_effective", "note"];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0} is not a {1} prompt")]
    WrongTask(PromptKind, &'static str),
    #[error("gold standard has no records")]
    EmptyGold,
    #[error("cannot write report {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Question {
    Rq1,
    Rq2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Row {
    pub method: String,
    pub prompt_kind: PromptKind,
    pub n: usize,
    #[serde(flatten)]
    pub metrics: BinaryMetrics,
    pub errors: usize,
    pub unparsable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Row {
    pub method: String,
    pub prompt_kind: PromptKind,
    pub n: usize,
    #[serde(rename = "macro_P")]
    pub macro_p: f64,
    #[serde(rename = "macro_R")]
    pub macro_r: f64,
    #[serde(rename = "macro_F1")]
    pub macro_f1: f64,
    #[serde(rename = "micro_P")]
    pub micro_p: f64,
    #[serde(rename = "micro_R")]
    pub micro_r: f64,
    #[serde(rename = "micro_F1")]
    pub micro_f1: f64,
    #[serde(rename = "micro_ACC")]
    pub micro_acc: f64,
    pub errors: usize,
    pub dropped_ids: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub method_a: String,
    pub method_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<SignificanceResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub question: Question,
    pub backend: String,
    pub model: String,
    pub seed: u64,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rq1: Vec<Rq1Row>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rq2: Vec<Rq2Row>,
    pub significance: Vec<PairwiseTest>,
    #[serde(skip)]
    pub verdicts: Vec<Verdict>,
    #[serde(skip)]
    pub matches: Vec<MatchResult>,
}

impl EvalReport {
    pub fn error_count(&self) -> usize {
        self.rq1.iter().map(|r| r.errors).sum::<usize>() + self.rq2.iter().map(|r| r.errors).sum::<usize>()
    }
}

/// Run options. Items found in `done_*` are reused instead of being sent
/// to the backend again; `on_item` sees every newly computed item.
#[derive(Default)]
pub struct EvalOptions<'a> {
    pub parallel: usize,
    pub done_verdicts: Vec<Verdict>,
    pub done_matches: Vec<MatchResult>,
    #[allow(clippy::type_complexity)]
    pub on_item: Option<&'a (dyn Fn(Item<'_>) + Sync)>,
}

pub enum Item<'a> {
    Verdict(&'a Verdict),
    Match(&'a MatchResult),
}

fn check_kinds(kinds: &[PromptKind], task: Task, name: &'static str) -> Result<(), EvalError> {
    match kinds.iter().find(|k| k.task() != task) {
        Some(k) => Err(EvalError::WrongTask(*k, name)),
        None => Ok(()),
    }
}

/// Runs `f` over all records, stopping new backend calls after the first
/// fatal error.
fn drive<R: Send>(
    records: &[GoldRecord],
    parallel: usize,
    f: impl Fn(&GoldRecord) -> Result<R, PipelineError> + Sync + Send,
    fallback: impl Fn(&GoldRecord, &PipelineError) -> R + Sync + Send,
) -> Result<Vec<R>, EvalError> {
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<PipelineError>> = Mutex::new(None);
    let out = run_parallel(records, parallel, |r| {
        if abort.load(Ordering::SeqCst) {
            return None;
        }
        match f(r) {
            Ok(v) => Some(v),
            Err(e) if e.is_fatal() => {
                abort.store(true, Ordering::SeqCst);
                fatal.lock().unwrap().get_or_insert(e);
                None
            }
            Err(e) => {
                log::warn!("{}: {e}", r.us_id());
                Some(fallback(r, &e))
            }
        }
    });
    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e.into());
    }
    Ok(out.into_iter().map(|v| v.expect("no abort without fatal error")).collect())
}

/// Detection with every kind over every record's effective prototype.
pub fn run_rq1(
    gold: &GoldStandard,
    kinds: &[PromptKind],
    pipeline: &Pipeline,
    opts: &EvalOptions<'_>,
) -> Result<EvalReport, EvalError> {
    check_kinds(kinds, Task::Detect, "detection")?;
    if gold.records.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    audit_leakage(&pipeline.examples, &gold.records)?;
    let done: HashMap<(PromptKind, &str), &Verdict> = opts
        .done_verdicts
        .iter()
        .filter(|v| v.error.is_none())
        .map(|v| ((v.prompt_kind, v.us_id.as_str()), v))
        .collect();
    let truth: Vec<u8> = gold.records.iter().map(|r| r.assigned_class).collect();
    let mut rows = Vec::new();
    let mut per_kind: Vec<(PromptKind, Vec<u8>)> = Vec::new();
    let mut verdicts = Vec::new();
    for &kind in kinds {
        let results = drive(
            &gold.records,
            opts.parallel,
            |r| {
                if let Some(v) = done.get(&(kind, r.us_id())) {
                    return Ok((*v).clone());
                }
                let v = pipeline.detect(
                    &r.pair.story,
                    &r.effective_prototype,
                    kind,
                    Some(&r.pair.gold_component_ids),
                )?;
                if let Some(cb) = opts.on_item {
                    cb(Item::Verdict(&v));
                }
                Ok(v)
            },
            |r, e| {
                let v = Verdict::failed(&r.pair.story, r.gui_id(), kind, e);
                if let Some(cb) = opts.on_item {
                    cb(Item::Verdict(&v));
                }
                v
            },
        )?;
        let preds: Vec<u8> = results.iter().map(|v| v.label).collect();
        let confusion = binary_confusion(&preds, &truth)?;
        rows.push(Rq1Row {
            method: kind.label(),
            prompt_kind: kind,
            n: results.len(),
            metrics: BinaryMetrics::from_confusion(&confusion),
            errors: results.iter().filter(|v| v.error.is_some()).count(),
            unparsable: results.iter().filter(|v| v.unparsable).count(),
        });
        per_kind.push((kind, preds));
        verdicts.extend(results);
    }
    let mut significance = Vec::new();
    for (i, (ka, a)) in per_kind.iter().enumerate() {
        for (kb, b) in &per_kind[i + 1..] {
            significance.push(PairwiseTest {
                method_a: ka.label(),
                method_b: kb.label(),
                result: Some(mcnemar(a, b, &truth)?),
                note: None,
            });
        }
    }
    Ok(EvalReport {
        question: Question::Rq1,
        backend: pipeline.gateway.backend_name().into(),
        model: pipeline.gateway.model_name().into(),
        seed: gold.seed,
        records: gold.records.len(),
        rq1: rows,
        rq2: Vec::new(),
        significance,
        verdicts,
        matches: Vec::new(),
    })
}

/// Matching with every kind over every record's original prototype.
pub fn run_rq2(
    gold: &GoldStandard,
    kinds: &[PromptKind],
    pipeline: &Pipeline,
    opts: &EvalOptions<'_>,
) -> Result<EvalReport, EvalError> {
    check_kinds(kinds, Task::Match, "matching")?;
    if gold.records.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    audit_leakage(&pipeline.examples, &gold.records)?;
    let done: HashMap<(PromptKind, &str), &MatchResult> = opts
        .done_matches
        .iter()
        .filter(|m| m.error.is_none())
        .map(|m| ((m.prompt_kind, m.us_id.as_str()), m))
        .collect();
    let mut rows = Vec::new();
    let mut per_kind: Vec<(PromptKind, Vec<f64>)> = Vec::new();
    let mut matches = Vec::new();
    for &kind in kinds {
        let results = drive(
            &gold.records,
            opts.parallel,
            |r| {
                if let Some(m) = done.get(&(kind, r.us_id())) {
                    return Ok((*m).clone());
                }
                let m = pipeline.match_components(
                    &r.pair.story,
                    &r.original,
                    kind,
                    Some(&r.pair.gold_component_ids),
                )?;
                if let Some(cb) = opts.on_item {
                    cb(Item::Match(&m));
                }
                Ok(m)
            },
            |r, e| {
                let m = MatchResult::failed(
                    &r.pair.story,
                    &r.original,
                    kind,
                    Some(&r.pair.gold_component_ids),
                    e,
                );
                if let Some(cb) = opts.on_item {
                    cb(Item::Match(&m));
                }
                m
            },
        )?;
        let instances: Vec<SetInstance> = results
            .iter()
            .map(|m| SetInstance {
                predicted: m.predicted_ids.clone(),
                gold: m.gold_ids.clone().unwrap_or_default(),
                universe: m.universe.clone(),
            })
            .collect();
        let agg = aggregate(&instances)?;
        rows.push(Rq2Row {
            method: kind.label(),
            prompt_kind: kind,
            n: results.len(),
            macro_p: agg.macro_p,
            macro_r: agg.macro_r,
            macro_f1: agg.macro_f1,
            micro_p: agg.micro_p,
            micro_r: agg.micro_r,
            micro_f1: agg.micro_f1,
            micro_acc: agg.micro_acc,
            errors: results.iter().filter(|m| m.error.is_some()).count(),
            dropped_ids: results.iter().map(|m| m.dropped_ids).sum(),
        });
        per_kind.push((kind, agg.per_instance.iter().map(|s| s.f1).collect()));
        matches.extend(results);
    }
    let mut significance = Vec::new();
    for (i, (ka, a)) in per_kind.iter().enumerate() {
        for (kb, b) in &per_kind[i + 1..] {
            let (result, note) = match wilcoxon_signed_rank(a, b) {
                Ok(r) => (Some(r), None),
                Err(e @ MetricsError::TooFewPairs { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            significance.push(PairwiseTest {
                method_a: ka.label(),
                method_b: kb.label(),
                result,
                note,
            });
        }
    }
    Ok(EvalReport {
        question: Question::Rq2,
        backend: pipeline.gateway.backend_name().into(),
        model: pipeline.gateway.model_name().into(),
        seed: gold.seed,
        records: gold.records.len(),
        rq1: Vec::new(),
        rq2: rows,
        significance,
        verdicts: Vec::new(),
        matches,
    })
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// Three decimals without the leading zero, e.g. `.852`.
fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    fn table(&self) -> (Vec<&'static str>, Vec<(String, Vec<f64>)>) {
        match self.question {
            Question::Rq1 => (
                RQ1_HEADER.to_vec(),
                self.rq1
                    .iter()
                    .map(|r| (r.method.clone(), r.metrics.values().to_vec()))
                    .collect(),
            ),
            Question::Rq2 => (
                RQ2_HEADER.to_vec(),
                self.rq2
                    .iter()
                    .map(|r| {
                        (
                            r.method.clone(),
                            vec![r.macro_p, r.macro_r, r.macro_f1, r.micro_p, r.micro_r, r.micro_f1, r.micro_acc],
                        )
                    })
                    .collect(),
            ),
        }
    }

    /// One row per method; columns as in [`RQ1_HEADER`] / [`RQ2_HEADER`].
    pub fn to_csv(&self) -> String {
        let (header, rows) = self.table();
        let mut out = header.join(",");
        out.push('\n');
        for (method, values) in rows {
            out.push_str(&csv_field(&method));
            for v in values {
                out.push(',');
                out.push_str(&num(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn significance_csv(&self) -> String {
        let mut out = SIGNIFICANCE_HEADER.join(",");
        out.push('\n');
        for t in &self.significance {
            let (test, stat, p, n) = match &t.result {
                Some(r) => (
                    format!("{:?}", r.test),
                    num(r.statistic),
                    num(r.p_value),
                    r.n_effective.to_string(),
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{test},{stat},{p},{n},{}",
                csv_field(&t.method_a),
                csv_field(&t.method_b),
                csv_field(t.note.as_deref().unwrap_or(""))
            );
        }
        out
    }

    /// Aligned plain-text rendering of the metric table.
    pub fn to_text(&self) -> String {
        let (header, rows) = self.table();
        let width = rows
            .iter()
            .map(|(m, _)| m.len())
            .chain([header[0].len()])
            .max()
            .unwrap_or(6);
        let mut out = String::new();
        let caption = match self.question {
            Question::Rq1 => "Story implementation detection (binary classification)",
            Question::Rq2 => "Component matching",
        };
        let _ = writeln!(out, "{caption}: {} records, backend {}, model {}", self.records, self.backend, self.model);
        let _ = write!(out, "{:<width$}", "Method");
        for h in &header[1..] {
            let _ = write!(out, " {h:>9}");
        }
        out.push('\n');
        for (method, values) in rows {
            let _ = write!(out, "{method:<width$}");
            for v in values {
                let _ = write!(out, " {:>9}", short(v));
            }
            out.push('\n');
        }
        let errors = self.error_count();
        if errors > 0 {
            let _ = writeln!(out, "{errors} item(s) failed and were scored as misses");
        }
        out
    }

    /// Writes `<rq>.csv`, `<rq>.json`, `<rq>.txt`, the significance table
    /// and per-item records into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let stem = match self.question {
            Question::Rq1 => "rq1",
            Question::Rq2 => "rq2",
        };
        let sig_name = match self.question {
            Question::Rq1 => "mcnemar.csv",
            Question::Rq2 => "wilcoxon.csv",
        };
        let items: String = match self.question {
            Question::Rq1 => self
                .verdicts
                .iter()
                .map(|v| serde_json::to_string(v).expect("verdict serializes") + "\n")
                .collect(),
            Question::Rq2 => self
                .matches
                .iter()
                .map(|m| serde_json::to_string(m).expect("match serializes") + "\n")
                .collect(),
        };
        let items_name = match self.question {
            Question::Rq1 => "verdicts.jsonl",
            Question::Rq2 => "matches.jsonl",
        };
        let files = [
            (format!("{stem}.csv"), self.to_csv()),
            (
                format!("{stem}.json"),
                serde_json::to_string_pretty(self).expect("report serializes") + "\n",
            ),
            (format!("{stem}.txt"), self.to_text()),
            (sig_name.to_string(), self.significance_csv()),
            (items_name.to_string(), items),
        ];
        let mut paths = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io(&path))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Verdicts grouped per kind, in gold order, for ad-hoc analysis.
pub fn verdicts_by_kind(report: &EvalReport) -> BTreeMap<PromptKind, Vec<&Verdict>> {
    let mut out: BTreeMap<PromptKind, Vec<&Verdict>> = BTreeMap::new();
    for v in &report.verdicts {
        out.entry(v.prompt_kind).or_default().push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fewshot::build_pool;
    use crate::gateway::{Gateway, OracleBackend};
    use crate::gold;
    use crate::prompt::{PromptEngine, Templates};
    use crate::synth;
    use std::sync::Arc;

    fn setup(backend: OracleBackend) -> (GoldStandard, Pipeline) {
        let data = synth::dataset(&synth::SynthConfig::small(12, 40), 8);
        let g = gold::build(&data.pairs, &data.store, 3, 1).unwrap();
        let pool = build_pool(&g.fewshot_pairs, &data.store, 1);
        let p = Pipeline::new(
            PromptEngine::new(Templates::default(), "gpt-4"),
            Gateway::new(Arc::new(backend), 4),
            pool,
        );
        (g, p)
    }

    #[test]
    fn oracle_scores_perfectly() {
        let (g, p) = setup(OracleBackend::exact());
        let opts = EvalOptions {
            parallel: 4,
            ..Default::default()
        };
        let r1 = run_rq1(&g, &PromptKind::evaluated(Task::Detect), &p, &opts).unwrap();
        assert_eq!(r1.rq1.len(), 7);
        for row in &r1.rq1 {
            assert_eq!(row.metrics.values(), [1.0; 7], "{}", row.method);
        }
        assert!(r1.significance.iter().all(|t| t.result.as_ref().unwrap().p_value == 1.0));
        let r2 = run_rq2(&g, &PromptKind::evaluated(Task::Match), &p, &opts).unwrap();
        for row in &r2.rq2 {
            assert_eq!(
                [row.macro_p, row.macro_r, row.macro_f1, row.micro_p, row.micro_r, row.micro_f1, row.micro_acc],
                [1.0; 7]
            );
        }
        // identical per-instance scores leave nothing to rank
        assert!(r2.significance.iter().all(|t| t.result.is_none() && t.note.is_some()));
    }

    #[test]
    fn report_shapes() {
        let (g, p) = setup(OracleBackend::noisy(0.15, 7));
        let r1 = run_rq1(&g, &[PromptKind::DetectZs], &p, &EvalOptions::default()).unwrap();
        let csv = r1.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "method,P1,R1,F1_1,P0,R0,F1_0,ACC");
        assert!(csv.lines().nth(1).unwrap().starts_with("Zero-Shot,"));
        assert!(r1.to_text().contains("Zero-Shot"));
        let r2 = run_rq2(&g, &[PromptKind::MatchZsA], &p, &EvalOptions::default()).unwrap();
        assert_eq!(
            r2.to_csv().lines().next().unwrap(),
            "method,macro_P,macro_R,macro_F1,micro_P,micro_R,micro_F1,micro_ACC"
        );
    }

    #[test]
    fn resume_reuses_finished_items() {
        let (g, p) = setup(OracleBackend::noisy(0.3, 3));
        let first = run_rq1(&g, &[PromptKind::DetectZs], &p, &EvalOptions::default()).unwrap();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let count = |_: Item<'_>| {
            calls.fetch_add(1, Ordering::SeqCst);
        };
        let opts = EvalOptions {
            parallel: 1,
            done_verdicts: first.verdicts[..5].to_vec(),
            done_matches: Vec::new(),
            on_item: Some(&count),
        };
        let second = run_rq1(&g, &[PromptKind::DetectZs], &p, &opts).unwrap();
        assert_eq!(second.rq1, first.rq1);
        assert_eq!(calls.load(Ordering::SeqCst), g.records.len() - 5);
    }

    #[test]
    fn wrong_kinds_rejected() {
        let (g, p) = setup(OracleBackend::exact());
        assert!(matches!(
            run_rq1(&g, &[PromptKind::MatchZsA], &p, &EvalOptions::default()),
            Err(EvalError::WrongTask(..))
        ));
    }

    #[test]
    fn short_number_format() {
        assert_eq!(short(0.852), ".852");
        assert_eq!(short(1.0), "1.000");
    }
}
