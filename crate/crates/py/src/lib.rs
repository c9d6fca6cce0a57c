//! Python bindings: prototypes, the LLM pipeline, gold standards, metrics
//! and full experiments.

use std::collections::BTreeSet;
use std::path::Path;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use uslink_core::abstraction::{abstract_gui, component_line as core_line};
use uslink_core::detection::Verdict;
use uslink_core::eval::{self, EvalOptions};
use uslink_core::fewshot::{build_pool, builtin_pool};
use uslink_core::gateway::{BackendConfig, Gateway, GatewayError};
use uslink_core::gold::{self, GoldStandard};
use uslink_core::matching::MatchResult;
use uslink_core::metrics::{self, MetricsError, SetInstance};
use uslink_core::model::{parse_prototype, Bounds, ComponentType, GuiComponent, GuiPrototype, PrototypeStore, UserStory};
use uslink_core::pipeline::{ExamplePool, PipelineError};
use uslink_core::prompt::{PromptEngine, PromptKind, Task, Templates};
use uslink_core::recommendation::Recommendation;

create_exception!(uslink, SchemaError, PyValueError, "Input failed validation.");
create_exception!(uslink, BackendError, PyRuntimeError, "The LLM backend failed.");

fn schema(e: impl std::fmt::Display) -> PyErr {
    SchemaError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Gateway(GatewayError::Config(_)) => schema(e),
        PipelineError::Gateway(_) => BackendError::new_err(e.to_string()),
        _ => schema(e),
    }
}

fn metrics_err(e: MetricsError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parses a JSON document into Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn load_store(dir: &str) -> PyResult<PrototypeStore> {
    PrototypeStore::load_dir(Path::new(dir)).map_err(schema)
}

/// A GUI prototype: layout groups of typed, bounded components.
#[pyclass(name = "Prototype", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPrototype {
    inner: GuiPrototype,
}

#[pymethods]
impl PyPrototype {
    /// Components without an `id` are numbered in abstraction order.
    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        let mut inner = parse_prototype(document).map_err(schema)?;
        inner.assign_ids();
        Ok(PyPrototype { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("{path}: {e}")))?;
        Self::from_json(&text)
    }

    #[getter]
    fn gui_id(&self) -> &str {
        &self.inner.gui_id
    }

    #[getter]
    fn component_count(&self) -> usize {
        self.inner.component_count()
    }

    fn component_ids(&self) -> Vec<u32> {
        self.inner.components().map(|c| c.id).collect()
    }

    /// Textual abstraction, optionally with `[id]` prefixes.
    #[pyo3(signature = (ids = false))]
    fn abstraction(&self, ids: bool) -> String {
        abstract_gui(&self.inner, ids).rendered
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "Prototype(gui_id={:?}, groups={}, components={})",
            self.inner.gui_id,
            self.inner.groups.len(),
            self.inner.component_count()
        )
    }
}

/// One component line: `"<text>" (<Type>) (<name>)`.
#[pyfunction]
fn component_line(text: &str, component_type: &str, name: &str) -> String {
    let Ok(ctype) = component_type.parse::<ComponentType>();
    core_line(&GuiComponent::new(text, ctype, name, Bounds::new(0, 0, 1, 1)))
}

#[pyclass(name = "Verdict", frozen, get_all)]
struct PyVerdict {
    us_id: String,
    gui_id: String,
    label: u8,
    probability: f64,
    explanation: Option<String>,
    low_confidence: bool,
    prompt_kind: String,
    unparsable: bool,
    error: Option<String>,
}

impl From<Verdict> for PyVerdict {
    fn from(v: Verdict) -> Self {
        PyVerdict {
            prompt_kind: v.prompt_kind.id(),
            us_id: v.us_id,
            gui_id: v.gui_id,
            label: v.label,
            probability: v.probability,
            explanation: v.explanation,
            low_confidence: v.low_confidence,
            unparsable: v.unparsable,
            error: v.error,
        }
    }
}

#[pymethods]
impl PyVerdict {
    fn __repr__(&self) -> String {
        format!(
            "Verdict(us_id={:?}, label={}, probability={:.3})",
            self.us_id, self.label, self.probability
        )
    }
}

#[pyclass(name = "MatchResult", frozen, get_all)]
struct PyMatchResult {
    us_id: String,
    gui_id: String,
    predicted_ids: BTreeSet<u32>,
    gold_ids: Option<BTreeSet<u32>>,
    prompt_kind: String,
    dropped_ids: usize,
    universe: BTreeSet<u32>,
    error: Option<String>,
}

impl From<MatchResult> for PyMatchResult {
    fn from(m: MatchResult) -> Self {
        PyMatchResult {
            prompt_kind: m.prompt_kind.id(),
            us_id: m.us_id,
            gui_id: m.gui_id,
            predicted_ids: m.predicted_ids,
            gold_ids: m.gold_ids,
            dropped_ids: m.dropped_ids,
            universe: m.universe,
            error: m.error,
        }
    }
}

#[pymethods]
impl PyMatchResult {
    fn __repr__(&self) -> String {
        format!("MatchResult(us_id={:?}, predicted_ids={:?})", self.us_id, self.predicted_ids)
    }
}

#[pyclass(name = "Recommendation", frozen, get_all)]
struct PyRecommendation {
    us_id: String,
    rank: u32,
    markup: String,
    prompt_kind: String,
    explanation: Option<String>,
}

impl From<Recommendation> for PyRecommendation {
    fn from(r: Recommendation) -> Self {
        PyRecommendation {
            prompt_kind: r.prompt_kind.id(),
            us_id: r.us_id,
            rank: r.rank,
            markup: r.markup,
            explanation: r.explanation,
        }
    }
}

#[pymethods]
impl PyRecommendation {
    fn __repr__(&self) -> String {
        format!("Recommendation(us_id={:?}, rank={})", self.us_id, self.rank)
    }
}

fn build_pipeline(backend: &str, parallel: usize, pool: ExamplePool) -> PyResult<uslink_core::pipeline::Pipeline> {
    let mut cfg = BackendConfig::from_arg(backend).map_err(schema)?;
    cfg.max_parallel = parallel.max(1);
    let gateway = Gateway::from_config(&cfg).map_err(|e| pipeline_err(e.into()))?;
    Ok(uslink_core::pipeline::Pipeline::new(
        PromptEngine::new(Templates::default(), cfg.model.clone()),
        gateway,
        pool,
    ))
}

/// Detection, matching and recommendation against one backend.
#[pyclass(name = "Pipeline", frozen)]
struct PyPipeline {
    inner: uslink_core::pipeline::Pipeline,
}

fn story_and_proto(us_id: &str, story: &str, proto: &PyPrototype) -> PyResult<(UserStory, GuiPrototype)> {
    let story = UserStory::new(us_id, story, &proto.inner.gui_id);
    story.validate().map_err(schema)?;
    Ok((story, proto.inner.clone()))
}

#[pymethods]
impl PyPipeline {
    /// `backend` is a shorthand (`oracle-mock`, `noisy-oracle-mock:0.15:7`,
    /// `remote`, `scripted:<cassette>`) or a TOML config path. Few-shot
    /// examples come from `gold` when given, else from the built-in pool.
    #[new]
    #[pyo3(signature = (backend = "oracle-mock", parallel = 4, gold = None))]
    fn new(backend: &str, parallel: usize, gold: Option<&PyGold>) -> PyResult<Self> {
        let pool = match gold {
            Some(g) => build_pool(&g.inner.fewshot_pairs, &g.store, g.inner.seed),
            None => builtin_pool(),
        };
        Ok(PyPipeline {
            inner: build_pipeline(backend, parallel, pool)?,
        })
    }

    #[pyo3(signature = (us_id, story, prototype, prompt = "zs", gold_ids = None))]
    fn detect(
        &self,
        py: Python<'_>,
        us_id: &str,
        story: &str,
        prototype: &PyPrototype,
        prompt: &str,
        gold_ids: Option<BTreeSet<u32>>,
    ) -> PyResult<PyVerdict> {
        let kind = PromptKind::parse_for(Task::Detect, prompt).map_err(schema)?;
        let (story, proto) = story_and_proto(us_id, story, prototype)?;
        py.detach(|| self.inner.detect(&story, &proto, kind, gold_ids.as_ref()))
            .map(PyVerdict::from)
            .map_err(pipeline_err)
    }

    #[pyo3(signature = (us_id, story, prototype, prompt = "zs-a", gold_ids = None))]
    fn match_components(
        &self,
        py: Python<'_>,
        us_id: &str,
        story: &str,
        prototype: &PyPrototype,
        prompt: &str,
        gold_ids: Option<BTreeSet<u32>>,
    ) -> PyResult<PyMatchResult> {
        let kind = PromptKind::parse_for(Task::Match, prompt).map_err(schema)?;
        let (story, proto) = story_and_proto(us_id, story, prototype)?;
        py.detach(|| self.inner.match_components(&story, &proto, kind, gold_ids.as_ref()))
            .map(PyMatchResult::from)
            .map_err(pipeline_err)
    }

    #[pyo3(signature = (us_id, story, prototype, k = 3, temperature = 1.0, prompt = "fs"))]
    #[allow(clippy::too_many_arguments)]
    fn recommend(
        &self,
        py: Python<'_>,
        us_id: &str,
        story: &str,
        prototype: &PyPrototype,
        k: usize,
        temperature: f64,
        prompt: &str,
    ) -> PyResult<Vec<PyRecommendation>> {
        let kind = PromptKind::parse_for(Task::Recommend, prompt).map_err(schema)?;
        let (story, proto) = story_and_proto(us_id, story, prototype)?;
        let recs = py
            .detach(|| self.inner.recommend(&story, &proto, kind, k, temperature))
            .map_err(pipeline_err)?;
        Ok(recs.into_iter().map(PyRecommendation::from).collect())
    }
}

/// A gold standard together with the prototypes it refers to.
#[pyclass(name = "Gold", frozen)]
struct PyGold {
    inner: GoldStandard,
    store: PrototypeStore,
}

#[pymethods]
impl PyGold {
    #[staticmethod]
    fn load(path: &str, prototypes: &str) -> PyResult<Self> {
        let store = load_store(prototypes)?;
        let inner = GoldStandard::load_file(Path::new(path), &store).map_err(schema)?;
        Ok(PyGold { inner, store })
    }

    /// Builds from a JSON-lines file of annotated story/GUI pairs.
    #[staticmethod]
    #[pyo3(signature = (pairs, prototypes, fewshot_guis = gold::DEFAULT_FEWSHOT_GUIS, seed = gold::DEFAULT_SEED))]
    fn build(pairs: &str, prototypes: &str, fewshot_guis: usize, seed: u64) -> PyResult<Self> {
        let store = load_store(prototypes)?;
        let text = std::fs::read_to_string(pairs).map_err(|e| schema(format!("{pairs}: {e}")))?;
        let pairs = gold::parse_pairs(&text).map_err(schema)?;
        let inner = gold::build(&pairs, &store, fewshot_guis, seed).map_err(schema)?;
        Ok(PyGold { inner, store })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn fewshot_guis(&self) -> Vec<String> {
        self.inner.fewshot_guis.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn count_class(&self, class: u8) -> usize {
        self.inner.count_class(class)
    }

    /// `(us_id, story text, class, effective prototype, gold IDs)` per record.
    fn records(&self) -> Vec<(String, String, u8, PyPrototype, BTreeSet<u32>)> {
        self.inner
            .records
            .iter()
            .map(|r| {
                (
                    r.us_id().to_string(),
                    r.pair.story.text.clone(),
                    r.assigned_class,
                    PyPrototype {
                        inner: (*r.effective_prototype).clone(),
                    },
                    r.pair.gold_component_ids.clone(),
                )
            })
            .collect()
    }

    /// The canonical JSON-lines serialization.
    fn emit(&self) -> String {
        self.inner.emit()
    }
}

/// Writes a synthetic dataset: `<out>/prototypes/` and `<out>/pairs.jsonl`.
#[pyfunction]
#[pyo3(signature = (out, guis = 60, pairs = 231, seed = uslink_core::synth::DEFAULT_SEED))]
fn synth_dataset(out: &str, guis: usize, pairs: usize, seed: u64) -> PyResult<(usize, usize)> {
    let data = uslink_core::synth::dataset(&uslink_core::synth::SynthConfig::small(guis, pairs), seed);
    let out = Path::new(out);
    data.store.write_dir(&out.join("prototypes")).map_err(schema)?;
    std::fs::write(out.join("pairs.jsonl"), gold::pairs_to_jsonl(&data.pairs))
        .map_err(|e| schema(format!("{}: {e}", out.display())))?;
    Ok((data.store.len(), data.pairs.len()))
}

/// Runs `rq1` (detection) or `rq2` (matching) over a gold standard and
/// returns the report. `out`, when given, receives CSV/JSON/text files.
#[pyfunction]
#[pyo3(signature = (question, gold, prompts = "all", backend = "oracle-mock", parallel = 4, out = None))]
fn evaluate<'py>(
    py: Python<'py>,
    question: &str,
    gold: &PyGold,
    prompts: &str,
    backend: &str,
    parallel: usize,
    out: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let task = match question {
        "rq1" => Task::Detect,
        "rq2" => Task::Match,
        other => return Err(schema(format!("unknown question {other:?}; expected rq1 or rq2"))),
    };
    let kinds = if prompts.trim() == "all" {
        PromptKind::evaluated(task)
    } else {
        prompts
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| PromptKind::parse_for(task, t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(schema)?
    };
    let pool = build_pool(&gold.inner.fewshot_pairs, &gold.store, gold.inner.seed);
    let pipeline = build_pipeline(backend, parallel, pool)?;
    let opts = EvalOptions {
        parallel,
        ..Default::default()
    };
    let report = py
        .detach(|| match task {
            Task::Detect => eval::run_rq1(&gold.inner, &kinds, &pipeline, &opts),
            _ => eval::run_rq2(&gold.inner, &kinds, &pipeline, &opts),
        })
        .map_err(|e| match e {
            eval::EvalError::Pipeline(e) => pipeline_err(e),
            other => schema(other),
        })?;
    if let Some(dir) = out {
        report.write_dir(Path::new(dir)).map_err(schema)?;
    }
    to_py(py, &report)
}

#[pyfunction]
fn binary_metrics<'py>(py: Python<'py>, preds: Vec<u8>, gold: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::binary_metrics(&preds, &gold).map_err(metrics_err)?)
}

/// Per-instance scores of one matching answer.
#[pyfunction]
fn set_metrics<'py>(
    py: Python<'py>,
    predicted: BTreeSet<u32>,
    gold: BTreeSet<u32>,
    universe: BTreeSet<u32>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::set_metrics_instance(&predicted, &gold, &universe).map_err(metrics_err)?)
}

/// Macro and micro scores over `(predicted, gold, universe)` triples.
#[pyfunction]
fn aggregate<'py>(
    py: Python<'py>,
    instances: Vec<(BTreeSet<u32>, BTreeSet<u32>, BTreeSet<u32>)>,
) -> PyResult<Bound<'py, PyAny>> {
    let instances: Vec<SetInstance> = instances
        .into_iter()
        .map(|(predicted, gold, universe)| SetInstance {
            predicted,
            gold,
            universe,
        })
        .collect();
    to_py(py, &metrics::aggregate(&instances).map_err(metrics_err)?)
}

#[pyfunction]
fn mcnemar<'py>(py: Python<'py>, preds_a: Vec<u8>, preds_b: Vec<u8>, gold: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::mcnemar(&preds_a, &preds_b, &gold).map_err(metrics_err)?)
}

#[pyfunction]
fn wilcoxon<'py>(py: Python<'py>, xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::wilcoxon_signed_rank(&xs, &ys).map_err(metrics_err)?)
}

#[pyfunction]
fn cohen_kappa(labels_a: Vec<String>, labels_b: Vec<String>) -> PyResult<f64> {
    metrics::cohen_kappa(&labels_a, &labels_b).map_err(metrics_err)
}

#[pymodule]
fn uslink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SchemaError", m.py().get_type::<SchemaError>())?;
    m.add("BackendError", m.py().get_type::<BackendError>())?;
    m.add_class::<PyPrototype>()?;
    m.add_class::<PyVerdict>()?;
    m.add_class::<PyMatchResult>()?;
    m.add_class::<PyRecommendation>()?;
    m.add_class::<PyPipeline>()?;
    m.add_class::<PyGold>()?;
    m.add_function(wrap_pyfunction!(component_line, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(binary_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(set_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    Ok(())
}
