//! Shared state of the detection, matching and recommendation steps.

use std::collections::BTreeSet;

use crate::abstraction::abstract_gui;
use crate::gateway::{Gateway, GatewayError, OracleFooter, OracleTask};
use crate::model::GuiPrototype;
use crate::prompt::{FewShotExample, PromptEngine, PromptError, PromptKind, Task};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("few-shot example from GUI {0} would leak into a prompt about the same GUI")]
    Leakage(String),
    #[error("all {k} recommendation candidates for {us_id} lacked markup")]
    DegenerateBatch { us_id: String, k: usize },
    #[error("k must be at least 1")]
    InvalidCount,
}

impl PipelineError {
    /// Errors that abort a batch rather than a single item.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            PipelineError::Gateway(GatewayError::Auth(_) | GatewayError::Config(_))
                | PipelineError::Prompt(_)
                | PipelineError::Leakage(_)
        )
    }
}

/// Few-shot examples per task, drawn from the reserved GUIs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExamplePool {
    pub detection: Vec<FewShotExample>,
    pub matching: Vec<FewShotExample>,
    pub recommendation: Vec<FewShotExample>,
}

impl ExamplePool {
    pub fn for_kind(&self, kind: PromptKind) -> Result<&[FewShotExample], PromptError> {
        let pool = match kind.task() {
            Task::Detect => &self.detection,
            Task::Match => &self.matching,
            Task::Recommend => &self.recommendation,
        };
        match kind.example_count() {
            Some(0) => Ok(&[]),
            Some(n) if pool.len() >= n => Ok(&pool[..n]),
            Some(n) => Err(PromptError::ExampleCount {
                kind,
                expected: n.to_string(),
                got: pool.len(),
            }),
            None => Ok(pool),
        }
    }
}

#[derive(Debug)]
pub struct Pipeline {
    pub engine: PromptEngine,
    pub gateway: Gateway,
    pub examples: ExamplePool,
}

impl Pipeline {
    pub fn new(engine: PromptEngine, gateway: Gateway, examples: ExamplePool) -> Self {
        Pipeline {
            engine,
            gateway,
            examples,
        }
    }

    pub(crate) fn examples_for(
        &self,
        kind: PromptKind,
        gui_id: &str,
    ) -> Result<&[FewShotExample], PipelineError> {
        let examples = self.examples.for_kind(kind)?;
        if let Some(ex) = examples.iter().find(|e| e.source_gui_id == gui_id) {
            return Err(PipelineError::Leakage(ex.source_gui_id.clone()));
        }
        Ok(examples)
    }
}

/// Stable component IDs of `proto` in emission order. Prototypes without
/// IDs are numbered as their own ID abstraction would number them.
pub fn present_ids(proto: &GuiPrototype) -> Vec<u32> {
    let owned;
    let proto = if proto.components().any(|c| c.id == 0) {
        let mut p = proto.clone();
        p.assign_ids();
        owned = p;
        &owned
    } else {
        proto
    };
    abstract_gui(proto, false)
        .lines
        .iter()
        .filter_map(|l| l.origin)
        .map(|(g, c)| proto.groups[g].components[c].id)
        .collect()
}

pub(crate) fn footer(
    task: OracleTask,
    us_id: &str,
    story: &str,
    gold: Option<&BTreeSet<u32>>,
    proto: &GuiPrototype,
    cot: bool,
) -> String {
    let Some(gold) = gold else {
        return String::new();
    };
    OracleFooter {
        task,
        us_id: us_id.to_string(),
        gold: gold.clone(),
        present: present_ids(proto),
        cot,
        story: story.to_string(),
    }
    .render()
}

/// Maps `f` over `items` on a pool of `threads` workers. Output order is
/// input order regardless of completion order.
pub fn run_parallel<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("cannot start worker pool ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}
