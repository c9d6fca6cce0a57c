//! Extraction of the components that fulfill a story.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::abstraction::abstract_gui;
use crate::gateway::OracleTask;
use crate::model::{GuiPrototype, UserStory};
use crate::pipeline::{footer, present_ids, Pipeline, PipelineError};
use crate::prompt::{parse_id_set, PromptError, PromptKind, Task};

/// IDs refer to the numbering of the ID-annotated abstraction of the
/// prompted prototype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub us_id: String,
    pub gui_id: String,
    pub predicted_ids: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_ids: Option<BTreeSet<u32>>,
    pub prompt_kind: PromptKind,
    /// Answered IDs outside the abstraction, dropped from `predicted_ids`.
    #[serde(default)]
    pub dropped_ids: usize,
    /// Every ID of the abstraction.
    pub universe: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MatchResult {
    pub fn failed(
        story: &UserStory,
        proto: &GuiPrototype,
        kind: PromptKind,
        gold: Option<&BTreeSet<u32>>,
        error: &PipelineError,
    ) -> Self {
        MatchResult {
            us_id: story.us_id.clone(),
            gui_id: proto.gui_id.clone(),
            predicted_ids: BTreeSet::new(),
            gold_ids: gold.map(|g| emitted_ids(proto, g)),
            prompt_kind: kind,
            dropped_ids: 0,
            universe: (1..=proto.component_count() as u32).collect(),
            error: Some(error.to_string()),
        }
    }
}

/// Translates stable component IDs into the emitted numbering of `proto`.
pub fn emitted_ids(proto: &GuiPrototype, stable: &BTreeSet<u32>) -> BTreeSet<u32> {
    present_ids(proto)
        .iter()
        .enumerate()
        .filter(|(_, id)| stable.contains(id))
        .map(|(i, _)| i as u32 + 1)
        .collect()
}

impl Pipeline {
    /// Asks which components of `proto` fulfill `story`. `gold` holds the
    /// annotated stable IDs when known.
    pub fn match_components(
        &self,
        story: &UserStory,
        proto: &GuiPrototype,
        kind: PromptKind,
        gold: Option<&BTreeSet<u32>>,
    ) -> Result<MatchResult, PipelineError> {
        if kind.task() != Task::Match {
            return Err(PromptError::WrongTask {
                kind,
                task: "matching",
            }
            .into());
        }
        let abstraction = abstract_gui(proto, true);
        let examples = self.examples_for(kind, &proto.gui_id)?;
        let mut req = self
            .engine
            .render_matching(kind, story, &abstraction, examples)?;
        req.user_text.push_str(&footer(
            OracleTask::Match,
            &story.us_id,
            &story.text,
            gold,
            proto,
            kind.is_cot(),
        ));
        let resp = self.gateway.complete(&req)?;
        let parsed = parse_id_set(&resp);
        let universe = abstraction.component_ids();
        let (predicted_ids, dropped): (BTreeSet<u32>, BTreeSet<u32>) =
            parsed.ids.into_iter().partition(|id| universe.contains(id));
        if !dropped.is_empty() {
            log::warn!(
                "{}: dropped {} out-of-range id(s) {:?}",
                story.us_id,
                dropped.len(),
                dropped
            );
        }
        Ok(MatchResult {
            us_id: story.us_id.clone(),
            gui_id: proto.gui_id.clone(),
            predicted_ids,
            gold_ids: gold.map(|g| emitted_ids(proto, g)),
            prompt_kind: kind,
            dropped_ids: dropped.len(),
            universe,
            error: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, Gateway, GatewayError, LlmRequest, LlmResponse, OracleBackend};
    use crate::pipeline::ExamplePool;
    use crate::prompt::{PromptEngine, Templates};
    use crate::synth;
    use std::sync::Arc;

    struct Fixed(&'static str);

    impl Backend for Fixed {
        fn complete(&self, _: &LlmRequest) -> Result<LlmResponse, GatewayError> {
            Ok(LlmResponse::text(self.0))
        }
        fn name(&self) -> &str {
            "fixed"
        }
    }

    fn pipeline(backend: Arc<dyn Backend>) -> Pipeline {
        Pipeline::new(
            PromptEngine::new(Templates::default(), "gpt-4"),
            Gateway::new(backend, 1),
            ExamplePool::default(),
        )
    }

    #[test]
    fn oracle_returns_gold() {
        let data = synth::dataset(&synth::SynthConfig::small(3, 3), 5);
        let p = pipeline(Arc::new(OracleBackend::exact()));
        for pair in &data.pairs {
            let proto = data.store.get(&pair.gui_id).unwrap();
            let r = p
                .match_components(&pair.story, proto, PromptKind::MatchZsA, Some(&pair.gold_component_ids))
                .unwrap();
            assert_eq!(Some(&r.predicted_ids), r.gold_ids.as_ref());
            assert_eq!(r.predicted_ids, pair.gold_component_ids);
        }
    }

    #[test]
    fn out_of_range_ids_dropped() {
        let data = synth::dataset(&synth::SynthConfig::small(1, 1), 5);
        let pair = &data.pairs[0];
        let proto = data.store.get(&pair.gui_id).unwrap();
        assert!(proto.component_count() >= 2 && proto.component_count() < 99);
        let r = pipeline(Arc::new(Fixed("[2, 99]")))
            .match_components(&pair.story, proto, PromptKind::MatchZsA, None)
            .unwrap();
        assert_eq!(r.predicted_ids, BTreeSet::from([2]));
        assert_eq!(r.dropped_ids, 1);
    }

    #[test]
    fn empty_answer_is_valid() {
        let data = synth::dataset(&synth::SynthConfig::small(1, 1), 5);
        let pair = &data.pairs[0];
        let proto = data.store.get(&pair.gui_id).unwrap();
        let r = pipeline(Arc::new(Fixed("none of them")))
            .match_components(&pair.story, proto, PromptKind::MatchZsB, None)
            .unwrap();
        assert!(r.predicted_ids.is_empty());
    }
}
