//! Implemented / not-implemented classification of a story against a
//! prototype, and ranking by implementation probability.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::abstraction::abstract_gui;
use crate::gateway::{label_probability, OracleTask};
use crate::model::{GuiPrototype, UserStory};
use crate::pipeline::{footer, Pipeline, PipelineError};
use crate::prompt::{parse_verdict, PromptKind, Task};

/// Probability reported for labels that carry no calibrated certainty.
pub const UNCALIBRATED_PROBABILITY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub us_id: String,
    pub gui_id: String,
    pub label: u8,
    /// Certainty of `label`, in [0, 1].
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub low_confidence: bool,
    pub prompt_kind: PromptKind,
    /// The answer matched no label and was counted as class 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsable: bool,
    /// The request failed; the item is counted as class 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Verdict {
    /// Placeholder for an item whose request failed.
    pub fn failed(story: &UserStory, gui_id: &str, kind: PromptKind, error: &PipelineError) -> Self {
        Verdict {
            us_id: story.us_id.clone(),
            gui_id: gui_id.to_string(),
            label: 0,
            probability: 0.0,
            explanation: kind.is_cot().then(String::new),
            low_confidence: true,
            prompt_kind: kind,
            unparsable: false,
            error: Some(error.to_string()),
        }
    }
}

impl Pipeline {
    /// Classifies `story` against `proto`. `gold` holds the story's annotated
    /// component IDs when known; it is only forwarded to oracle backends.
    pub fn detect(
        &self,
        story: &UserStory,
        proto: &GuiPrototype,
        kind: PromptKind,
        gold: Option<&BTreeSet<u32>>,
    ) -> Result<Verdict, PipelineError> {
        if kind.task() != Task::Detect {
            return Err(crate::prompt::PromptError::WrongTask {
                kind,
                task: "detection",
            }
            .into());
        }
        let abstraction = abstract_gui(proto, false);
        let examples = self.examples_for(kind, &proto.gui_id)?;
        let mut req = self
            .engine
            .render_detection(kind, story, &abstraction, examples)?;
        req.user_text.push_str(&footer(
            OracleTask::Detect,
            &story.us_id,
            &story.text,
            gold,
            proto,
            kind.is_cot(),
        ));
        let resp = self.gateway.complete(&req)?;
        let parsed = parse_verdict(&resp, kind);
        let mut verdict = Verdict {
            us_id: story.us_id.clone(),
            gui_id: proto.gui_id.clone(),
            label: 0,
            probability: UNCALIBRATED_PROBABILITY,
            explanation: None,
            low_confidence: true,
            prompt_kind: kind,
            unparsable: false,
            error: None,
        };
        if kind.is_cot() {
            match parsed {
                Ok(p) => {
                    verdict.label = p.label;
                    verdict.explanation = p.explanation;
                }
                Err(e) => {
                    log::warn!("{}: {e}", story.us_id);
                    verdict.unparsable = true;
                    verdict.explanation = Some(resp.text.trim().to_string());
                }
            }
            return Ok(verdict);
        }
        match label_probability(&resp, ("1", "0")) {
            Ok((label, prob)) => {
                verdict.label = u8::from(label == "1");
                verdict.probability = prob;
                verdict.low_confidence = false;
            }
            Err(missing) => {
                log::warn!("{}: {missing}; falling back to the answer text", story.us_id);
                match parsed {
                    Ok(p) => verdict.label = p.label,
                    Err(e) => {
                        log::warn!("{}: {e}", story.us_id);
                        verdict.unparsable = true;
                    }
                }
            }
        }
        Ok(verdict)
    }
}

/// Label-1 verdicts first, each class by descending probability. Stable.
pub fn rank_stories(mut verdicts: Vec<Verdict>) -> Vec<Verdict> {
    verdicts.sort_by(|a, b| {
        b.label
            .cmp(&a.label)
            .then(b.probability.total_cmp(&a.probability))
    });
    verdicts
}
