//! HTML/CSS implementation suggestions for stories a prototype lacks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abstraction::abstract_gui;
use crate::gateway::{LlmResponse, OracleTask};
use crate::model::{GuiPrototype, UserStory};
use crate::pipeline::{footer, Pipeline, PipelineError};
use crate::prompt::{
    fill_template, parse_html, recommendation_explanation, PromptError, PromptKind, Task,
};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub us_id: String,
    /// 1-based generation order.
    pub rank: u32,
    pub markup: String,
    pub prompt_kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl Pipeline {
    /// Samples `k` candidates one after another; a candidate without markup
    /// is re-sampled once and then discarded.
    pub fn recommend(
        &self,
        story: &UserStory,
        proto: &GuiPrototype,
        kind: PromptKind,
        k: usize,
        temperature: f64,
    ) -> Result<Vec<Recommendation>, PipelineError> {
        if k == 0 {
            return Err(PipelineError::InvalidCount);
        }
        if kind.task() != Task::Recommend {
            return Err(PromptError::WrongTask {
                kind,
                task: "recommendation",
            }
            .into());
        }
        let abstraction = abstract_gui(proto, false);
        let examples = self.examples_for(kind, &proto.gui_id)?;
        let mut req = self
            .engine
            .render_recommendation(kind, story, &abstraction, examples, temperature)?;
        req.user_text.push_str(&footer(
            OracleTask::Recommend,
            &story.us_id,
            &story.text,
            Some(&Default::default()),
            proto,
            kind.is_cot(),
        ));
        let mut out = Vec::with_capacity(k);
        for candidate in 0..k {
            let mut markup = None;
            for attempt in 0..2 {
                let resp: LlmResponse = self.gateway.complete(&req)?;
                match parse_html(&resp) {
                    Ok(m) => {
                        markup = Some((m, resp));
                        break;
                    }
                    Err(e) => log::warn!(
                        "{}: candidate {} attempt {}: {e}",
                        story.us_id,
                        candidate + 1,
                        attempt + 1
                    ),
                }
            }
            if let Some((markup, resp)) = markup {
                out.push(Recommendation {
                    us_id: story.us_id.clone(),
                    rank: out.len() as u32 + 1,
                    markup,
                    prompt_kind: kind,
                    explanation: if kind.is_cot() {
                        recommendation_explanation(&resp)
                    } else {
                        None
                    },
                });
            }
        }
        if out.is_empty() {
            return Err(PipelineError::DegenerateBatch {
                us_id: story.us_id.clone(),
                k,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Template(#[from] PromptError),
    #[error("cannot write preview: {0}")]
    Io(#[from] std::io::Error),
}

pub fn preview_file_name(rec: &Recommendation) -> String {
    let safe: String = rec
        .us_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}-{}.html", rec.rank)
}

/// Writes one standalone document per recommendation into `dir`.
pub fn export_previews(
    recs: &[Recommendation],
    stories: &[UserStory],
    dir: &Path,
    shell: &str,
) -> Result<Vec<PathBuf>, ExportError> {
    if recs.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)?;
    recs.iter()
        .map(|rec| {
            let story = stories
                .iter()
                .find(|s| s.us_id == rec.us_id)
                .map_or("", |s| s.text.as_str());
            let title = format!("{} #{}", rec.us_id, rec.rank);
            let page = fill_template(
                "preview_shell.html",
                shell,
                &[
                    ("title", &crate::markup::escape(&title)),
                    ("story", &crate::markup::escape(story)),
                    ("markup", &rec.markup),
                ],
            )?;
            let path = dir.join(preview_file_name(rec));
            std::fs::write(&path, page)?;
            Ok(path)
        })
        .collect()
}
