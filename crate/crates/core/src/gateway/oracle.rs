use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, GatewayError, LlmRequest, LlmResponse, Usage};

const FOOTER_OPEN: &str = "\n\n<<oracle ";
const FOOTER_CLOSE: &str = ">>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleTask {
    Detect,
    Match,
    Recommend,
}

/// Ground truth appended to evaluation prompts. Component IDs are the
/// stable IDs of the source prototype; `present` lists the IDs still in the
/// prompted prototype in emission order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleFooter {
    pub task: OracleTask,
    pub us_id: String,
    pub gold: BTreeSet<u32>,
    pub present: Vec<u32>,
    #[serde(default)]
    pub cot: bool,
    #[serde(default)]
    pub story: String,
}

impl OracleFooter {
    pub fn render(&self) -> String {
        format!(
            "{FOOTER_OPEN}{}{FOOTER_CLOSE}",
            serde_json::to_string(self).expect("footer serializes")
        )
    }

    pub fn parse(user_text: &str) -> Option<OracleFooter> {
        let start = user_text.rfind(FOOTER_OPEN)?;
        let body = user_text[start + FOOTER_OPEN.len()..].strip_suffix(FOOTER_CLOSE)?;
        serde_json::from_str(body).ok()
    }

    pub fn implemented(&self) -> bool {
        let present: BTreeSet<u32> = self.present.iter().copied().collect();
        self.gold.is_subset(&present)
    }

    /// Gold components as numbered in the ID-annotated abstraction.
    pub fn emitted_gold_ids(&self) -> BTreeSet<u32> {
        self.present
            .iter()
            .enumerate()
            .filter(|(_, id)| self.gold.contains(id))
            .map(|(i, _)| i as u32 + 1)
            .collect()
    }
}

pub(crate) fn strip_footer(user_text: &str) -> &str {
    match user_text.rfind(FOOTER_OPEN) {
        Some(start) if user_text.ends_with(FOOTER_CLOSE) => &user_text[..start],
        _ => user_text,
    }
}

/// Answers from the prompt footer. With a flip probability each answer
/// (detection label, or membership of each component ID) is inverted with
/// that probability, drawn from a generator seeded by the request hash so
/// results do not depend on call order.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    flip_prob: f64,
    seed: u64,
}

impl OracleBackend {
    pub fn exact() -> Self {
        OracleBackend {
            flip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn noisy(flip_prob: f64, seed: u64) -> Self {
        OracleBackend { flip_prob, seed }
    }

    fn rng_for(&self, req: &LlmRequest) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(req.stable_hash().as_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn detect(&self, footer: &OracleFooter, req: &LlmRequest, rng: &mut ChaCha8Rng) -> LlmResponse {
        let mut implemented = footer.implemented();
        if self.flip_prob > 0.0 && rng.random::<f64>() < self.flip_prob {
            implemented = !implemented;
        }
        let label = if implemented { "1" } else { "0" };
        match &req.want_logprobs_for {
            Some(candidates) => {
                let mut logprobs = BTreeMap::new();
                if self.flip_prob == 0.0 {
                    logprobs.insert(label.to_string(), 0.0);
                } else {
                    let certainty: f64 = rng.random_range(0.55..0.99);
                    logprobs.insert(label.to_string(), certainty.ln());
                    let other = if implemented { "0" } else { "1" };
                    logprobs.insert(other.to_string(), (1.0 - certainty).ln());
                }
                logprobs.retain(|k, _| candidates.contains(k));
                LlmResponse {
                    text: label.to_string(),
                    label_logprobs: Some(logprobs),
                    usage: Usage::default(),
                }
            }
            None => LlmResponse::text(format!(
                "The story {} needs {} annotated component(s); {} of them appear in the prototype.\nAnswer: {label}",
                footer.us_id,
                footer.gold.len(),
                footer.gold.iter().filter(|g| footer.present.contains(g)).count(),
            )),
        }
    }

    fn matching(&self, footer: &OracleFooter, rng: &mut ChaCha8Rng) -> LlmResponse {
        let mut ids = footer.emitted_gold_ids();
        if self.flip_prob > 0.0 {
            for id in 1..=footer.present.len() as u32 {
                if rng.random::<f64>() < self.flip_prob && !ids.remove(&id) {
                    ids.insert(id);
                }
            }
        }
        let list = ids
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        if footer.cot {
            LlmResponse::text(format!(
                "The components fulfilling {} are listed below.\nAnswer: [{list}]",
                footer.us_id
            ))
        } else {
            LlmResponse::text(format!("[{list}]"))
        }
    }

    fn recommend(&self, footer: &OracleFooter) -> LlmResponse {
        let goal = footer
            .story
            .split_once("I want")
            .map_or(footer.story.as_str(), |(_, g)| g)
            .trim()
            .trim_end_matches('.');
        let goal = html_escape(goal);
        let markup = format!(
            "<div class=\"recommendation\">\n  <label>{goal}</label>\n  <input type=\"text\" name=\"value\" placeholder=\"{goal}\">\n  <button name=\"apply\">Apply</button>\n</div>"
        );
        let text = if footer.cot {
            format!("The story asks for: {goal}.\n```html\n{markup}\n```")
        } else {
            format!("```html\n{markup}\n```")
        };
        LlmResponse::text(text)
    }
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Backend for OracleBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let footer = OracleFooter::parse(&req.user_text).ok_or(GatewayError::OracleFooterMissing)?;
        let mut rng = self.rng_for(req);
        Ok(match footer.task {
            OracleTask::Detect => self.detect(&footer, req, &mut rng),
            OracleTask::Match => self.matching(&footer, &mut rng),
            OracleTask::Recommend => self.recommend(&footer),
        })
    }

    fn name(&self) -> &str {
        if self.flip_prob > 0.0 {
            "noisy-oracle-mock"
        } else {
            "oracle-mock"
        }
    }

    fn reads_oracle_footer(&self) -> bool {
        true
    }
}
