//! Prompt rendering for detection, matching and recommendation, and parsing
//! of model outputs into typed results.
//!
//! Templates are plain text files with `{{instruction}}`, `{{examples}}`,
//! `{{user_story}}` and `{{gui_abstraction}}` placeholders. Defaults are
//! compiled in; [`Templates::from_dir`] overrides any subset of them.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::abstraction::GuiAbstraction;
use crate::gateway::{LlmRequest, LlmResponse};
use crate::model::UserStory;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template} uses unknown placeholder {{{{{name}}}}}")]
    Template { template: String, name: String },
    #[error("{kind} needs {expected} example(s), got {got}")]
    ExampleCount {
        kind: PromptKind,
        expected: String,
        got: usize,
    },
    #[error("{kind} is not a {task} prompt")]
    WrongTask { kind: PromptKind, task: &'static str },
    #[error("{kind} needs an abstraction {}", if *.with_ids { "with component ids" } else { "without component ids" })]
    AbstractionIds { kind: PromptKind, with_ids: bool },
    #[error("unknown prompt kind {0:?}")]
    UnknownKind(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

/// Sampling temperatures evaluated for chain-of-thought prompting.
pub const COT_TEMPERATURES: [f64; 4] = [0.0, 0.5, 1.0, 1.3];

/// Few-shot example counts evaluated for detection.
pub const DETECT_FEWSHOT_COUNTS: [usize; 2] = [5, 10];

/// Index into [`COT_TEMPERATURES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CotTemperature(u8);

impl CotTemperature {
    pub fn new(t: f64) -> Option<Self> {
        COT_TEMPERATURES
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
            .map(|i| CotTemperature(i as u8))
    }

    pub fn value(self) -> f64 {
        COT_TEMPERATURES[self.0 as usize]
    }

    fn token(self) -> &'static str {
        ["0", "0.5", "1", "1.3"][self.0 as usize]
    }

    fn label(self) -> &'static str {
        ["0", ".5", "1", "1.3"][self.0 as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    DetectZs,
    DetectFs(u8),
    DetectCot(CotTemperature),
    MatchZsA,
    MatchZsB,
    MatchFs5,
    MatchCot(CotTemperature),
    RecFs,
    RecFsCot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Detect,
    Match,
    Recommend,
}

impl PromptKind {
    pub fn task(self) -> Task {
        match self {
            PromptKind::DetectZs | PromptKind::DetectFs(_) | PromptKind::DetectCot(_) => {
                Task::Detect
            }
            PromptKind::MatchZsA
            | PromptKind::MatchZsB
            | PromptKind::MatchFs5
            | PromptKind::MatchCot(_) => Task::Match,
            PromptKind::RecFs | PromptKind::RecFsCot => Task::Recommend,
        }
    }

    pub fn is_cot(self) -> bool {
        matches!(
            self,
            PromptKind::DetectCot(_) | PromptKind::MatchCot(_) | PromptKind::RecFsCot
        )
    }

    pub fn example_count(self) -> Option<usize> {
        match self {
            PromptKind::DetectFs(n) => Some(n as usize),
            PromptKind::MatchFs5 => Some(5),
            PromptKind::RecFs | PromptKind::RecFsCot => None,
            _ => Some(0),
        }
    }

    pub fn temperature(self) -> f64 {
        match self {
            PromptKind::DetectCot(t) | PromptKind::MatchCot(t) => t.value(),
            _ => 0.0,
        }
    }

    /// Canonical identifier, e.g. `detect-cot-t0.5`.
    pub fn id(self) -> String {
        match self {
            PromptKind::DetectZs => "detect-zs".into(),
            PromptKind::DetectFs(n) => format!("detect-fs{n}"),
            PromptKind::DetectCot(t) => format!("detect-cot-t{}", t.token()),
            PromptKind::MatchZsA => "match-zs-a".into(),
            PromptKind::MatchZsB => "match-zs-b".into(),
            PromptKind::MatchFs5 => "match-fs5".into(),
            PromptKind::MatchCot(t) => format!("match-cot-t{}", t.token()),
            PromptKind::RecFs => "rec-fs".into(),
            PromptKind::RecFsCot => "rec-fs-cot".into(),
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> String {
        match self {
            PromptKind::DetectZs => "Zero-Shot".into(),
            PromptKind::DetectFs(n) => format!("Few-Shot_{n}"),
            PromptKind::DetectCot(t) | PromptKind::MatchCot(t) => format!("CoT_t={}", t.label()),
            PromptKind::MatchZsA => "Zero-Shot_A".into(),
            PromptKind::MatchZsB => "Zero-Shot_B".into(),
            PromptKind::MatchFs5 => "Few-Shot_5".into(),
            PromptKind::RecFs => "FS".into(),
            PromptKind::RecFsCot => "FS-CoT".into(),
        }
    }

    /// Parses a short token (`zs`, `fs5`, `cot-t1`, `zs-a`, ...) in the
    /// context of a task, or any canonical id.
    pub fn parse_for(task: Task, token: &str) -> Result<PromptKind, PromptError> {
        let token = token.trim().to_lowercase();
        if let Ok(kind) = token.parse::<PromptKind>() {
            return if kind.task() == task {
                Ok(kind)
            } else {
                Err(PromptError::UnknownKind(token))
            };
        }
        let prefix = match task {
            Task::Detect => "detect",
            Task::Match => "match",
            Task::Recommend => "rec",
        };
        let alias = match (task, token.as_str()) {
            (Task::Detect, "fs") => "fs5".to_string(),
            (Task::Match, "zs") => "zs-a".to_string(),
            (Task::Match, "fs") => "fs5".to_string(),
            (Task::Recommend, "cot") => "fs-cot".to_string(),
            (_, "cot") => "cot-t0".to_string(),
            _ => token.clone(),
        };
        format!("{prefix}-{alias}")
            .parse::<PromptKind>()
            .ok()
            .filter(|k| k.task() == task)
            .ok_or(PromptError::UnknownKind(token))
    }

    /// All kinds evaluated for one task, in report order.
    pub fn evaluated(task: Task) -> Vec<PromptKind> {
        let cots = COT_TEMPERATURES
            .iter()
            .filter_map(|&t| CotTemperature::new(t));
        match task {
            Task::Detect => [PromptKind::DetectZs]
                .into_iter()
                .chain(DETECT_FEWSHOT_COUNTS.iter().map(|&n| PromptKind::DetectFs(n as u8)))
                .chain(cots.map(PromptKind::DetectCot))
                .collect(),
            Task::Match => [PromptKind::MatchZsA, PromptKind::MatchZsB, PromptKind::MatchFs5]
                .into_iter()
                .chain(cots.map(PromptKind::MatchCot))
                .collect(),
            Task::Recommend => vec![PromptKind::RecFs, PromptKind::RecFsCot],
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for PromptKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || PromptError::UnknownKind(s.to_string());
        let cot = |rest: &str| -> Result<CotTemperature, PromptError> {
            rest.parse::<f64>()
                .ok()
                .and_then(CotTemperature::new)
                .ok_or_else(unknown)
        };
        Ok(match s {
            "detect-zs" => PromptKind::DetectZs,
            "match-zs-a" => PromptKind::MatchZsA,
            "match-zs-b" => PromptKind::MatchZsB,
            "match-fs5" => PromptKind::MatchFs5,
            "rec-fs" => PromptKind::RecFs,
            "rec-fs-cot" => PromptKind::RecFsCot,
            _ => {
                if let Some(n) = s.strip_prefix("detect-fs") {
                    let n: usize = n.parse().map_err(|_| unknown())?;
                    if !DETECT_FEWSHOT_COUNTS.contains(&n) {
                        return Err(unknown());
                    }
                    PromptKind::DetectFs(n as u8)
                } else if let Some(t) = s.strip_prefix("detect-cot-t") {
                    PromptKind::DetectCot(cot(t)?)
                } else if let Some(t) = s.strip_prefix("match-cot-t") {
                    PromptKind::MatchCot(cot(t)?)
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

impl Serialize for PromptKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for PromptKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    /// GUI the example abstraction was derived from.
    pub source_gui_id: String,
    pub story_text: String,
    pub gui_abstraction: String,
    pub expected_output: String,
}

macro_rules! template_files {
    ($($field:ident => $file:literal),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct Templates {
            $(pub $field: String,)*
        }

        impl Default for Templates {
            fn default() -> Self {
                Templates {
                    $($field: include_str!(concat!("../templates/", $file)).to_string(),)*
                }
            }
        }

        impl Templates {
            /// Defaults, overridden by any same-named file found in `dir`.
            pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
                let mut t = Templates::default();
                $(
                    let path = dir.join($file);
                    if path.exists() {
                        t.$field = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                            path: path.display().to_string(),
                            message: e.to_string(),
                        })?;
                    }
                )*
                Ok(t)
            }
        }
    };
}

template_files! {
    system => "system.txt",
    user => "user.txt",
    example => "example.txt",
    detect => "detect.txt",
    detect_cot => "detect_cot.txt",
    matching => "match.txt",
    matching_cot => "match_cot.txt",
    recall_extension => "match_recall_extension.txt",
    recommend => "recommend.txt",
    recommend_cot => "recommend_cot.txt",
    preview_shell => "preview_shell.html",
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

/// Substitutes `{{name}}` placeholders in a single pass. Values are never
/// re-scanned, so placeholder-like text inside them is left alone.
pub fn fill_template(
    template_name: &str,
    template: &str,
    values: &[(&str, &str)],
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = &caps[1];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::Template {
                template: template_name.into(),
                name: name.into(),
            })?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

const MAX_TOKENS_LABEL: u32 = 1;
const MAX_TOKENS_IDS: u32 = 256;
const MAX_TOKENS_REASONING: u32 = 1024;
const MAX_TOKENS_MARKUP: u32 = 1536;

#[derive(Debug, Clone, Default)]
pub struct PromptEngine {
    pub templates: Templates,
    pub model_name: String,
}

impl PromptEngine {
    pub fn new(templates: Templates, model_name: impl Into<String>) -> Self {
        PromptEngine {
            templates,
            model_name: model_name.into(),
        }
    }

    fn check_examples(
        &self,
        kind: PromptKind,
        examples: &[FewShotExample],
    ) -> Result<(), PromptError> {
        match kind.example_count() {
            Some(n) if n != examples.len() => Err(PromptError::ExampleCount {
                kind,
                expected: n.to_string(),
                got: examples.len(),
            }),
            None if examples.is_empty() => Err(PromptError::ExampleCount {
                kind,
                expected: "at least 1".into(),
                got: 0,
            }),
            _ => Ok(()),
        }
    }

    fn render_examples(&self, examples: &[FewShotExample]) -> Result<String, PromptError> {
        examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let index = (i + 1).to_string();
                fill_template(
                    "example.txt",
                    &self.templates.example,
                    &[
                        ("index", &index),
                        ("user_story", &ex.story_text),
                        ("gui_abstraction", ex.gui_abstraction.trim_end()),
                        ("expected_output", &ex.expected_output),
                    ],
                )
            })
            .collect()
    }

    fn render_user(
        &self,
        instruction: &str,
        story: &UserStory,
        abstraction: &GuiAbstraction,
        examples: &[FewShotExample],
    ) -> Result<String, PromptError> {
        let examples = self.render_examples(examples)?;
        fill_template(
            "user.txt",
            &self.templates.user,
            &[
                ("instruction", instruction.trim_end()),
                ("examples", &examples),
                ("user_story", story.text.trim()),
                ("gui_abstraction", abstraction.rendered.trim_end()),
            ],
        )
    }

    fn request(&self, user_text: String, kind: PromptKind, max_tokens: u32) -> LlmRequest {
        LlmRequest {
            system_text: self.templates.system.trim_end().to_string(),
            user_text,
            temperature: kind.temperature(),
            max_tokens,
            want_logprobs_for: None,
            model_name: self.model_name.clone(),
        }
    }

    pub fn render_detection(
        &self,
        kind: PromptKind,
        story: &UserStory,
        abstraction: &GuiAbstraction,
        examples: &[FewShotExample],
    ) -> Result<LlmRequest, PromptError> {
        if kind.task() != Task::Detect {
            return Err(PromptError::WrongTask {
                kind,
                task: "detection",
            });
        }
        if abstraction.with_ids {
            return Err(PromptError::AbstractionIds {
                kind,
                with_ids: false,
            });
        }
        self.check_examples(kind, examples)?;
        let instruction = if kind.is_cot() {
            &self.templates.detect_cot
        } else {
            &self.templates.detect
        };
        let user = self.render_user(instruction, story, abstraction, examples)?;
        Ok(if kind.is_cot() {
            self.request(user, kind, MAX_TOKENS_REASONING)
        } else {
            LlmRequest {
                want_logprobs_for: Some(vec!["1".into(), "0".into()]),
                ..self.request(user, kind, MAX_TOKENS_LABEL)
            }
        })
    }

    pub fn render_matching(
        &self,
        kind: PromptKind,
        story: &UserStory,
        abstraction: &GuiAbstraction,
        examples: &[FewShotExample],
    ) -> Result<LlmRequest, PromptError> {
        if kind.task() != Task::Match {
            return Err(PromptError::WrongTask {
                kind,
                task: "matching",
            });
        }
        if !abstraction.with_ids {
            return Err(PromptError::AbstractionIds {
                kind,
                with_ids: true,
            });
        }
        self.check_examples(kind, examples)?;
        let instruction = if kind.is_cot() {
            &self.templates.matching_cot
        } else {
            &self.templates.matching
        };
        let mut user = self.render_user(instruction, story, abstraction, examples)?;
        if kind == PromptKind::MatchZsB {
            user.push('\n');
            user.push_str(self.templates.recall_extension.trim_end());
            user.push('\n');
        }
        let max_tokens = if kind.is_cot() {
            MAX_TOKENS_REASONING
        } else {
            MAX_TOKENS_IDS
        };
        Ok(self.request(user, kind, max_tokens))
    }

    pub fn render_recommendation(
        &self,
        kind: PromptKind,
        story: &UserStory,
        abstraction: &GuiAbstraction,
        examples: &[FewShotExample],
        temperature: f64,
    ) -> Result<LlmRequest, PromptError> {
        if kind.task() != Task::Recommend {
            return Err(PromptError::WrongTask {
                kind,
                task: "recommendation",
            });
        }
        if abstraction.with_ids {
            return Err(PromptError::AbstractionIds {
                kind,
                with_ids: false,
            });
        }
        self.check_examples(kind, examples)?;
        let instruction = if kind.is_cot() {
            &self.templates.recommend_cot
        } else {
            &self.templates.recommend
        };
        let user = self.render_user(instruction, story, abstraction, examples)?;
        Ok(LlmRequest {
            temperature,
            ..self.request(user, kind, MAX_TOKENS_MARKUP)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub label: u8,
    pub explanation: Option<String>,
    pub raw_text: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no recognizable label in {raw_text:?}")]
pub struct UnparsableVerdictError {
    pub raw_text: String,
}

fn label_token(token: &str) -> Option<u8> {
    let t = token
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '_')
        .to_lowercase();
    match t.as_str() {
        "1" | "implemented" => Some(1),
        "0" | "not-implemented" | "not_implemented" => Some(0),
        _ => None,
    }
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*:").unwrap())
}

pub fn parse_verdict(
    resp: &LlmResponse,
    kind: PromptKind,
) -> Result<ParsedVerdict, UnparsableVerdictError> {
    let raw = resp.text.as_str();
    let fail = || UnparsableVerdictError {
        raw_text: raw.to_string(),
    };
    if kind.is_cot() {
        let m = answer_re().find_iter(raw).last().ok_or_else(fail)?;
        let token = raw[m.end()..].split_whitespace().next().ok_or_else(fail)?;
        let label = label_token(token).ok_or_else(fail)?;
        let explanation = raw[..m.start()].trim();
        Ok(ParsedVerdict {
            label,
            explanation: Some(explanation.to_string()),
            raw_text: raw.to_string(),
        })
    } else {
        let token = raw.split_whitespace().next().ok_or_else(fail)?;
        let label = label_token(token).ok_or_else(fail)?;
        Ok(ParsedVerdict {
            label,
            explanation: None,
            raw_text: raw.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedIdSet {
    pub ids: BTreeSet<u32>,
    pub raw_text: String,
}

fn integer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\d+\b").unwrap())
}

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").unwrap())
}

/// Integers of the first bracketed list, or every standalone integer when
/// there is none. For chain-of-thought answers the list after the final
/// `Answer:` is preferred.
pub fn parse_id_set(resp: &LlmResponse) -> ParsedIdSet {
    let raw = resp.text.as_str();
    let scope = answer_re()
        .find_iter(raw)
        .last()
        .map_or(raw, |m| &raw[m.end()..]);
    let scope = if bracket_re().is_match(scope) { scope } else { raw };
    let source = bracket_re()
        .captures(scope)
        .map_or(scope, |c| c.get(1).unwrap().as_str());
    let ids = integer_re()
        .find_iter(source)
        .filter_map(|m| m.as_str().parse::<u32>().ok())
        .filter(|&id| id > 0)
        .collect();
    ParsedIdSet {
        ids,
        raw_text: raw.to_string(),
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("response contains no markup")]
pub struct NoMarkupError;

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[^\S\n]*\n?(.*?)```").unwrap())
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[A-Za-z][A-Za-z0-9-]*(\s[^>]*)?/?>").unwrap())
}

/// Content of the first fenced code block, or the full text.
pub fn parse_html(resp: &LlmResponse) -> Result<String, NoMarkupError> {
    let body = fence_re()
        .captures(&resp.text)
        .map_or(resp.text.as_str(), |c| c.get(1).unwrap().as_str())
        .trim();
    if tag_re().is_match(body) {
        Ok(body.to_string())
    } else {
        Err(NoMarkupError)
    }
}

/// Reasoning text of a chain-of-thought recommendation: everything before
/// the first code fence.
pub fn recommendation_explanation(resp: &LlmResponse) -> Option<String> {
    let idx = resp.text.find("```")?;
    let text = resp.text[..idx].trim();
    (!text.is_empty()).then(|| text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::abstract_gui;
    use crate::model::{Bounds, ComponentType, GuiComponent, GuiPrototype, LayoutGroup};

    fn proto() -> GuiPrototype {
        GuiPrototype {
            gui_id: "g".into(),
            domain: "Shopping".into(),
            screen: Bounds::new(0, 0, 100, 100),
            groups: vec![LayoutGroup {
                name: "Toolbar".into(),
                bounds: Bounds::new(0, 0, 100, 20),
                components: vec![GuiComponent::new(
                    "Search",
                    ComponentType::TextInput,
                    "search",
                    Bounds::new(0, 0, 50, 20),
                )],
            }],
        }
    }

    fn story() -> UserStory {
        UserStory::new("us1", "As a shopper, I want to search products.", "g")
    }

    fn example(i: usize) -> FewShotExample {
        FewShotExample {
            source_gui_id: format!("fs{i}"),
            story_text: format!("story {i}"),
            gui_abstraction: "- G:\n  - \"x\" (Label) ()\n".into(),
            expected_output: "1".into(),
        }
    }

    fn text(s: &str) -> LlmResponse {
        LlmResponse::text(s)
    }

    #[test]
    fn kind_ids_round_trip() {
        for task in [Task::Detect, Task::Match, Task::Recommend] {
            for kind in PromptKind::evaluated(task) {
                assert_eq!(kind.id().parse::<PromptKind>().unwrap(), kind);
            }
        }
        assert_eq!(PromptKind::evaluated(Task::Detect).len(), 7);
        assert_eq!(PromptKind::evaluated(Task::Match).len(), 7);
    }

    #[test]
    fn short_tokens() {
        let cot1 = PromptKind::DetectCot(CotTemperature::new(1.0).unwrap());
        assert_eq!(PromptKind::parse_for(Task::Detect, "cot-t1").unwrap(), cot1);
        assert_eq!(PromptKind::parse_for(Task::Detect, "zs").unwrap(), PromptKind::DetectZs);
        assert_eq!(PromptKind::parse_for(Task::Match, "zs-b").unwrap(), PromptKind::MatchZsB);
        assert_eq!(PromptKind::parse_for(Task::Match, "fs5").unwrap(), PromptKind::MatchFs5);
        assert!(PromptKind::parse_for(Task::Detect, "fs7").is_err());
        assert!(PromptKind::parse_for(Task::Detect, "cot-t0.7").is_err());
        assert!(PromptKind::parse_for(Task::Detect, "match-zs-a").is_err());
    }

    #[test]
    fn detection_zs_story_precedes_abstraction() {
        let engine = PromptEngine::default();
        let abs = abstract_gui(&proto(), false);
        let req = engine
            .render_detection(PromptKind::DetectZs, &story(), &abs, &[])
            .unwrap();
        let s = req.user_text.find(&story().text).unwrap();
        let a = req.user_text.find(abs.rendered.trim_end()).unwrap();
        let i = req.user_text.find("single token").unwrap();
        assert!(i < s && s < a);
        assert_eq!(req.want_logprobs_for, Some(vec!["1".into(), "0".into()]));
        assert_eq!(req.max_tokens, 1);
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn detection_fs_example_count() {
        let engine = PromptEngine::default();
        let abs = abstract_gui(&proto(), false);
        let four: Vec<_> = (0..4).map(example).collect();
        assert!(matches!(
            engine.render_detection(PromptKind::DetectFs(5), &story(), &abs, &four),
            Err(PromptError::ExampleCount { got: 4, .. })
        ));
        let five: Vec<_> = (0..5).map(example).collect();
        let req = engine
            .render_detection(PromptKind::DetectFs(5), &story(), &abs, &five)
            .unwrap();
        assert!(req.user_text.contains("Example 5:"));
        assert!(req.user_text.find("Example 5:").unwrap() < req.user_text.find("User story:\nAs a shopper").unwrap());
    }

    #[test]
    fn detection_cot_temperature() {
        let engine = PromptEngine::default();
        let abs = abstract_gui(&proto(), false);
        let kind = PromptKind::DetectCot(CotTemperature::new(1.0).unwrap());
        let req = engine.render_detection(kind, &story(), &abs, &[]).unwrap();
        assert_eq!(req.temperature, 1.0);
        assert!(req.want_logprobs_for.is_none());
        assert!(req.user_text.contains("Answer: 1"));
    }

    #[test]
    fn detection_rejects_id_abstraction() {
        let engine = PromptEngine::default();
        let abs = abstract_gui(&proto(), true);
        assert!(matches!(
            engine.render_detection(PromptKind::DetectZs, &story(), &abs, &[]),
            Err(PromptError::AbstractionIds { .. })
        ));
    }

    #[test]
    fn zs_b_extends_zs_a() {
        let engine = PromptEngine::default();
        let abs = abstract_gui(&proto(), true);
        let a = engine
            .render_matching(PromptKind::MatchZsA, &story(), &abs, &[])
            .unwrap();
        let b = engine
            .render_matching(PromptKind::MatchZsB, &story(), &abs, &[])
            .unwrap();
        assert!(b.user_text.len() > a.user_text.len());
        assert!(b.user_text.starts_with(&a.user_text));
        assert!(a.user_text.contains("[1] \"Search\""));
    }

    #[test]
    fn unknown_placeholder_is_template_error() {
        let mut engine = PromptEngine::default();
        engine.templates.user.push_str("{{nonsense}}");
        let abs = abstract_gui(&proto(), false);
        assert!(matches!(
            engine.render_detection(PromptKind::DetectZs, &story(), &abs, &[]),
            Err(PromptError::Template { .. })
        ));
    }

    #[test]
    fn placeholder_text_in_values_is_not_expanded() {
        let out = fill_template("t", "{{a}}-{{b}}", &[("a", "{{b}}"), ("b", "x")]).unwrap();
        assert_eq!(out, "{{b}}-x");
    }

    #[test]
    fn verdicts() {
        let zs = PromptKind::DetectZs;
        assert_eq!(parse_verdict(&text("1"), zs).unwrap().label, 1);
        assert_eq!(parse_verdict(&text(" 0\n"), zs).unwrap().label, 0);
        assert_eq!(parse_verdict(&text("Implemented"), zs).unwrap().label, 1);
        assert_eq!(parse_verdict(&text("NOT-IMPLEMENTED."), zs).unwrap().label, 0);
        assert!(parse_verdict(&text("maybe"), zs).is_err());
        assert!(parse_verdict(&text(""), zs).is_err());

        let cot = PromptKind::DetectCot(CotTemperature::new(0.0).unwrap());
        let v = parse_verdict(
            &text("The story requires a search field which is missing. Answer: 0"),
            cot,
        )
        .unwrap();
        assert_eq!(v.label, 0);
        assert_eq!(
            v.explanation.as_deref(),
            Some("The story requires a search field which is missing.")
        );
        let v = parse_verdict(&text("Step 1 ...\nStep 2 ...\nAnswer: 1"), cot).unwrap();
        assert_eq!(v.label, 1);
        assert_eq!(v.explanation.as_deref(), Some("Step 1 ...\nStep 2 ..."));
        assert!(parse_verdict(&text("I think it is there."), cot).is_err());
    }

    #[test]
    fn id_sets() {
        let ids = |s: &str| parse_id_set(&text(s)).ids.into_iter().collect::<Vec<_>>();
        assert_eq!(ids("[3, 5, 5, 12]"), [3, 5, 12]);
        assert_eq!(ids("Components 4 and 7 fulfill the story."), [4, 7]);
        assert!(ids("none").is_empty());
        assert!(ids("[]").is_empty());
        assert_eq!(ids("Looking at [2] and [9]... Answer: [4, 1]"), [1, 4]);
        assert_eq!(ids("first [1,2] then [3]"), [1, 2]);
    }

    #[test]
    fn html_extraction() {
        let fenced = text("Here you go:\n```html\n<div><button>Apply</button></div>\n```\nDone.");
        assert_eq!(
            parse_html(&fenced).unwrap(),
            "<div><button>Apply</button></div>"
        );
        assert_eq!(parse_html(&text("<p>hi</p>")).unwrap(), "<p>hi</p>");
        assert_eq!(parse_html(&text("just prose, no tags")), Err(NoMarkupError));
        assert_eq!(
            recommendation_explanation(&fenced).as_deref(),
            Some("Here you go:")
        );
    }
}
