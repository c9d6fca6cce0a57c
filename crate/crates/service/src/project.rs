//! Project state and the events that rebuild it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use uslink_core::detection::Verdict;
use uslink_core::matching::MatchResult;
use uslink_core::model::{GuiPrototype, LayoutGroup, UserStory};
use uslink_core::prompt::PromptKind;
use uslink_core::recommendation::Recommendation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Judgment {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub entry_id: u64,
    pub us_id: String,
    pub verdict_shown: u8,
    pub user_judgment: Judgment,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
}

/// Derived results remember the content revision and prompt kind they were
/// computed for; a mismatch with the current state means stale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cached<T> {
    pub content_revision: u64,
    pub prompt_kind: PromptKind,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        project_id: String,
        prototype: GuiPrototype,
        stories: Vec<UserStory>,
        #[serde(default)]
        annotations: BTreeMap<String, BTreeSet<u32>>,
        revision: u64,
    },
    Validated {
        content_revision: u64,
        prompt_kind: PromptKind,
        verdicts: Vec<Verdict>,
    },
    Matched {
        content_revision: u64,
        prompt_kind: PromptKind,
        result: MatchResult,
    },
    Recommended {
        content_revision: u64,
        prompt_kind: PromptKind,
        us_id: String,
        recommendations: Vec<Recommendation>,
    },
    Feedback {
        revision: u64,
        entry: FeedbackEntry,
    },
    Applied {
        revision: u64,
        us_id: String,
        rank: u32,
        group: LayoutGroup,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub project_id: String,
    pub prototype: GuiPrototype,
    pub stories: Vec<UserStory>,
    /// Known component IDs per story; forwarded to oracle backends only.
    pub annotations: BTreeMap<String, BTreeSet<u32>>,
    /// Bumped by every mutation.
    pub revision: u64,
    /// Revision of the last change to prototype or stories.
    pub content_revision: u64,
    pub verdicts: Option<Cached<BTreeMap<String, Verdict>>>,
    pub matches: BTreeMap<String, Cached<MatchResult>>,
    pub recommendations: BTreeMap<String, Cached<Vec<Recommendation>>>,
    pub feedback: Vec<FeedbackEntry>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("event log: {0}")]
pub struct ReplayError(pub String);

impl Project {
    pub fn story(&self, us_id: &str) -> Option<&UserStory> {
        self.stories.iter().find(|s| s.us_id == us_id)
    }

    pub fn verdicts_for(&self, kind: PromptKind) -> Option<&BTreeMap<String, Verdict>> {
        self.verdicts
            .as_ref()
            .filter(|c| c.content_revision == self.content_revision && c.prompt_kind == kind)
            .map(|c| &c.value)
    }

    /// Latest verdicts of any kind that are still current.
    pub fn current_verdicts(&self) -> Option<&Cached<BTreeMap<String, Verdict>>> {
        self.verdicts
            .as_ref()
            .filter(|c| c.content_revision == self.content_revision)
    }

    pub fn match_for(&self, us_id: &str, kind: PromptKind) -> Option<&MatchResult> {
        self.matches
            .get(us_id)
            .filter(|c| c.content_revision == self.content_revision && c.prompt_kind == kind)
            .map(|c| &c.value)
    }

    pub fn recommendations_for(&self, us_id: &str, kind: PromptKind) -> Option<&Vec<Recommendation>> {
        self.recommendations
            .get(us_id)
            .filter(|c| c.content_revision == self.content_revision && c.prompt_kind == kind)
            .map(|c| &c.value)
    }

    pub fn next_feedback_id(&self) -> u64 {
        self.feedback.last().map_or(1, |e| e.entry_id + 1)
    }

    /// Next stable component ID not used by the prototype or any annotation.
    pub fn next_component_id(&self) -> u32 {
        let annotated = self.annotations.values().flatten().copied();
        self.prototype.components().map(|c| c.id).chain(annotated).max().unwrap_or(0) + 1
    }

    pub fn from_created(event: &Event) -> Result<Project, ReplayError> {
        let Event::Created {
            project_id,
            prototype,
            stories,
            annotations,
            revision,
        } = event
        else {
            return Err(ReplayError("first event must be `created`".into()));
        };
        Ok(Project {
            project_id: project_id.clone(),
            prototype: prototype.clone(),
            stories: stories.clone(),
            annotations: annotations.clone(),
            revision: *revision,
            content_revision: *revision,
            verdicts: None,
            matches: BTreeMap::new(),
            recommendations: BTreeMap::new(),
            feedback: Vec::new(),
        })
    }

    /// Applies a follow-up event. Revisions must not go backwards.
    pub fn apply(&mut self, event: Event) -> Result<(), ReplayError> {
        match event {
            Event::Created { .. } => return Err(ReplayError("duplicate `created` event".into())),
            Event::Validated {
                content_revision,
                prompt_kind,
                verdicts,
            } => {
                self.verdicts = Some(Cached {
                    content_revision,
                    prompt_kind,
                    value: verdicts.into_iter().map(|v| (v.us_id.clone(), v)).collect(),
                })
            }
            Event::Matched {
                content_revision,
                prompt_kind,
                result,
            } => {
                self.matches.insert(
                    result.us_id.clone(),
                    Cached {
                        content_revision,
                        prompt_kind,
                        value: result,
                    },
                );
            }
            Event::Recommended {
                content_revision,
                prompt_kind,
                us_id,
                recommendations,
            } => {
                self.recommendations.insert(
                    us_id,
                    Cached {
                        content_revision,
                        prompt_kind,
                        value: recommendations,
                    },
                );
            }
            Event::Feedback { revision, entry } => {
                self.bump_to(revision)?;
                self.feedback.push(entry);
            }
            Event::Applied { revision, group, .. } => {
                self.bump_to(revision)?;
                self.prototype.groups.push(group);
                self.content_revision = revision;
            }
        }
        Ok(())
    }

    fn bump_to(&mut self, revision: u64) -> Result<(), ReplayError> {
        if revision <= self.revision {
            return Err(ReplayError(format!(
                "revision {revision} does not follow {}",
                self.revision
            )));
        }
        self.revision = revision;
        Ok(())
    }
}
