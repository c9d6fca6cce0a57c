use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, GatewayError, LlmRequest, LlmResponse};

/// One cassette record. The request text is kept for human inspection only;
/// lookups use the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<LlmRequest>,
    pub response: LlmResponse,
}

/// Append-only JSON-lines file of recorded exchanges.
#[derive(Debug, Clone, Default)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read cassette {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| GatewayError::Config(format!("cassette line {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Cassette { entries })
    }

    pub fn push(&mut self, req: &LlmRequest, response: LlmResponse) {
        self.entries.push(CassetteEntry {
            request_hash: req.stable_hash(),
            request: Some(req.clone()),
            response,
        });
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn append_to(path: &Path, entry: &CassetteEntry) -> Result<(), GatewayError> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut line = serde_json::to_string(entry).expect("entry serializes");
        line.push('\n');
        file.write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), GatewayError> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Replays recorded responses. Several records under one hash are returned
/// in file order; the last one repeats once the others are used up.
#[derive(Debug)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<String, (Vec<LlmResponse>, usize)>>,
}

impl ScriptedBackend {
    pub fn new(cassette: Cassette) -> Self {
        let mut queues: HashMap<String, (Vec<LlmResponse>, usize)> = HashMap::new();
        for e in cassette.entries {
            queues.entry(e.request_hash).or_default().0.push(e.response);
        }
        ScriptedBackend {
            queues: Mutex::new(queues),
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let hash = req.stable_hash();
        let mut queues = self.queues.lock().unwrap();
        let (responses, next) = queues
            .get_mut(&hash)
            .ok_or_else(|| GatewayError::ScriptMiss(hash.clone()))?;
        let idx = (*next).min(responses.len() - 1);
        *next += 1;
        Ok(responses[idx].clone())
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Forwards to an inner backend and appends every exchange to a cassette.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    write_lock: Mutex<()>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, path: PathBuf) -> Self {
        RecordingBackend {
            inner,
            path,
            write_lock: Mutex::new(()),
        }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let response = self.inner.complete(req)?;
        let entry = CassetteEntry {
            request_hash: req.stable_hash(),
            request: Some(req.clone()),
            response: response.clone(),
        };
        let _guard = self.write_lock.lock().unwrap();
        Cassette::append_to(&self.path, &entry)?;
        Ok(response)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }

    fn reads_oracle_footer(&self) -> bool {
        self.inner.reads_oracle_footer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::OracleBackend;

    fn req(text: &str) -> LlmRequest {
        LlmRequest {
            system_text: String::new(),
            user_text: text.into(),
            temperature: 0.0,
            max_tokens: 4,
            want_logprobs_for: None,
            model_name: "m".into(),
        }
    }

    #[test]
    fn replays_recorded_pair() {
        let mut c = Cassette::new();
        c.push(&req("a"), LlmResponse::text("first"));
        let backend = ScriptedBackend::new(c);
        assert_eq!(backend.complete(&req("a")).unwrap().text, "first");
        assert_eq!(backend.complete(&req("a")).unwrap().text, "first");
        assert!(matches!(
            backend.complete(&req("b")),
            Err(GatewayError::ScriptMiss(_))
        ));
    }

    #[test]
    fn queued_responses_then_repeat_last() {
        let mut c = Cassette::new();
        c.push(&req("a"), LlmResponse::text("1"));
        c.push(&req("a"), LlmResponse::text("2"));
        let backend = ScriptedBackend::new(c);
        let got: Vec<String> = (0..3)
            .map(|_| backend.complete(&req("a")).unwrap().text)
            .collect();
        assert_eq!(got, ["1", "2", "2"]);
    }

    #[test]
    fn recording_then_replaying_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let recorder = RecordingBackend::new(OracleBackend::exact(), path.clone());
        let footer = crate::gateway::OracleFooter {
            task: crate::gateway::OracleTask::Match,
            us_id: "u".into(),
            gold: [1].into(),
            present: vec![1, 2],
            cot: false,
            story: String::new(),
        };
        let r = req(&format!("x{}", footer.render()));
        let live = recorder.complete(&r).unwrap();
        let replay = ScriptedBackend::new(Cassette::load(&path).unwrap());
        assert_eq!(replay.complete(&r).unwrap(), live);
    }
}
