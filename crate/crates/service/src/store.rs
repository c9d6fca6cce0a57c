//! Durable project storage: one append-only JSON-lines event log per
//! project under `<data_dir>/projects`.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokio::sync::{Mutex, RwLock};

use crate::project::{Event, Project, ReplayError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("project {0} already exists")]
    Exists(String),
}

/// A project together with the log that persists it.
#[derive(Debug)]
pub struct ProjectHandle {
    pub project: Project,
    log: PathBuf,
}

impl ProjectHandle {
    /// Persists `event`, then applies it in memory.
    pub fn commit(&mut self, event: Event) -> Result<(), StoreError> {
        let mut probe = self.project.clone();
        probe.apply(event.clone()).map_err(|e| self.corrupt(0, e))?;
        append(&self.log, &event)?;
        self.project = probe;
        Ok(())
    }

    fn corrupt(&self, line: usize, e: ReplayError) -> StoreError {
        StoreError::Corrupt {
            path: self.log.display().to_string(),
            line,
            message: e.to_string(),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn append(path: &Path, event: &Event) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(event).expect("event serializes");
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io(path))?;
    file.write_all(line.as_bytes()).map_err(io(path))?;
    file.sync_data().map_err(io(path))
}

pub type SharedProject = Arc<Mutex<ProjectHandle>>;

#[derive(Debug)]
pub struct ProjectStore {
    dir: PathBuf,
    projects: RwLock<HashMap<String, SharedProject>>,
}

impl ProjectStore {
    /// Opens `data_dir`, replaying every project log found there.
    pub fn open(data_dir: &Path) -> Result<Self, StoreError> {
        let dir = data_dir.join("projects");
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut projects = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let handle = replay(&path)?;
            projects.insert(
                handle.project.project_id.clone(),
                Arc::new(Mutex::new(handle)),
            );
        }
        log::info!("loaded {} project(s) from {}", projects.len(), dir.display());
        Ok(ProjectStore {
            dir,
            projects: RwLock::new(projects),
        })
    }

    pub async fn get(&self, project_id: &str) -> Option<SharedProject> {
        self.projects.read().await.get(project_id).cloned()
    }

    pub async fn len(&self) -> usize {
        self.projects.read().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.len().await == 0
    }

    /// Persists a `created` event for a new project.
    pub async fn create(&self, created: Event) -> Result<SharedProject, StoreError> {
        let project = Project::from_created(&created).map_err(|e| StoreError::Corrupt {
            path: String::new(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut projects = self.projects.write().await;
        if projects.contains_key(&project.project_id) {
            return Err(StoreError::Exists(project.project_id));
        }
        let log = self.dir.join(format!("{}.jsonl", project.project_id));
        append(&log, &created)?;
        let shared = Arc::new(Mutex::new(ProjectHandle { project, log }));
        projects.insert(shared.lock().await.project.project_id.clone(), shared.clone());
        Ok(shared)
    }
}

fn replay(path: &Path) -> Result<ProjectHandle, StoreError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let corrupt = |line: usize, message: String| StoreError::Corrupt {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut project: Option<Project> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        match &mut project {
            None => project = Some(Project::from_created(&event).map_err(|e| corrupt(i + 1, e.to_string()))?),
            Some(p) => p.apply(event).map_err(|e| corrupt(i + 1, e.to_string()))?,
        }
    }
    let project = project.ok_or_else(|| corrupt(0, "empty event log".into()))?;
    Ok(ProjectHandle {
        project,
        log: path.to_path_buf(),
    })
}
