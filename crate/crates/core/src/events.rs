//! Line-delimited JSON event log.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub ts: String,
    pub invocation_id: String,
    pub stage: String,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub repository_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub run_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub notebook_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

/// Appends one JSON object per line to `<logdir>/events.jsonl`.
pub struct EventLog {
    path: PathBuf,
    invocation_id: String,
    file: Mutex<Option<File>>,
}

impl EventLog {
    pub fn open(logdir: &Path, invocation_id: &str) -> io::Result<Self> {
        std::fs::create_dir_all(logdir)?;
        let path = logdir.join("events.jsonl");
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            invocation_id: invocation_id.to_string(),
            file: Mutex::new(Some(file)),
        })
    }

    /// A log that records nothing.
    pub fn disabled(invocation_id: &str) -> Self {
        Self {
            path: PathBuf::new(),
            invocation_id: invocation_id.to_string(),
            file: Mutex::new(None),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn invocation_id(&self) -> &str {
        &self.invocation_id
    }

    pub fn scope(&self, stage: &str) -> EventScope<'_> {
        EventScope {
            log: self,
            stage: stage.to_string(),
            repository_id: None,
            run_id: None,
        }
    }

    fn write(&self, event: &Event) {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut guard = self.file.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(file) = guard.as_mut() {
            if let Err(e) = file.write_all(line.as_bytes()) {
                log::warn!("event log write failed: {e}");
            }
        }
    }
}

/// Event builder bound to a stage and, optionally, a repository run.
#[derive(Clone)]
pub struct EventScope<'a> {
    log: &'a EventLog,
    stage: String,
    repository_id: Option<String>,
    run_id: Option<String>,
}

impl<'a> EventScope<'a> {
    pub fn repository(mut self, repository_id: impl ToString) -> Self {
        self.repository_id = Some(repository_id.to_string());
        self
    }

    pub fn run(mut self, run_id: impl ToString) -> Self {
        self.run_id = Some(run_id.to_string());
        self
    }

    pub fn emit(&self, event: &str, detail: Option<String>) {
        self.emit_for(event, None, detail);
    }

    pub fn emit_for(&self, event: &str, notebook_id: Option<String>, detail: Option<String>) {
        log::debug!("{} {} {:?} {:?}", self.stage, event, self.repository_id, detail);
        self.log.write(&Event {
            ts: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            invocation_id: self.log.invocation_id.clone(),
            stage: self.stage.clone(),
            event: event.to_string(),
            repository_id: self.repository_id.clone(),
            run_id: self.run_id.clone(),
            notebook_id,
            detail,
        });
    }
}

pub fn read_events(path: &Path) -> io::Result<Vec<Event>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let log = EventLog::open(dir.path(), "inv").unwrap();
        log.scope("infer").repository("r1").emit("started", None);
        log.scope("execute").repository("r1").run("x").emit_for("notebook", Some("n".into()), Some("ok".into()));
        let events = read_events(log.path()).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[1].notebook_id.as_deref(), Some("n"));
        assert!(events.iter().all(|e| e.invocation_id == "inv"));
    }
}
