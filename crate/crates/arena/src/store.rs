//! Session persistence: one JSON snapshot per session, replaced atomically on
//! every event, plus an append-only event log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use haggle_core::checkpoint::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::ArenaError;
use crate::session::Session;

pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub session_id: String,
    pub seq: usize,
    pub event: String,
    pub detail: serde_json::Value,
}

pub struct Store {
    dir: PathBuf,
    events: Mutex<File>,
}

impl Store {
    pub fn open(dir: &Path) -> Result<Store, ArenaError> {
        fs::create_dir_all(dir.join("sessions"))?;
        let events = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS_FILE))?;
        Ok(Store { dir: dir.to_owned(), events: Mutex::new(events) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.dir.join("sessions").join(format!("{id}.json"))
    }

    pub fn save(&self, s: &Session) -> Result<(), ArenaError> {
        let bytes = serde_json::to_vec_pretty(s).map_err(haggle_core::Error::from)?;
        write_atomic(&self.session_path(&s.session_id), &bytes)?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Session, ArenaError> {
        let bytes = fs::read(self.session_path(id)).map_err(|_| ArenaError::NotFound(format!("session {id}")))?;
        Ok(serde_json::from_slice(&bytes).map_err(haggle_core::Error::from)?)
    }

    /// Every stored session, ordered by id.
    pub fn load_all(&self) -> Result<Vec<Session>, ArenaError> {
        let mut ids: Vec<String> = fs::read_dir(self.dir.join("sessions"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_owned))
            .collect();
        ids.sort();
        ids.iter().map(|id| self.load(id)).collect()
    }

    pub fn append_event(&self, record: &EventRecord) -> Result<(), ArenaError> {
        let mut line = serde_json::to_string(record).map_err(haggle_core::Error::from)?;
        line.push('\n');
        let mut f = self.events.lock().expect("event log lock");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}
