//! Append-only JSON-lines session log.
//!
//! Each line is a full session snapshot; on open the last snapshot per id
//! wins. A torn final line (crash during append) is ignored. The log is
//! rewritten atomically once stale snapshots outnumber live ones.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{ServiceError, ServiceResult};
use crate::session::Session;

const COMPACT_SLACK: usize = 64;

struct Inner {
    sessions: BTreeMap<String, Session>,
    file: File,
    lines: usize,
}

pub struct SessionStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

fn corrupt(path: &Path, line: usize, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(format!("{} line {line}: {e}", path.display()))
}

impl SessionStore {
    pub fn open(path: &Path) -> ServiceResult<Self> {
        let mut sessions = BTreeMap::new();
        let mut lines = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let raw: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
            let last = raw.len();
            for (i, line) in raw.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Session>(line) {
                    Ok(s) => {
                        sessions.insert(s.id.clone(), s);
                        lines += 1;
                    }
                    Err(_) if i + 1 == last => {
                        eprintln!("warning: ignoring torn final line in {}", path.display());
                    }
                    Err(e) => return Err(corrupt(path, i + 1, e)),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let store = Self { path: path.to_path_buf(), inner: Mutex::new(Inner { sessions, file, lines }) };
        store.compact()?;
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, id: &str) -> Option<Session> {
        self.inner.lock().expect("store lock").sessions.get(id).cloned()
    }

    /// All sessions ordered by creation time, then id.
    pub fn all(&self) -> Vec<Session> {
        let mut v: Vec<Session> = self.inner.lock().expect("store lock").sessions.values().cloned().collect();
        v.sort_by(|a, b| (&a.created_at, &a.id).cmp(&(&b.created_at, &b.id)));
        v
    }

    /// Durably appends the snapshot, then publishes it.
    pub fn put(&self, session: &Session) -> ServiceResult<()> {
        let mut line = serde_json::to_string(session).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push('\n');
        let mut inner = self.inner.lock().expect("store lock");
        inner.file.write_all(line.as_bytes())?;
        inner.file.sync_data()?;
        inner.lines += 1;
        inner.sessions.insert(session.id.clone(), session.clone());
        let stale = inner.lines > 2 * inner.sessions.len() + COMPACT_SLACK;
        drop(inner);
        if stale {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrites the log with one line per session via a temp file and rename.
    pub fn compact(&self) -> ServiceResult<()> {
        let mut inner = self.inner.lock().expect("store lock");
        if inner.lines == inner.sessions.len() {
            return Ok(());
        }
        let tmp = self.path.with_extension("compact");
        {
            let mut out = File::create(&tmp)?;
            for s in inner.sessions.values() {
                let line = serde_json::to_string(s).map_err(|e| ServiceError::Internal(e.to_string()))?;
                out.write_all(line.as_bytes())?;
                out.write_all(b"\n")?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        inner.file = OpenOptions::new().append(true).open(&self.path)?;
        inner.lines = inner.sessions.len();
        Ok(())
    }

    pub fn log_lines(&self) -> usize {
        self.inner.lock().expect("store lock").lines
    }
}
