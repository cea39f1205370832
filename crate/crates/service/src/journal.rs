//! One JSON Lines journal file per session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use dynassign::session::{replay_journal, JournalEvent, Session};
use dynassign::{Error, Result};

#[derive(Debug, Clone)]
pub struct JournalDir {
    root: PathBuf,
}

impl JournalDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.root.join(format!("{session_id}.jsonl"))
    }

    /// Writes the genesis event to a new file. Fails if the file exists.
    pub fn create(&self, event: &JournalEvent, session_id: &str) -> Result<()> {
        let mut file = OpenOptions::new().write(true).create_new(true).open(self.path_for(session_id))?;
        write_line(&mut file, event)
    }

    pub fn append(&self, session_id: &str, event: &JournalEvent) -> Result<()> {
        let mut file = OpenOptions::new().append(true).open(self.path_for(session_id))?;
        write_line(&mut file, event)
    }

    /// Replays every journal in the directory.
    pub fn recover(&self) -> Result<Vec<Session>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        paths.iter().map(|p| recover_file(p)).collect()
    }
}

fn write_line(file: &mut File, event: &JournalEvent) -> Result<()> {
    let mut line = serde_json::to_vec(event)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<JournalEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}: line {}: {e}", path.display(), k + 1)))?;
        events.push(event);
    }
    Ok(events)
}

pub fn recover_file(path: &Path) -> Result<Session> {
    let events = read_events(path)?;
    replay_journal(&events).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
