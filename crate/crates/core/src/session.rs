//! A session directory on disk.
//!
//! ```text
//! <dir>/config.txt      engine config, key = value
//! <dir>/session.icss    latest snapshot (absent until the first one)
//! <dir>/events.ndjson   events applied after the snapshot, one per line
//! <dir>/LOCK            held by the one process allowed to mutate
//! ```
//!
//! Opening a session loads the snapshot and replays the journal entries past
//! its sequence number. Every mutation is appended to the journal and synced
//! before it is reported as applied.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::engine::{Engine, EngineConfig, Event, LoggedEvent, Outcome};
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const SNAPSHOT_FILE: &str = "session.icss";
pub const JOURNAL_FILE: &str = "events.ndjson";
pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug)]
pub struct Session {
    dir: PathBuf,
    engine: Engine,
    /// Present when this handle may mutate.
    writer: Option<Writer>,
}

#[derive(Debug)]
struct Writer {
    journal: File,
    _lock: File,
    /// Set when a journal write failed after the engine had already
    /// applied the event; memory and disk disagree from then on.
    poisoned: bool,
}

fn lock(dir: &Path) -> Result<File> {
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(dir.join(LOCK_FILE))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(TryLockError::WouldBlock) => Err(Error::Locked(dir.display().to_string())),
        Err(TryLockError::Error(e)) => Err(e.into()),
    }
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

/// Writes `bytes` to `path` through a synced temporary file and a rename.
fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    sync_dir(dir)
}

impl Session {
    /// Creates a new session directory. Fails if one already exists there.
    pub fn init(dir: &Path, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(dir)?;
        if dir.join(CONFIG_FILE).exists() {
            return Err(Error::InvalidArgument(format!(
                "a session already exists in {}",
                dir.display()
            )));
        }
        let lock = lock(dir)?;
        write_atomic(dir, &dir.join(CONFIG_FILE), config.to_text().as_bytes())?;
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(JOURNAL_FILE))?;
        journal.sync_all()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            engine: Engine::new(config)?,
            writer: Some(Writer {
                journal,
                _lock: lock,
                poisoned: false,
            }),
        })
    }

    /// Opens an existing session for mutation, holding its lock.
    pub fn open(dir: &Path) -> Result<Self> {
        require_session(dir)?;
        let lock = lock(dir)?;
        let engine = load(dir, true)?;
        let journal = OpenOptions::new().append(true).open(dir.join(JOURNAL_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            engine,
            writer: Some(Writer {
                journal,
                _lock: lock,
                poisoned: false,
            }),
        })
    }

    /// Loads the current state without taking the lock. The handle refuses
    /// mutations.
    pub fn open_read_only(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            engine: load(dir, false)?,
            writer: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Applies `event`, then journals it with its outcome and syncs.
    pub fn apply(&mut self, event: Event) -> Result<Outcome> {
        let writer = self.writer.as_mut().ok_or_else(|| {
            Error::InvalidArgument("session was opened read-only".into())
        })?;
        if writer.poisoned {
            return Err(Error::InvalidArgument(
                "an earlier journal write failed; reopen the session".into(),
            ));
        }
        let outcome = self.engine.apply(&event)?;
        let event = match (event, &outcome) {
            (Event::Select { requested, .. }, Outcome::Selected(ids)) => Event::Select {
                requested,
                selected: ids.clone(),
            },
            (Event::SelectUnlabeled { requested, .. }, Outcome::Selected(ids)) => {
                Event::SelectUnlabeled {
                    requested,
                    selected: ids.clone(),
                }
            }
            (event, _) => event,
        };
        let logged = LoggedEvent {
            sequence: self.engine.sequence(),
            event,
        };
        let mut line = serde_json::to_vec(&logged)?;
        line.push(b'\n');
        let written = writer
            .journal
            .write_all(&line)
            .and_then(|()| writer.journal.sync_data());
        if let Err(e) = written {
            writer.poisoned = true;
            return Err(e.into());
        }
        Ok(outcome)
    }

    /// Writes a snapshot of the current state and empties the journal.
    pub fn snapshot(&mut self) -> Result<()> {
        let writer = self.writer.as_mut().ok_or_else(|| {
            Error::InvalidArgument("session was opened read-only".into())
        })?;
        write_atomic(&self.dir, &self.dir.join(SNAPSHOT_FILE), &self.engine.snapshot())?;
        writer.journal.set_len(0)?;
        writer.journal.sync_all()?;
        Ok(())
    }

    /// Replaces the session state with a snapshot taken elsewhere.
    pub fn restore_from(&mut self, bytes: &[u8]) -> Result<()> {
        if self.writer.is_none() {
            return Err(Error::InvalidArgument("session was opened read-only".into()));
        }
        let engine = Engine::restore(bytes)?;
        write_atomic(&self.dir, &self.dir.join(CONFIG_FILE), engine.config().to_text().as_bytes())?;
        self.engine = engine;
        self.snapshot()
    }
}

fn require_session(dir: &Path) -> Result<()> {
    if dir.join(CONFIG_FILE).exists() {
        Ok(())
    } else {
        Err(Error::NoSession(dir.display().to_string()))
    }
}

/// Config, snapshot, then the journal tail. A final line cut short by a
/// crash is dropped; with `repair` it is also truncated from the file.
fn load(dir: &Path, repair: bool) -> Result<Engine> {
    require_session(dir)?;
    let config_path = dir.join(CONFIG_FILE);
    let config = EngineConfig::parse(&fs::read_to_string(config_path)?)?;
    let snapshot = dir.join(SNAPSHOT_FILE);
    let mut engine = if snapshot.exists() {
        Engine::restore(&fs::read(snapshot)?)?
    } else {
        Engine::new(config)?
    };

    let journal_path = dir.join(JOURNAL_FILE);
    let file = match File::open(&journal_path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(engine),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        let complete = line.ends_with('\n');
        let logged: LoggedEvent = match serde_json::from_str(line.trim_end()) {
            Ok(l) => l,
            Err(_) if !complete => {
                if repair {
                    OpenOptions::new().write(true).open(&journal_path)?.set_len(offset)?;
                }
                break;
            }
            Err(e) => {
                return Err(Error::corrupt(
                    "event journal",
                    format!("line at byte {offset}: {e}"),
                ))
            }
        };
        offset += read as u64;
        if logged.sequence <= engine.sequence() {
            continue;
        }
        engine.replay(&logged)?;
    }
    Ok(engine)
}
