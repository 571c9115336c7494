//! Durable trials: one append-only JSON-lines log per trial under a data
//! directory. The in-memory engine is always the replay of its log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use combotrial::trial::{read_events, write_events, DesignConfig, EngineError, TrialEngine};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no trial {0:?}")]
    NotFound(String),
    #[error("trial {0:?} already exists")]
    Exists(String),
    #[error("invalid trial id {0:?}: use 1 to 64 letters, digits, '-' or '_'")]
    BadId(String),
    #[error("trial {id:?}: log line {line}: {message}")]
    Corrupt {
        id: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Trial {
    id: String,
    path: PathBuf,
    engine: TrialEngine,
}

impl Trial {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn engine(&self) -> &TrialEngine {
        &self.engine
    }

    /// Runs `f` on a copy of the engine and, if it succeeds, appends the new
    /// events to the log before adopting the copy. A failed request leaves
    /// both the log and the engine untouched.
    pub fn apply<T>(
        &mut self,
        f: impl FnOnce(&mut TrialEngine) -> Result<T, EngineError>,
    ) -> Result<T, StoreError> {
        let mut next = self.engine.clone();
        let out = f(&mut next)?;
        let fresh = &next.events()[self.engine.events().len()..];
        if !fresh.is_empty() {
            append(&self.path, fresh)?;
        }
        self.engine = next;
        Ok(out)
    }
}

/// A trial behind its single-writer lock, plus the last committed engine for
/// readers.
pub struct Slot {
    id: String,
    writer: Mutex<Trial>,
    snapshot: RwLock<Arc<TrialEngine>>,
}

impl Slot {
    fn new(trial: Trial) -> Self {
        let snapshot = RwLock::new(Arc::new(trial.engine.clone()));
        Slot {
            id: trial.id.clone(),
            writer: Mutex::new(trial),
            snapshot,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn snapshot(&self) -> Arc<TrialEngine> {
        self.snapshot
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Serialized state change; readers see the result once it is on disk.
    pub fn update<T>(
        &self,
        f: impl FnOnce(&mut TrialEngine) -> Result<T, EngineError>,
    ) -> Result<T, StoreError> {
        let mut trial = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let out = trial.apply(f)?;
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(trial.engine.clone());
        Ok(out)
    }
}

fn append(path: &Path, events: &[combotrial::trial::Event]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_events(&mut buf, events)?;
    let mut f = OpenOptions::new().append(true).open(path)?;
    f.write_all(&buf)?;
    f.sync_data()
}

fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len())
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub struct Store {
    dir: PathBuf,
    trials: RwLock<HashMap<String, Arc<Slot>>>,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Store {
            dir,
            trials: RwLock::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn create(
        &self,
        id: Option<String>,
        seed: Option<u64>,
        config: DesignConfig,
    ) -> Result<Arc<Slot>, StoreError> {
        let id = id.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
        if !valid_id(&id) {
            return Err(StoreError::BadId(id));
        }
        let seed = seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        let engine = TrialEngine::new(config, seed)?;
        let mut trials = self.trials.write().unwrap_or_else(|e| e.into_inner());
        let path = self.path(&id);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Exists(id))
            }
            Err(e) => return Err(e.into()),
        };
        let mut buf = Vec::new();
        write_events(&mut buf, engine.events())?;
        f.write_all(&buf)?;
        f.sync_data()?;
        let slot = Arc::new(Slot::new(Trial {
            id: id.clone(),
            path,
            engine,
        }));
        trials.insert(id, slot.clone());
        Ok(slot)
    }

    /// The open trial, loading and replaying its log on first use.
    pub fn get(&self, id: &str) -> Result<Arc<Slot>, StoreError> {
        if let Some(s) = self
            .trials
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
        {
            return Ok(s.clone());
        }
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let mut trials = self.trials.write().unwrap_or_else(|e| e.into_inner());
        if let Some(s) = trials.get(id) {
            return Ok(s.clone());
        }
        let trial = self.load(id)?;
        let slot = Arc::new(Slot::new(trial));
        trials.insert(id.to_string(), slot.clone());
        Ok(slot)
    }

    /// Replays a log from disk. A log cut short by a crash (a torn last line,
    /// or decisions missing after the last request) is rewritten whole.
    fn load(&self, id: &str) -> Result<Trial, StoreError> {
        let path = self.path(id);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let corrupt = |line: usize, message: String| StoreError::Corrupt {
            id: id.to_string(),
            line,
            message,
        };
        let parsed = read_events(BufReader::new(file)).map_err(|e| match e {
            combotrial::trial::LogError::Corrupt { line, message } => corrupt(line, message),
            combotrial::trial::LogError::Io(e) => StoreError::Io(e),
        })?;
        let engine = TrialEngine::replay(&parsed.events).map_err(|e| {
            let line = e
                .index()
                .and_then(|i| parsed.lines.get(i))
                .copied()
                .unwrap_or(1);
            corrupt(line, e.to_string())
        })?;
        if parsed.dropped_partial_line || engine.events().len() != parsed.events.len() {
            let tmp = path.with_extension("jsonl.tmp");
            let mut buf = Vec::new();
            write_events(&mut buf, engine.events())?;
            let mut f = File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_data()?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(Trial {
            id: id.to_string(),
            path,
            engine,
        })
    }

    /// Trial ids on disk, sorted.
    pub fn list(&self) -> std::io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".jsonl")) {
                if valid_id(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
