use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{EngineError, JobRecord};
use crate::config::JobId;

/// One JSON document per job in a state directory. Writes go to a
/// temporary file that is renamed over the old document, so a reader never
/// sees a half-written record.
#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| EngineError::Store(format!("{}: {e}", dir.display())))?;
        Ok(RecordStore {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, id: &JobId) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, record: &JobRecord) -> Result<(), EngineError> {
        let _guard = self.write_lock.lock().expect("record store lock poisoned");
        let path = self.path_of(&record.id);
        let tmp = self.dir.join(format!(".{}.json.tmp", record.id));
        let text = serde_json::to_vec_pretty(record).expect("job record serializes");
        fs::write(&tmp, text)
            .and_then(|()| fs::rename(&tmp, &path))
            .map_err(|e| EngineError::Store(format!("{}: {e}", path.display())))
    }

    fn read(path: &Path) -> Result<JobRecord, EngineError> {
        let corrupt = |message: String| EngineError::StoreCorrupt {
            path: path.to_owned(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| corrupt(e.to_string()))?;
        let mut record: JobRecord =
            serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if stem != record.id.as_str() {
            return Err(corrupt(format!("file holds record {}", record.id)));
        }
        record.config.job.id = Some(record.id.clone());
        Ok(record)
    }

    pub fn load(&self, id: &JobId) -> Result<Option<JobRecord>, EngineError> {
        let path = self.path_of(id);
        if !path.exists() {
            return Ok(None);
        }
        Self::read(&path).map(Some)
    }

    /// Looks a job up by its textual id, failing with `UnknownJob`.
    pub fn get(&self, id: &str) -> Result<JobRecord, EngineError> {
        let unknown = || EngineError::UnknownJob(id.to_owned());
        let id: JobId = id.parse().map_err(|_| unknown())?;
        self.load(&id)?.ok_or_else(unknown)
    }

    /// Every record, ordered by id.
    pub fn load_all(&self) -> Result<Vec<JobRecord>, EngineError> {
        let entries = fs::read_dir(&self.dir)
            .map_err(|e| EngineError::Store(format!("{}: {e}", self.dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p
                        .file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with('.'))
            })
            .collect();
        paths.sort();
        paths.iter().map(|p| Self::read(p)).collect()
    }
}
