//! Session snapshots on disk.
//!
//! Each session lives in `<dir>/<id>.json`. Writes go to `<id>.json.tmp`
//! first and are renamed into place, so a crash leaves either the previous
//! or the new snapshot, never a torn one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use arcpool_core::Session;

pub const SNAPSHOT_FORMAT: &str = "arcpool-session";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt snapshot {path}: {detail}")]
    CorruptSnapshot { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    pub version: u32,
    /// Whether `POST /batch` trains in the background for this session.
    #[serde(default)]
    pub async_training: bool,
    pub session: Session,
}

impl Snapshot {
    pub fn new(session: Session, async_training: bool) -> Self {
        Snapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            async_training,
            session,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(format!(
                "unsupported snapshot {} v{}",
                snap.format, snap.version
            ));
        }
        snap.session.check().map_err(|e| e.to_string())?;
        Ok(Snapshot {
            session: snap.session.recover(),
            ..snap
        })
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, snapshot: &Snapshot) -> Result<(), StoreError> {
        let path = self.path_for(&snapshot.session.id);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_vec(snapshot).map_err(|e| StoreError::CorruptSnapshot {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(&text).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }

    /// Loads every snapshot, sorted by session id. Stray temp files are
    /// removed; any unreadable snapshot fails the whole load.
    pub fn load_all(&self) -> Result<Vec<Snapshot>, StoreError> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let path = entry.map_err(io_err(&self.dir))?.path();
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            if name.ends_with(".json.tmp") {
                fs::remove_file(&path).map_err(io_err(&path))?;
            } else if name.ends_with(".json") {
                paths.push(path);
            }
        }
        paths.sort();
        paths
            .into_iter()
            .map(|path| {
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let snap =
                    Snapshot::from_json(&text).map_err(|detail| StoreError::CorruptSnapshot {
                        path: path.clone(),
                        detail,
                    })?;
                let expected = format!("{}.json", snap.session.id);
                if path.file_name().and_then(|n| n.to_str()) != Some(expected.as_str()) {
                    return Err(StoreError::CorruptSnapshot {
                        path,
                        detail: format!("file name does not match session id {}", snap.session.id),
                    });
                }
                Ok(snap)
            })
            .collect()
    }
}
