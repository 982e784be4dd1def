//! One directory per session: `manifest.json` plus content-addressed
//! artifact files. Every `{"$blob": ...}` node of the serialized session is
//! written to `artifacts/` and replaced by `{"$artifact": "<file>"}`.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use sketchplan_core::blob::{decode_b64, encode_b64, BLOB_KEY};
use sketchplan_core::pipeline::Session;
use tokio::sync::Mutex;

pub const MANIFEST: &str = "manifest.json";
pub const ARTIFACTS: &str = "artifacts";
pub const ARTIFACT_KEY: &str = "$artifact";

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub created_at: String,
    pub updated_at: String,
    /// Bumped by every successful mutation.
    pub revision: u64,
    pub session: Session,
}

/// Live state of one session: the writer lease and the current snapshot.
pub struct Slot {
    pub lease: Mutex<()>,
    snapshot: RwLock<Arc<SessionRecord>>,
}

impl Slot {
    fn new(record: SessionRecord) -> Self {
        Slot {
            lease: Mutex::new(()),
            snapshot: RwLock::new(Arc::new(record)),
        }
    }

    pub fn snapshot(&self) -> Arc<SessionRecord> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

pub struct Store {
    root: PathBuf,
    slots: RwLock<HashMap<String, Arc<Slot>>>,
}

/// File name an artifact with these bytes is stored under.
pub fn artifact_name(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let ext = if bytes.starts_with(PNG_MAGIC) { "png" } else { "bin" };
    format!("{hex}.{ext}")
}

fn valid_artifact_name(name: &str) -> bool {
    match name.split_once('.') {
        Some((hex, ext)) => {
            hex.len() == 64 && hex.chars().all(|c| c.is_ascii_hexdigit()) && matches!(ext, "png" | "bin")
        }
        None => false,
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

/// Write `bytes` to `path` through a temporary sibling and a rename, so a
/// crash leaves either the old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    fs::File::open(dir)?.sync_all()
}

fn spill(value: &mut Value, artifacts: &Path) -> io::Result<()> {
    match value {
        Value::Object(map) => {
            if map.len() == 1 {
                if let Some(Value::String(b64)) = map.get(BLOB_KEY) {
                    let bytes = decode_b64(b64).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                    let name = artifact_name(&bytes);
                    let path = artifacts.join(&name);
                    if !path.exists() {
                        write_atomic(&path, &bytes)?;
                    }
                    *map = Map::from_iter([(ARTIFACT_KEY.to_string(), Value::String(name))]);
                    return Ok(());
                }
            }
            map.values_mut().try_for_each(|v| spill(v, artifacts))
        }
        Value::Array(items) => items.iter_mut().try_for_each(|v| spill(v, artifacts)),
        _ => Ok(()),
    }
}

fn inline(value: &mut Value, artifacts: &Path) -> io::Result<()> {
    match value {
        Value::Object(map) => {
            if map.len() == 1 {
                if let Some(Value::String(name)) = map.get(ARTIFACT_KEY) {
                    if !valid_artifact_name(name) {
                        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad artifact name {name:?}")));
                    }
                    let bytes = fs::read(artifacts.join(name.as_str()))?;
                    *map = Map::from_iter([(BLOB_KEY.to_string(), Value::String(encode_b64(&bytes)))]);
                    return Ok(());
                }
            }
            map.values_mut().try_for_each(|v| inline(v, artifacts))
        }
        Value::Array(items) => items.iter_mut().try_for_each(|v| inline(v, artifacts)),
        _ => Ok(()),
    }
}

fn invalid_data(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// Manifest text for a record, writing any missing artifacts on the way.
pub fn render_manifest(record: &SessionRecord, dir: &Path) -> io::Result<Vec<u8>> {
    let artifacts = dir.join(ARTIFACTS);
    fs::create_dir_all(&artifacts)?;
    let mut value = serde_json::to_value(record).map_err(invalid_data)?;
    spill(&mut value, &artifacts)?;
    let mut bytes = serde_json::to_vec_pretty(&value).map_err(invalid_data)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_manifest(dir: &Path) -> io::Result<SessionRecord> {
    let mut value: Value = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?).map_err(invalid_data)?;
    inline(&mut value, &dir.join(ARTIFACTS))?;
    serde_json::from_value(value).map_err(invalid_data)
}

impl Store {
    /// Open (creating if needed) a store rooted at `root` and load every
    /// session found there.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut slots = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let dir = entry?.path();
            if !dir.join(MANIFEST).is_file() {
                continue;
            }
            match load_manifest(&dir) {
                Ok(record) => {
                    slots.insert(record.id.clone(), Arc::new(Slot::new(record)));
                }
                Err(e) => tracing::warn!("skipping unreadable session at {}: {e}", dir.display()),
            }
        }
        Ok(Store {
            root,
            slots: RwLock::new(slots),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn manifest_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join(MANIFEST)
    }

    pub fn artifact_path(&self, id: &str, name: &str) -> Option<PathBuf> {
        (valid_id(id) && valid_artifact_name(name)).then(|| self.session_dir(id).join(ARTIFACTS).join(name))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.slots.read().expect("slots lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.slots.read().expect("slots lock").get(id).cloned()
    }

    pub fn get(&self, id: &str) -> Option<Arc<SessionRecord>> {
        self.slot(id).map(|s| s.snapshot())
    }

    /// Persist a new session and start serving it.
    pub fn create(&self, session: Session) -> io::Result<Arc<SessionRecord>> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = timestamp();
        let record = SessionRecord {
            id: id.clone(),
            created_at: now.clone(),
            updated_at: now,
            revision: 0,
            session,
        };
        let dir = self.session_dir(&id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(MANIFEST), &render_manifest(&record, &dir)?)?;
        let slot = Arc::new(Slot::new(record));
        let snapshot = slot.snapshot();
        self.slots.write().expect("slots lock").insert(id, slot);
        Ok(snapshot)
    }

    /// Write `record` to disk, then make it the visible snapshot. The caller
    /// must hold the slot's lease.
    pub fn commit(&self, slot: &Slot, record: SessionRecord) -> io::Result<Arc<SessionRecord>> {
        let dir = self.session_dir(&record.id);
        write_atomic(&dir.join(MANIFEST), &render_manifest(&record, &dir)?)?;
        let record = Arc::new(record);
        *slot.snapshot.write().expect("snapshot lock") = record.clone();
        Ok(record)
    }
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
