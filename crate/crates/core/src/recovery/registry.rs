//! Server-side DHS registry.
//!
//! On disk:
//!
//! ```text
//! {root}/dhs/{serverCode}/{dhsId}.cbor    DhsRecord, canonical CBOR
//! {root}/assets/{dhsId}.pmf4             replica bytes
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::cbor;
use crate::manifest::MANIFEST_STORE_MEDIA_TYPE;

use super::{
    parse_recovery_path, parse_recovery_response, serialize_recovery_response, server_code_from_host, split_url,
    AssetFetcher, DescriptorEntry, RecoveryClient, RecoveryDescriptor, RecoveryError, RecoveryRequest,
    RecoveryResponse, ResponsePart, ASSET_PATH, DESCRIPTOR_VERSION,
};
use crate::watermark::CELL_MS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DhsRecord {
    pub dhs_id: String,
    pub server_code: u32,
    pub first_interval_code: u32,
    pub last_interval_code: u32,
    /// Broadcast media time of `first_interval_code`.
    pub media_start_ms: u64,
    #[serde(with = "serde_bytes")]
    pub manifest_store: Vec<u8>,
    pub replica_locator: String,
    /// Seconds since the Unix epoch, UTC.
    pub valid_until: i64,
}

impl DhsRecord {
    fn overlaps(&self, first: u32, last: u32) -> bool {
        self.first_interval_code <= last && first <= self.last_interval_code
    }
}

pub type SharedRegistry = Arc<RwLock<DhsRegistry>>;

#[derive(Debug, Default)]
pub struct DhsRegistry {
    /// Keyed by (server code, first interval code).
    records: BTreeMap<(u32, u32), DhsRecord>,
    assets: BTreeMap<String, Vec<u8>>,
    root: Option<PathBuf>,
}

fn io_err(path: &Path, e: std::io::Error) -> RecoveryError {
    RecoveryError::Io(format!("{}: {e}", path.display()))
}

fn check_dhs_id(id: &str) -> Result<(), RecoveryError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(RecoveryError::InvalidRequest(format!("DHS id '{id}' is not a safe file name")))
    }
}

impl DhsRegistry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a registry directory and loads its records.
    pub fn open(root: &Path) -> Result<Self, RecoveryError> {
        for sub in ["dhs", "assets"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        let mut reg = DhsRegistry { root: Some(root.to_path_buf()), ..Self::default() };
        reg.reload()?;
        Ok(reg)
    }

    pub fn shared(self) -> SharedRegistry {
        Arc::new(RwLock::new(self))
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Re-reads records from disk; no-op for in-memory registries.
    pub fn reload(&mut self) -> Result<(), RecoveryError> {
        let Some(root) = self.root.clone() else { return Ok(()) };
        let dhs_dir = root.join("dhs");
        let mut records = BTreeMap::new();
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&dhs_dir)
            .map_err(|e| io_err(&dhs_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| io_err(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "cbor"))
                .collect();
            files.sort();
            for f in files {
                let bytes = std::fs::read(&f).map_err(|e| io_err(&f, e))?;
                let rec: DhsRecord = cbor::from_canonical(&bytes)
                    .map_err(|e| RecoveryError::Io(format!("{}: {e}", f.display())))?;
                records.insert((rec.server_code, rec.first_interval_code), rec);
            }
        }
        self.records = records;
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &DhsRecord> {
        self.records.values()
    }

    pub fn record_for(&self, server_code: u32, code: u32) -> Option<&DhsRecord> {
        self.records
            .range((server_code, 0)..=(server_code, code))
            .next_back()
            .map(|(_, r)| r)
            .filter(|r| r.last_interval_code >= code)
    }

    /// Publishes a DHS record and its replica. Republishing an identical
    /// interval range replaces the previous record.
    pub fn publish_dhs(&mut self, record: DhsRecord, replica: &[u8]) -> Result<(), RecoveryError> {
        check_dhs_id(&record.dhs_id)?;
        if record.first_interval_code > record.last_interval_code {
            return Err(RecoveryError::InvalidRequest("DHS range is empty".into()));
        }
        let (first, last) = (record.first_interval_code, record.last_interval_code);
        let clash = self
            .records
            .range((record.server_code, 0)..=(record.server_code, u32::MAX))
            .map(|(_, r)| r)
            .find(|r| r.overlaps(first, last) && (r.first_interval_code, r.last_interval_code) != (first, last));
        if clash.is_some() {
            return Err(RecoveryError::OverlappingRange { server_code: record.server_code, first, last });
        }
        let replaced = self.records.get(&(record.server_code, first)).cloned();
        if let Some(root) = &self.root {
            let dir = root.join("dhs").join(record.server_code.to_string());
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            if let Some(old) = replaced.as_ref().filter(|o| o.dhs_id != record.dhs_id) {
                let stale = dir.join(format!("{}.cbor", old.dhs_id));
                std::fs::remove_file(&stale).map_err(|e| io_err(&stale, e))?;
            }
            let asset = root.join("assets").join(format!("{}.pmf4", record.dhs_id));
            std::fs::write(&asset, replica).map_err(|e| io_err(&asset, e))?;
            let path = dir.join(format!("{}.cbor", record.dhs_id));
            let bytes = cbor::to_canonical(&record).map_err(|e| RecoveryError::Io(e.to_string()))?;
            std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        } else {
            self.assets.insert(record.dhs_id.clone(), replica.to_vec());
        }
        self.records.insert((record.server_code, first), record);
        Ok(())
    }

    pub fn asset(&self, dhs_id: &str) -> Option<Vec<u8>> {
        check_dhs_id(dhs_id).ok()?;
        match &self.root {
            Some(root) => std::fs::read(root.join("assets").join(format!("{dhs_id}.pmf4"))).ok(),
            None => self.assets.get(dhs_id).cloned(),
        }
    }

    /// Entries overlapping `[binx, einx]`, or `NotFound` when no entry covers
    /// `binx`. A hole in the coverage sets the descriptor's gap flag.
    pub fn serve_recovery(&self, request: &RecoveryRequest) -> Result<RecoveryResponse, RecoveryError> {
        let (binx, last) = (request.binx, request.last());
        let covering = self.record_for(request.server_code, binx).ok_or(RecoveryError::NotFound)?;
        let hits: Vec<&DhsRecord> = self
            .records
            .range((request.server_code, covering.first_interval_code)..=(request.server_code, last))
            .map(|(_, r)| r)
            .collect();
        let mut covered_to = binx as u64;
        let mut gap = false;
        for r in &hits {
            if r.first_interval_code as u64 > covered_to {
                gap = true;
            }
            covered_to = covered_to.max(r.last_interval_code as u64 + 1);
        }
        gap |= covered_to <= last as u64;

        let mut parts = BTreeMap::new();
        let entries = hits
            .iter()
            .map(|r| {
                let part_ref = format!("manifest-{}", r.dhs_id);
                parts.insert(
                    part_ref.clone(),
                    ResponsePart { media_type: MANIFEST_STORE_MEDIA_TYPE.into(), bytes: r.manifest_store.clone() },
                );
                DescriptorEntry {
                    dhs_id: r.dhs_id.clone(),
                    first_interval_code: r.first_interval_code,
                    last_interval_code: r.last_interval_code,
                    manifest_part_ref: part_ref,
                    valid_until: r.valid_until,
                }
            })
            .collect();
        let descriptor = RecoveryDescriptor {
            version: DESCRIPTOR_VERSION,
            server_code: request.server_code,
            anchor_interval_code: covering.first_interval_code,
            anchor_media_time_ms: covering.media_start_ms,
            cell_duration_ms: CELL_MS,
            entries,
            coverage_gap: gap,
        };
        Ok(RecoveryResponse { descriptor, parts })
    }
}

/// In-process client over a shared registry. Responses still pass through
/// the multipart wire format.
#[derive(Clone)]
pub struct LocalRecoveryClient {
    pub registry: SharedRegistry,
    pub base_domain: Option<String>,
}

impl LocalRecoveryClient {
    pub fn new(registry: SharedRegistry, base_domain: Option<&str>) -> Self {
        LocalRecoveryClient { registry, base_domain: base_domain.map(str::to_string) }
    }

    fn server_code(&self, host: &str) -> Result<u32, RecoveryError> {
        server_code_from_host(host, self.base_domain.as_deref()).ok_or(RecoveryError::NotFound)
    }
}

impl RecoveryClient for LocalRecoveryClient {
    fn recover(&self, url: &str) -> Result<RecoveryResponse, RecoveryError> {
        let (host, path) = split_url(url)?;
        let request = parse_recovery_path(self.server_code(&host)?, &path)?;
        let response = self.registry.read().unwrap().serve_recovery(&request)?;
        let (content_type, body) = serialize_recovery_response(&response)?;
        parse_recovery_response(&body, &content_type)
    }
}

impl AssetFetcher for LocalRecoveryClient {
    fn fetch_asset(&self, uri: &str) -> Result<Vec<u8>, RecoveryError> {
        let (host, path) = split_url(uri)?;
        self.server_code(&host)?;
        let id = path.strip_prefix(ASSET_PATH).ok_or(RecoveryError::NotFound)?;
        self.registry.read().unwrap().asset(id).ok_or(RecoveryError::NotFound)
    }
}
