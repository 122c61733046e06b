//! Watermark-driven metadata recovery.
//!
//! A VP1 payload names a recovery server through its server code (the
//! `wm-{base32}` authority label under a base domain) and a position through
//! its interval code (the URL path). The server answers with a
//! `multipart/related` body whose root part is a [`RecoveryDescriptor`] and
//! whose other parts are the manifest stores of the covering DHS.

mod http;
mod multipart;
mod registry;

use std::collections::BTreeMap;

use data_encoding::BASE32_NOPAD;
use serde::{Deserialize, Serialize};

use crate::cbor;
use crate::manifest::{parse_manifest_store, ManifestError, ManifestStore, MANIFEST_STORE_MEDIA_TYPE};
use crate::watermark::{Vp1Payload, MAX_SERVER_CODE};

pub use http::{spawn_server, HttpRecoveryClient, RecoveryServer};
pub use multipart::{parse_recovery_response, serialize_recovery_response};
pub use registry::{DhsRecord, DhsRegistry, LocalRecoveryClient, SharedRegistry};

pub const RECOVERY_DESCRIPTOR_MEDIA_TYPE: &str = "application/x-recovery-descriptor";
pub const REPLICA_MEDIA_TYPE: &str = "application/x-pmf4";
pub const RECOVERY_PATH: &str = "/a336/recovery/";
pub const ASSET_PATH: &str = "/assets/";
pub const DESCRIPTOR_CONTENT_ID: &str = "descriptor";
pub const DESCRIPTOR_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecoveryError {
    #[error("no registered DHS covers the requested interval code")]
    NotFound,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid recovery URL: {0}")]
    InvalidUrl(String),
    #[error("DHS range [{first}, {last}] overlaps a published range for server code {server_code}")]
    OverlappingRange { server_code: u32, first: u32, last: u32 },
    #[error("malformed multipart body: {0}")]
    MalformedMultipart(String),
    #[error("multipart body has no root descriptor part")]
    MissingRootPart,
    #[error("descriptor references missing or unusable part '{0}'")]
    DanglingPartRef(String),
    #[error("malformed recovery descriptor: {0}")]
    MalformedDescriptor(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

// -------------------- URLs --------------------

/// `wm-` followed by the lowercase unpadded base32 of the server code as four
/// big-endian bytes (always seven characters).
pub fn authority_label(server_code: u32) -> String {
    format!("wm-{}", BASE32_NOPAD.encode(&server_code.to_be_bytes()).to_ascii_lowercase())
}

/// Server code from a host such as `wm-aaaaaaa.example.test[:port]`, when the
/// host lies directly under `base_domain` (any domain when `None`).
pub fn server_code_from_host(host: &str, base_domain: Option<&str>) -> Option<u32> {
    let host = host.rsplit_once(':').filter(|(_, p)| p.chars().all(|c| c.is_ascii_digit())).map_or(host, |h| h.0);
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    let (label, rest) = host.split_once('.')?;
    if base_domain.is_some_and(|d| !rest.eq_ignore_ascii_case(d.trim_end_matches('.'))) {
        return None;
    }
    let code = label.strip_prefix("wm-")?;
    if code.len() != 7 {
        return None;
    }
    let bytes = BASE32_NOPAD.decode(code.to_ascii_uppercase().as_bytes()).ok()?;
    let value = u32::from_be_bytes(bytes.try_into().ok()?);
    (value <= MAX_SERVER_CODE).then_some(value)
}

pub fn authority_host(server_code: u32, base_domain: &str) -> String {
    format!("{}.{}", authority_label(server_code), base_domain.trim_end_matches('.').to_ascii_lowercase())
}

pub fn build_recovery_url(payload: Vp1Payload, base_domain: &str, einx: Option<u32>) -> String {
    let mut url = format!(
        "https://{}{RECOVERY_PATH}{}",
        authority_host(payload.server_code, base_domain),
        payload.interval_code
    );
    if let Some(e) = einx {
        url.push_str(&format!("?einx={e}"));
    }
    url
}

pub fn build_asset_url(server_code: u32, base_domain: &str, dhs_id: &str) -> String {
    format!("https://{}{ASSET_PATH}{dhs_id}", authority_host(server_code, base_domain))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryRequest {
    pub server_code: u32,
    pub binx: u32,
    pub einx: Option<u32>,
}

impl RecoveryRequest {
    pub fn new(server_code: u32, binx: u32, einx: Option<u32>) -> Result<Self, RecoveryError> {
        if einx.is_some_and(|e| e < binx) {
            return Err(RecoveryError::InvalidRequest(format!("EINX {} precedes BINX {binx}", einx.unwrap())));
        }
        Ok(RecoveryRequest { server_code, binx, einx })
    }

    /// Last interval code of interest.
    pub fn last(&self) -> u32 {
        self.einx.unwrap_or(self.binx)
    }
}

/// Host and path-and-query of an absolute URL.
pub fn split_url(url: &str) -> Result<(String, String), RecoveryError> {
    let parsed = reqwest::Url::parse(url).map_err(|e| RecoveryError::InvalidUrl(format!("{url}: {e}")))?;
    let host = parsed.host_str().ok_or_else(|| RecoveryError::InvalidUrl(format!("{url}: no host")))?;
    let mut path = parsed.path().to_string();
    if let Some(q) = parsed.query() {
        path.push('?');
        path.push_str(q);
    }
    Ok((host.to_string(), path))
}

/// Parses the path and query of a recovery request; the server code comes
/// from the host.
pub fn parse_recovery_path(server_code: u32, path_and_query: &str) -> Result<RecoveryRequest, RecoveryError> {
    let bad = || RecoveryError::InvalidRequest(path_and_query.to_string());
    let rest = path_and_query.strip_prefix(RECOVERY_PATH).ok_or_else(bad)?;
    let (binx, query) = rest.split_once('?').unwrap_or((rest, ""));
    let binx: u32 = binx.parse().map_err(|_| bad())?;
    let mut einx = None;
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        if let Some(("einx", v)) = pair.split_once('=') {
            einx = Some(v.parse().map_err(|_| bad())?);
        }
    }
    RecoveryRequest::new(server_code, binx, einx)
}

pub fn parse_recovery_url(url: &str) -> Result<RecoveryRequest, RecoveryError> {
    let (host, path) = split_url(url)?;
    let code = server_code_from_host(&host, None)
        .ok_or_else(|| RecoveryError::InvalidUrl(format!("{host} is not a watermark authority")))?;
    parse_recovery_path(code, &path)
}

// -------------------- descriptor and response --------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorEntry {
    pub dhs_id: String,
    pub first_interval_code: u32,
    pub last_interval_code: u32,
    pub manifest_part_ref: String,
    /// Seconds since the Unix epoch, UTC.
    pub valid_until: i64,
}

/// Root part of a recovery response. Media time of `anchor_interval_code`
/// is `anchor_media_time_ms` on the broadcast timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryDescriptor {
    pub version: u32,
    pub server_code: u32,
    pub anchor_interval_code: u32,
    pub anchor_media_time_ms: u64,
    pub cell_duration_ms: u64,
    pub entries: Vec<DescriptorEntry>,
    /// Set when the entries leave part of the requested range uncovered.
    pub coverage_gap: bool,
}

impl RecoveryDescriptor {
    pub fn to_cbor(&self) -> Result<Vec<u8>, RecoveryError> {
        cbor::to_canonical(self).map_err(|e| RecoveryError::MalformedDescriptor(e.to_string()))
    }

    pub fn from_cbor(bytes: &[u8]) -> Result<Self, RecoveryError> {
        let d: RecoveryDescriptor =
            cbor::from_canonical(bytes).map_err(|e| RecoveryError::MalformedDescriptor(e.to_string()))?;
        d.check()?;
        Ok(d)
    }

    /// Entries sorted, non-overlapping and each well-formed.
    pub fn check(&self) -> Result<(), RecoveryError> {
        let bad = |m: &str| Err(RecoveryError::MalformedDescriptor(m.into()));
        if self.version != DESCRIPTOR_VERSION {
            return bad("unsupported version");
        }
        if self.cell_duration_ms == 0 {
            return bad("zero cell duration");
        }
        if self.entries.iter().any(|e| e.first_interval_code > e.last_interval_code) {
            return bad("entry with first code after last code");
        }
        if self.entries.windows(2).any(|w| w[1].first_interval_code <= w[0].last_interval_code) {
            return bad("entries overlap or are unsorted");
        }
        Ok(())
    }

    pub fn anchor_media_time(&self) -> f64 {
        self.anchor_media_time_ms as f64 / 1000.0
    }

    /// Broadcast media time in seconds at which `code` begins.
    pub fn media_time_of(&self, code: u32) -> f64 {
        let delta = code as i64 - self.anchor_interval_code as i64;
        (self.anchor_media_time_ms as i64 + delta * self.cell_duration_ms as i64) as f64 / 1000.0
    }

    pub fn entry_for(&self, code: u32) -> Option<&DescriptorEntry> {
        self.entries.iter().find(|e| (e.first_interval_code..=e.last_interval_code).contains(&code))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponsePart {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryResponse {
    pub descriptor: RecoveryDescriptor,
    pub parts: BTreeMap<String, ResponsePart>,
}

impl RecoveryResponse {
    pub fn manifest_store(&self, entry: &DescriptorEntry) -> Result<ManifestStore, RecoveryError> {
        let part = self
            .parts
            .get(&entry.manifest_part_ref)
            .ok_or_else(|| RecoveryError::DanglingPartRef(entry.manifest_part_ref.clone()))?;
        Ok(parse_manifest_store(&part.bytes)?)
    }

    /// Every entry's part resolves to a manifest store part.
    pub fn check_refs(&self) -> Result<(), RecoveryError> {
        for e in &self.descriptor.entries {
            match self.parts.get(&e.manifest_part_ref) {
                Some(p) if p.media_type == MANIFEST_STORE_MEDIA_TYPE => {}
                _ => return Err(RecoveryError::DanglingPartRef(e.manifest_part_ref.clone())),
            }
        }
        Ok(())
    }
}

/// Effectful access to recovery servers.
pub trait RecoveryClient {
    fn recover(&self, url: &str) -> Result<RecoveryResponse, RecoveryError>;
}

/// Effectful access to replica files named by asset references.
pub trait AssetFetcher {
    fn fetch_asset(&self, uri: &str) -> Result<Vec<u8>, RecoveryError>;
}
