use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbor;

use super::ManifestError;

pub const TRUST_LIST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustEntry {
    #[serde(with = "serde_bytes")]
    pub public_key: [u8; 32],
    /// Lowercase hostnames (or parent domains) that serve this distributor's
    /// recovery data.
    pub authority_domains: Vec<String>,
    pub approved: bool,
}

/// Registered distributors keyed by distributor id. Stored as canonical CBOR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustList {
    pub version: u32,
    pub entries: BTreeMap<String, TrustEntry>,
}

impl Default for TrustList {
    fn default() -> Self {
        TrustList { version: TRUST_LIST_VERSION, entries: BTreeMap::new() }
    }
}

fn host_matches(host: &str, domain: &str) -> bool {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    host == domain || host.strip_suffix(domain).is_some_and(|p| p.ends_with('.'))
}

impl TrustList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a distributor. New entries start unapproved.
    pub fn add(&mut self, distributor_id: &str, public_key: [u8; 32], domains: &[String]) -> Result<(), ManifestError> {
        if self.entries.contains_key(distributor_id) {
            return Err(ManifestError::DuplicateDistributor(distributor_id.to_string()));
        }
        let mut authority_domains: Vec<String> =
            domains.iter().map(|d| d.trim_end_matches('.').to_ascii_lowercase()).collect();
        authority_domains.sort();
        authority_domains.dedup();
        self.entries.insert(
            distributor_id.to_string(),
            TrustEntry { public_key, authority_domains, approved: false },
        );
        Ok(())
    }

    pub fn set_approved(&mut self, distributor_id: &str, approved: bool) -> Result<(), ManifestError> {
        let entry = self
            .entries
            .get_mut(distributor_id)
            .ok_or_else(|| ManifestError::UnknownDistributor(distributor_id.to_string()))?;
        entry.approved = approved;
        Ok(())
    }

    pub fn get(&self, distributor_id: &str) -> Option<&TrustEntry> {
        self.entries.get(distributor_id)
    }

    pub fn is_registered(&self, distributor_id: &str) -> bool {
        self.entries.contains_key(distributor_id)
    }

    /// Distributor whose authority domains cover `host`, if any.
    pub fn owner_of_authority(&self, host: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, e)| e.authority_domains.iter().any(|d| host_matches(host, d)))
            .map(|(id, _)| id.as_str())
    }

    pub fn authorizes(&self, distributor_id: &str, host: &str) -> bool {
        self.get(distributor_id)
            .is_some_and(|e| e.authority_domains.iter().any(|d| host_matches(host, d)))
    }

    pub fn to_cbor(&self) -> Result<Vec<u8>, ManifestError> {
        Ok(cbor::to_canonical(self)?)
    }

    pub fn from_cbor(bytes: &[u8]) -> Result<Self, ManifestError> {
        let list: TrustList =
            cbor::from_canonical(bytes).map_err(|e| ManifestError::MalformedTrustList(e.to_string()))?;
        if list.version != TRUST_LIST_VERSION {
            return Err(ManifestError::MalformedTrustList(format!("version {}", list.version)));
        }
        if list.entries.values().flat_map(|e| &e.authority_domains).any(|d| *d != d.to_ascii_lowercase()) {
            return Err(ManifestError::MalformedTrustList("authority domains must be lowercase".into()));
        }
        Ok(list)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let bytes = std::fs::read(path).map_err(|e| ManifestError::Io(format!("{}: {e}", path.display())))?;
        Self::from_cbor(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_cbor()?).map_err(|e| ManifestError::Io(format!("{}: {e}", path.display())))
    }
}

/// Reads a hex-encoded 32-byte Ed25519 seed.
pub fn read_key_file(path: &Path) -> Result<[u8; 32], ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io(format!("{}: {e}", path.display())))?;
    parse_hex32(text.trim())
}

pub fn parse_hex32(text: &str) -> Result<[u8; 32], ManifestError> {
    let bytes = hex::decode(text).map_err(|e| ManifestError::Key(e.to_string()))?;
    bytes.try_into().map_err(|_| ManifestError::Key("expected 32 bytes".into()))
}

pub fn write_key_file(path: &Path, seed: &[u8; 32]) -> Result<(), ManifestError> {
    std::fs::write(path, format!("{}\n", hex::encode(seed))).map_err(|e| ManifestError::Io(format!("{}: {e}", path.display())))
}

pub fn generate_seed() -> [u8; 32] {
    use rand::RngCore;
    let mut seed = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut seed);
    seed
}
