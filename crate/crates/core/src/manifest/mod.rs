//! Signed provenance manifests.
//!
//! A manifest is an assertion store, a claim that lists the SHA-256 digest of
//! every assertion body, and an Ed25519 signature over the canonical CBOR
//! bytes of the claim. Manifests are collected in a [`ManifestStore`] whose
//! box serialization lives in [`store`].

mod store;
mod trust;

use std::collections::BTreeMap;
use std::ops::Range;

use ed25519_dalek::{Signature, Signer as _, SigningKey, VerifyingKey};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binding::{self, Digest32, InclusionProof, MerkleRow};
use crate::bmff::{MediaKind, MediaObject};
use crate::cbor::{self, CborError};

pub use store::{parse_manifest_store, serialize_manifest_store, STORE_VERSION};
pub use trust::{generate_seed, parse_hex32, read_key_file, write_key_file, TrustEntry, TrustList};

pub const LABEL_MERKLE: &str = "bmff.hash.merkle";
pub const LABEL_MONOLITHIC: &str = "bmff.hash.monolithic";
pub const LABEL_SOFT_VP1: &str = "soft.watermark.vp1";
pub const LABEL_ASSET_REFERENCE: &str = "asset.reference";
pub const LABEL_CONTENT_METADATA: &str = "content.metadata";

pub const MANIFEST_STORE_MEDIA_TYPE: &str = "application/x-provenance-manifest-store";
pub const SIGNATURE_ALGORITHM: &str = "ed25519";
pub const CLAIM_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("more than one hard binding assertion")]
    DuplicateHardBinding,
    #[error("assertion label '{0}' appears twice")]
    DuplicateLabel(String),
    #[error("'{0}' is not a hard binding assertion")]
    NotAHardBinding(String),
    #[error("unknown assertion label '{0}'")]
    UnknownLabel(String),
    #[error("unknown distributor '{0}'")]
    UnknownDistributor(String),
    #[error("distributor '{0}' is already in the trust list")]
    DuplicateDistributor(String),
    #[error("manifest has no '{0}' assertion")]
    MissingAssertion(String),
    #[error("malformed claim: {0}")]
    MalformedClaim(String),
    #[error("malformed manifest store: {0}")]
    MalformedStore(String),
    #[error("unsupported manifest store version {0}")]
    UnsupportedVersion(u32),
    #[error("fragment {sequence} of track {track_id} carries no inclusion proof")]
    MissingProof { track_id: u32, sequence: u32 },
    #[error("key material: {0}")]
    Key(String),
    #[error("malformed trust list: {0}")]
    MalformedTrustList(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Cbor(#[from] CborError),
}

// -------------------- assertion bodies --------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackBinding {
    pub track_id: u32,
    pub alg: String,
    pub leaf_count: u64,
    #[serde(with = "serde_bytes")]
    pub root: Digest32,
    #[serde(with = "serde_bytes")]
    pub init_hash: Digest32,
    /// Sequence number of leaf 0.
    pub first_sequence: u32,
}

impl TrackBinding {
    pub fn row(&self) -> MerkleRow {
        MerkleRow {
            track_id: self.track_id,
            leaf_count: self.leaf_count,
            root: self.root,
            alg: self.alg.clone(),
        }
    }
}

/// Body of `bmff.hash.merkle`: one Merkle row per track.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleBinding {
    pub alg: String,
    pub fragment_duration_ms: u32,
    pub tracks: Vec<TrackBinding>,
}

/// Body of `bmff.hash.monolithic`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonolithicBinding {
    pub alg: String,
    #[serde(with = "serde_bytes")]
    pub hash: Digest32,
    /// Box types whose byte ranges are excluded from the hash.
    pub exclude: Vec<String>,
}

/// Body of `soft.watermark.vp1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftWatermarkBinding {
    pub server_code: u32,
    pub binx: u32,
    pub einx: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct AssetReferenceBody {
    uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetReference {
    pub uri: String,
    pub media_time_start: Option<f64>,
    pub media_time_end: Option<f64>,
}

/// Per-fragment `prov` box body: where the fragment sits in its DHS tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentProof {
    pub dhs_id: String,
    pub dhs_binx: u32,
    pub track_id: u32,
    pub proof: InclusionProof,
}

impl FragmentProof {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ManifestError> {
        Ok(cbor::to_canonical(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ManifestError> {
        Ok(cbor::from_canonical(bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assertion {
    pub label: String,
    pub body: Vec<u8>,
}

fn known_label(label: &str) -> bool {
    matches!(
        label,
        LABEL_MERKLE | LABEL_MONOLITHIC | LABEL_SOFT_VP1 | LABEL_ASSET_REFERENCE | LABEL_CONTENT_METADATA
    )
}

impl Assertion {
    fn encode<T: Serialize>(label: &str, body: &T) -> Result<Self, ManifestError> {
        Ok(Assertion { label: label.to_string(), body: cbor::to_canonical(body)? })
    }

    pub fn merkle(body: &MerkleBinding) -> Result<Self, ManifestError> {
        Self::encode(LABEL_MERKLE, body)
    }

    pub fn monolithic(body: &MonolithicBinding) -> Result<Self, ManifestError> {
        Self::encode(LABEL_MONOLITHIC, body)
    }

    pub fn soft_watermark(body: &SoftWatermarkBinding) -> Result<Self, ManifestError> {
        Self::encode(LABEL_SOFT_VP1, body)
    }

    pub fn asset_reference(reference: &AssetReference) -> Result<Self, ManifestError> {
        let to_ms = |s: f64| (s * 1000.0).round() as u64;
        Self::encode(
            LABEL_ASSET_REFERENCE,
            &AssetReferenceBody {
                uri: reference.uri.clone(),
                start_ms: reference.media_time_start.map(to_ms),
                end_ms: reference.media_time_end.map(to_ms),
            },
        )
    }

    pub fn content_metadata(fields: &BTreeMap<String, String>) -> Result<Self, ManifestError> {
        Self::encode(LABEL_CONTENT_METADATA, fields)
    }

    /// Rebuilds an assertion from stored parts, checking that the label is
    /// known and the body is canonical CBOR of that label's schema.
    pub fn from_parts(label: &str, body: Vec<u8>) -> Result<Self, ManifestError> {
        let a = Assertion { label: label.to_string(), body };
        match label {
            LABEL_MERKLE => a.decode::<MerkleBinding>().map(drop)?,
            LABEL_MONOLITHIC => a.decode::<MonolithicBinding>().map(drop)?,
            LABEL_SOFT_VP1 => a.decode::<SoftWatermarkBinding>().map(drop)?,
            LABEL_ASSET_REFERENCE => a.decode::<AssetReferenceBody>().map(drop)?,
            LABEL_CONTENT_METADATA => a.decode::<BTreeMap<String, String>>().map(drop)?,
            other => return Err(ManifestError::UnknownLabel(other.to_string())),
        }
        Ok(a)
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, ManifestError> {
        Ok(cbor::from_canonical(&self.body)?)
    }

    pub fn digest(&self) -> Digest32 {
        binding::sha256(&self.body)
    }

    pub fn is_hard_binding(&self) -> bool {
        self.label.starts_with("bmff.hash.")
    }
}

// -------------------- claim and signature --------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionRef {
    pub label: String,
    #[serde(with = "serde_bytes")]
    pub hash: Digest32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub version: u32,
    pub distributor_id: String,
    pub title: String,
    pub assertions: Vec<AssertionRef>,
    /// Seconds since the Unix epoch, UTC.
    pub created_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dhs_range: Option<(u32, u32)>,
}

impl Claim {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ManifestError> {
        Ok(cbor::to_canonical(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSignature {
    pub alg: String,
    pub signer_key_id: String,
    #[serde(with = "serde_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub assertions: Vec<Assertion>,
    pub claim: Claim,
    pub signature: ClaimSignature,
}

impl Manifest {
    pub fn assertion(&self, label: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.label == label)
    }

    pub fn hard_binding(&self) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.is_hard_binding())
    }

    pub fn distributor_id(&self) -> &str {
        &self.claim.distributor_id
    }

    pub fn soft_watermark(&self) -> Result<SoftWatermarkBinding, ManifestError> {
        self.assertion(LABEL_SOFT_VP1)
            .ok_or_else(|| ManifestError::MissingAssertion(LABEL_SOFT_VP1.into()))?
            .decode()
    }

    pub fn merkle_binding(&self) -> Result<MerkleBinding, ManifestError> {
        self.assertion(LABEL_MERKLE)
            .ok_or_else(|| ManifestError::MissingAssertion(LABEL_MERKLE.into()))?
            .decode()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestStore {
    pub manifests: Vec<Manifest>,
    pub active: usize,
}

impl ManifestStore {
    pub fn single(manifest: Manifest) -> Self {
        ManifestStore { manifests: vec![manifest], active: 0 }
    }

    /// Appends a manifest and makes it the active one.
    pub fn push_active(&mut self, manifest: Manifest) {
        self.manifests.push(manifest);
        self.active = self.manifests.len() - 1;
    }

    pub fn active_manifest(&self) -> &Manifest {
        &self.manifests[self.active]
    }

    /// The manifest whose claim covers the DHS starting at `binx`.
    pub fn manifest_for_dhs(&self, binx: u32) -> Option<&Manifest> {
        self.manifests.iter().find(|m| m.claim.dhs_range.map(|r| r.0) == Some(binx))
    }
}

/// A distributor's signing identity.
pub struct Signer {
    pub distributor_id: String,
    key: SigningKey,
}

impl Signer {
    pub fn from_seed(distributor_id: &str, seed: &[u8; 32]) -> Self {
        Signer { distributor_id: distributor_id.to_string(), key: SigningKey::from_bytes(seed) }
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.key.verifying_key().to_bytes()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClaimInfo {
    pub title: String,
    pub created_at: i64,
    pub dhs_range: Option<(u32, u32)>,
}

/// Builds and signs a manifest holding `hard_binding` plus `extras`.
pub fn create_manifest(
    distributor_id: &str,
    hard_binding: Assertion,
    extras: Vec<Assertion>,
    signer: &Signer,
    info: ClaimInfo,
) -> Result<Manifest, ManifestError> {
    if !hard_binding.is_hard_binding() {
        return Err(ManifestError::NotAHardBinding(hard_binding.label));
    }
    if signer.distributor_id != distributor_id {
        return Err(ManifestError::UnknownDistributor(distributor_id.to_string()));
    }
    if extras.iter().any(Assertion::is_hard_binding) {
        return Err(ManifestError::DuplicateHardBinding);
    }
    let merkle = hard_binding.label == LABEL_MERKLE;
    if merkle != info.dhs_range.is_some() {
        return Err(ManifestError::MalformedClaim(
            "a DHS range is required exactly when the hard binding is a Merkle binding".into(),
        ));
    }
    let mut assertions = vec![hard_binding];
    for a in extras {
        if !known_label(&a.label) {
            return Err(ManifestError::UnknownLabel(a.label));
        }
        if assertions.iter().any(|b| b.label == a.label) {
            return Err(ManifestError::DuplicateLabel(a.label));
        }
        assertions.push(a);
    }
    let claim = Claim {
        version: CLAIM_VERSION,
        distributor_id: distributor_id.to_string(),
        title: info.title,
        assertions: assertions
            .iter()
            .map(|a| AssertionRef { label: a.label.clone(), hash: a.digest() })
            .collect(),
        created_at: info.created_at,
        dhs_range: info.dhs_range,
    };
    let signature = signer.key.sign(&claim.to_bytes()?);
    Ok(Manifest {
        assertions,
        claim,
        signature: ClaimSignature {
            alg: SIGNATURE_ALGORITHM.to_string(),
            signer_key_id: distributor_id.to_string(),
            signature: signature.to_bytes().to_vec(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TrustVerdict {
    Trusted(String),
    UnknownDistributor,
    NotApproved,
    BadSignature,
    MalformedClaim(String),
}

impl TrustVerdict {
    pub fn is_trusted(&self) -> bool {
        matches!(self, TrustVerdict::Trusted(_))
    }
}

/// Signer lookup, approval, signature, then claim consistency; the first
/// failing check is reported.
pub fn verify_manifest(manifest: &Manifest, trust: &TrustList) -> TrustVerdict {
    let key_id = &manifest.signature.signer_key_id;
    let Some(entry) = trust.get(key_id) else {
        return TrustVerdict::UnknownDistributor;
    };
    if !entry.approved {
        return TrustVerdict::NotApproved;
    }
    if manifest.signature.alg != SIGNATURE_ALGORITHM {
        return TrustVerdict::BadSignature;
    }
    let Ok(key) = VerifyingKey::from_bytes(&entry.public_key) else {
        return TrustVerdict::BadSignature;
    };
    let Ok(sig) = Signature::from_slice(&manifest.signature.signature) else {
        return TrustVerdict::BadSignature;
    };
    let Ok(claim_bytes) = manifest.claim.to_bytes() else {
        return TrustVerdict::MalformedClaim("claim does not encode".into());
    };
    if key.verify_strict(&claim_bytes, &sig).is_err() {
        return TrustVerdict::BadSignature;
    }
    match check_claim(manifest) {
        Ok(()) => TrustVerdict::Trusted(key_id.clone()),
        Err(detail) => TrustVerdict::MalformedClaim(detail),
    }
}

fn check_claim(manifest: &Manifest) -> Result<(), String> {
    let claim = &manifest.claim;
    if claim.version != CLAIM_VERSION {
        return Err(format!("claim version {}", claim.version));
    }
    if claim.distributor_id != manifest.signature.signer_key_id {
        return Err("claim distributor differs from the signer".into());
    }
    if claim.assertions.len() != manifest.assertions.len() {
        return Err("claim and assertion store list different assertions".into());
    }
    for (r, a) in claim.assertions.iter().zip(&manifest.assertions) {
        if r.label != a.label {
            return Err(format!("claim lists '{}' where the store holds '{}'", r.label, a.label));
        }
        if r.hash != a.digest() {
            return Err(format!("digest mismatch for '{}'", a.label));
        }
    }
    let hard: Vec<&Assertion> = manifest.assertions.iter().filter(|a| a.is_hard_binding()).collect();
    if hard.len() != 1 {
        return Err(format!("{} hard bindings", hard.len()));
    }
    if (hard[0].label == LABEL_MERKLE) != claim.dhs_range.is_some() {
        return Err("DHS range does not match the hard binding type".into());
    }
    Ok(())
}

pub fn get_asset_reference(manifest: &Manifest) -> Result<AssetReference, ManifestError> {
    let body: AssetReferenceBody = manifest
        .assertion(LABEL_ASSET_REFERENCE)
        .ok_or_else(|| ManifestError::MissingAssertion(LABEL_ASSET_REFERENCE.into()))?
        .decode()?;
    Ok(AssetReference {
        uri: body.uri,
        media_time_start: body.start_ms.map(|ms| ms as f64 / 1000.0),
        media_time_end: body.end_ms.map(|ms| ms as f64 / 1000.0),
    })
}

// -------------------- binding validation --------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BindingVerdict {
    Match { fragments: usize },
    Mismatch(String),
}

impl BindingVerdict {
    pub fn is_match(&self) -> bool {
        matches!(self, BindingVerdict::Match { .. })
    }
}

/// Checks `media` against the manifest's hard binding. For a Merkle binding
/// only fragments whose leaf index lies in `leaf_range` are checked (all
/// fragments when `None`).
pub fn validate_binding(
    manifest: &Manifest,
    media: &MediaObject,
    leaf_range: Option<Range<u64>>,
) -> Result<BindingVerdict, ManifestError> {
    let hard = manifest
        .hard_binding()
        .ok_or_else(|| ManifestError::MissingAssertion("bmff.hash.*".into()))?;
    match hard.label.as_str() {
        LABEL_MONOLITHIC => validate_monolithic(&hard.decode()?, media),
        LABEL_MERKLE => validate_merkle(manifest, &hard.decode()?, media, leaf_range),
        other => Err(ManifestError::UnknownLabel(other.to_string())),
    }
}

fn validate_monolithic(binding: &MonolithicBinding, media: &MediaObject) -> Result<BindingVerdict, ManifestError> {
    if media.kind != MediaKind::Monolithic {
        return Ok(BindingVerdict::Mismatch("monolithic binding over a fragmented object".into()));
    }
    if binding.alg != binding::HASH_ALGORITHM || binding.exclude != ["pmst"] {
        return Ok(BindingVerdict::Mismatch("unsupported monolithic binding parameters".into()));
    }
    let digest = match binding::monolithic_digest(media) {
        Ok(d) => d,
        Err(e) => return Ok(BindingVerdict::Mismatch(e.to_string())),
    };
    Ok(if digest == binding.hash {
        BindingVerdict::Match { fragments: media.fragments.len() }
    } else {
        BindingVerdict::Mismatch("exclusion hash differs".into())
    })
}

fn validate_merkle(
    manifest: &Manifest,
    binding: &MerkleBinding,
    media: &MediaObject,
    leaf_range: Option<Range<u64>>,
) -> Result<BindingVerdict, ManifestError> {
    let mismatch = |m: String| Ok(BindingVerdict::Mismatch(m));
    let Some((dhs_binx, _)) = manifest.claim.dhs_range else {
        return mismatch("Merkle binding without a DHS range".into());
    };
    let mut checked = 0usize;
    for frag in &media.fragments {
        let Some(track) = binding.tracks.iter().find(|t| t.track_id == frag.track_id) else {
            return mismatch(format!("track {} is not covered by the binding", frag.track_id));
        };
        let Some(leaf_index) = frag.sequence_number.checked_sub(track.first_sequence).map(u64::from) else {
            return mismatch(format!("fragment {} precedes the DHS", frag.sequence_number));
        };
        if leaf_range.as_ref().is_some_and(|r| !r.contains(&leaf_index)) {
            continue;
        }
        if leaf_index >= track.leaf_count {
            return mismatch(format!("fragment {} lies beyond the DHS", frag.sequence_number));
        }
        let prov = frag.provenance.as_deref().ok_or(ManifestError::MissingProof {
            track_id: frag.track_id,
            sequence: frag.sequence_number,
        })?;
        let Ok(fp) = FragmentProof::from_bytes(prov) else {
            return mismatch(format!("fragment {} has an unreadable proof", frag.sequence_number));
        };
        if fp.dhs_binx != dhs_binx || fp.track_id != frag.track_id || fp.proof.leaf_index != leaf_index {
            return mismatch(format!("fragment {} proof refers to another position", frag.sequence_number));
        }
        if !binding::verify_inclusion(&track.root, &binding::hash_fragment(frag), &fp.proof) {
            return mismatch(format!(
                "fragment {} of track {} fails inclusion",
                frag.sequence_number, frag.track_id
            ));
        }
        checked += 1;
    }
    if checked == 0 {
        return mismatch("no fragment in range".into());
    }
    for track in &binding.tracks {
        if media.track_fragments(track.track_id).next().is_none() {
            continue;
        }
        match media.init_for(track.track_id) {
            Some(init) if binding::hash_init_segment(init) == track.init_hash => {}
            Some(_) => return mismatch(format!("init segment of track {} differs", track.track_id)),
            None => return mismatch(format!("track {} has no init segment", track.track_id)),
        }
    }
    Ok(BindingVerdict::Match { fragments: checked })
}

/// Validates every fragment against the store manifest its proof names, or
/// the whole object against the active monolithic binding.
pub fn validate_store_binding(store: &ManifestStore, media: &MediaObject) -> Result<BindingVerdict, ManifestError> {
    let active = store.active_manifest();
    if active.hard_binding().map(|a| a.label.as_str()) != Some(LABEL_MERKLE) {
        return validate_binding(active, media, None);
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, frag) in media.fragments.iter().enumerate() {
        let prov = frag.provenance.as_deref().ok_or(ManifestError::MissingProof {
            track_id: frag.track_id,
            sequence: frag.sequence_number,
        })?;
        match FragmentProof::from_bytes(prov) {
            Ok(fp) => groups.entry(fp.dhs_binx).or_default().push(i),
            Err(_) => return Ok(BindingVerdict::Mismatch("unreadable fragment proof".into())),
        }
    }
    if groups.is_empty() {
        return Ok(BindingVerdict::Mismatch("no fragments".into()));
    }
    let mut total = 0;
    for (binx, indices) in groups {
        let Some(manifest) = store.manifest_for_dhs(binx) else {
            return Ok(BindingVerdict::Mismatch(format!("no manifest for DHS starting at {binx}")));
        };
        let mut part = media.clone();
        part.fragments = indices.iter().map(|&i| media.fragments[i].clone()).collect();
        match validate_binding(manifest, &part, None)? {
            BindingVerdict::Match { fragments } => total += fragments,
            mismatch => return Ok(mismatch),
        }
    }
    Ok(BindingVerdict::Match { fragments: total })
}
