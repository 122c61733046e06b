//! Broadcast production: the watermarked fragmented replica, its Data Hash
//! Segments (DHS) with signed per-DHS manifests, publication to a registry,
//! the hostile capture path and canonical clip reconstruction.
//!
//! Broadcast media time 0 carries interval code `start_interval_code`. DHS
//! `k` covers cells `[k * n, (k + 1) * n)` where `n = dhs_cell_count`, and
//! fragment `g` of the whole broadcast has sequence number `g + 1` and starts
//! at `g` fragment durations.

mod canonical;
mod capture;

use std::collections::BTreeMap;

use crate::binding::{self, BindingError, MerkleTree};
use crate::bmff::{
    attach_provenance_box, serialize_media, BmffError, Fragment, InitSegment, MediaKind, MediaObject, Sample,
    AUDIO_SAMPLE_RATE, VIDEO_FRAME_TICKS,
};
use crate::manifest::{
    create_manifest, serialize_manifest_store, Assertion, AssetReference, ClaimInfo, FragmentProof, Manifest,
    ManifestError, ManifestStore, MerkleBinding, MonolithicBinding, Signer, SoftWatermarkBinding, TrackBinding,
};
use crate::recovery::{build_asset_url, DhsRecord, DhsRegistry, RecoveryError};
use crate::watermark::{embed_watermark, pcm_to_bytes, Vp1Payload, WatermarkError, CELL_MS, MAX_INTERVAL_CODE, MAX_SERVER_CODE};

pub use canonical::{produce_canonical_clip, recovered_dhs, CanonicalClip, FragmentCheck, RecoveredDhs};
pub use capture::{audio_pcm, capture_broadcast, flatten_to_monolithic, perturb_audio, simulate_capture, video_frames, VideoFrame};

pub const AUDIO_TRACK: u32 = 1;
pub const VIDEO_TRACK: u32 = 2;
/// Milliseconds per video frame at 25 fps.
pub const FRAME_MS: u32 = 40;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration invariant violated: {0}")]
    ConfigInvariantViolation(String),
    #[error("source holds {available_ms} ms, one DHS needs {needed_ms} ms")]
    SourceTooShort { needed_ms: u64, available_ms: u64 },
    #[error("DHS ending at {end_ms} ms is not yet behind the live edge at {live_edge_ms} ms")]
    NotYetLive { end_ms: u64, live_edge_ms: u64 },
    #[error("DHS sequence is not contiguous: {0}")]
    NotContiguous(String),
    #[error("recovery coverage gap: {0}")]
    CoverageGap(String),
    #[error("canonical content could not be retrieved: {0}")]
    CanonicalRetrieval(String),
    #[error("canonical content failed validation: {0}")]
    CanonicalValidationError(String),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Bmff(#[from] BmffError),
    #[error(transparent)]
    Binding(#[from] BindingError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastConfig {
    pub server_code: u32,
    pub start_interval_code: u32,
    pub dhs_cell_count: u32,
    pub fragment_duration_ms: u32,
    pub distributor_id: String,
    pub base_domain: String,
    pub title: String,
    /// Unix seconds of broadcast media time 0.
    pub epoch: i64,
    /// Seconds a published manifest stays valid after its creation.
    pub validity_secs: i64,
}

impl Default for BroadcastConfig {
    fn default() -> Self {
        BroadcastConfig {
            server_code: 1,
            start_interval_code: 1000,
            dhs_cell_count: 20,
            fragment_duration_ms: 1000,
            distributor_id: "broadcaster".into(),
            base_domain: "wm.test".into(),
            title: "broadcast".into(),
            epoch: 1_700_000_000,
            validity_secs: 30 * 24 * 3600,
        }
    }
}

impl BroadcastConfig {
    pub fn dhs_ms(&self) -> u64 {
        self.dhs_cell_count as u64 * CELL_MS
    }

    pub fn fragments_per_dhs(&self) -> u64 {
        self.dhs_ms() / self.fragment_duration_ms as u64
    }

    pub fn samples_per_fragment(&self) -> u64 {
        self.fragment_duration_ms as u64 * AUDIO_SAMPLE_RATE as u64 / 1000
    }

    pub fn frames_per_fragment(&self) -> u64 {
        (self.fragment_duration_ms / FRAME_MS) as u64
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::ConfigInvariantViolation(m));
        if self.dhs_cell_count == 0 {
            return bad("DHS must hold at least one cell".into());
        }
        if self.fragment_duration_ms == 0 || !self.fragment_duration_ms.is_multiple_of(FRAME_MS) {
            return bad(format!("fragment duration {} ms is not a positive multiple of 40 ms", self.fragment_duration_ms));
        }
        if !self.dhs_ms().is_multiple_of(self.fragment_duration_ms as u64) {
            return bad(format!(
                "DHS duration {} ms is not a multiple of the {} ms fragment duration",
                self.dhs_ms(),
                self.fragment_duration_ms
            ));
        }
        if self.server_code > MAX_SERVER_CODE || self.start_interval_code > MAX_INTERVAL_CODE {
            return bad("watermark codes exceed their field widths".into());
        }
        if self.distributor_id.is_empty() || self.base_domain.is_empty() {
            return bad("distributor id and base domain must be set".into());
        }
        Ok(())
    }

    pub fn dhs_id(&self, binx: u32) -> String {
        format!("dhs-{}-{binx}", self.server_code)
    }
}

// -------------------- essence sources --------------------

/// Random-access broadcast essence: 48 kHz mono PCM and 25 fps frame blobs.
pub trait EssenceSource {
    fn duration_ms(&self) -> u64;
    fn audio(&self, start_sample: u64, count: usize) -> Vec<i16>;
    fn video_frame(&self, index: u64) -> Vec<u8>;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic pseudo-random essence keyed by a seed.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSource {
    pub seed: u64,
    pub duration_ms: u64,
}

impl SyntheticSource {
    pub fn new(seed: u64, duration_ms: u64) -> Self {
        SyntheticSource { seed, duration_ms }
    }
}

impl EssenceSource for SyntheticSource {
    fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    fn audio(&self, start_sample: u64, count: usize) -> Vec<i16> {
        let key = splitmix64(self.seed);
        (start_sample..start_sample + count as u64).map(|i| (splitmix64(key ^ i) >> 50) as i16 - 8192).collect()
    }

    fn video_frame(&self, index: u64) -> Vec<u8> {
        let key = splitmix64(self.seed ^ 0xF0F0_F0F0_0000_0000 ^ index);
        let len = 600 + (key % 400) as usize;
        (0..len.div_ceil(8) as u64).flat_map(|w| splitmix64(key ^ w).to_le_bytes()).take(len).collect()
    }
}

/// Essence taken from an existing two-track media object.
pub struct MediaSource {
    audio: Vec<i16>,
    frames: Vec<Vec<u8>>,
}

impl MediaSource {
    pub fn from_media(obj: &MediaObject) -> Result<Self, PipelineError> {
        let (_, audio) = audio_pcm(obj).ok_or_else(|| {
            PipelineError::ConfigInvariantViolation("source object has no PCM audio track".into())
        })?;
        let frames = video_frames(obj).into_iter().map(|f| f.data).collect();
        Ok(MediaSource { audio, frames })
    }
}

impl EssenceSource for MediaSource {
    fn duration_ms(&self) -> u64 {
        let audio_ms = self.audio.len() as u64 * 1000 / AUDIO_SAMPLE_RATE as u64;
        audio_ms.min(self.frames.len() as u64 * FRAME_MS as u64)
    }

    fn audio(&self, start_sample: u64, count: usize) -> Vec<i16> {
        let s = start_sample as usize;
        self.audio[s..s + count].to_vec()
    }

    fn video_frame(&self, index: u64) -> Vec<u8> {
        self.frames[index as usize].clone()
    }
}

// -------------------- replica production --------------------

#[derive(Debug, Clone)]
pub struct DataHashSegment {
    pub index: u64,
    pub dhs_id: String,
    pub server_code: u32,
    pub binx: u32,
    pub einx: u32,
    pub media_start_ms: u64,
    pub media_end_ms: u64,
    pub replica: MediaObject,
    pub manifest: Manifest,
    pub manifest_store: Vec<u8>,
    pub replica_locator: String,
    pub valid_until: i64,
}

impl DataHashSegment {
    pub fn record(&self) -> DhsRecord {
        DhsRecord {
            dhs_id: self.dhs_id.clone(),
            server_code: self.server_code,
            first_interval_code: self.binx,
            last_interval_code: self.einx,
            media_start_ms: self.media_start_ms,
            manifest_store: self.manifest_store.clone(),
            replica_locator: self.replica_locator.clone(),
            valid_until: self.valid_until,
        }
    }

    pub fn replica_bytes(&self) -> Result<Vec<u8>, PipelineError> {
        Ok(serialize_media(&self.replica)?)
    }
}

/// Yields one DHS per `dhs_cell_count` cells of source essence.
pub struct ReplicaProducer<'a> {
    source: &'a dyn EssenceSource,
    config: BroadcastConfig,
    signer: &'a Signer,
    next: u64,
    count: u64,
}

pub fn produce_replica<'a>(
    source: &'a dyn EssenceSource,
    config: &BroadcastConfig,
    signer: &'a Signer,
) -> Result<ReplicaProducer<'a>, PipelineError> {
    config.check()?;
    if signer.distributor_id != config.distributor_id {
        return Err(PipelineError::ConfigInvariantViolation(format!(
            "signer '{}' does not match distributor '{}'",
            signer.distributor_id, config.distributor_id
        )));
    }
    let count = source.duration_ms() / config.dhs_ms();
    if count == 0 {
        return Err(PipelineError::SourceTooShort { needed_ms: config.dhs_ms(), available_ms: source.duration_ms() });
    }
    let last_code = config.start_interval_code as u64 + count * config.dhs_cell_count as u64 - 1;
    if last_code > MAX_INTERVAL_CODE as u64 {
        return Err(WatermarkError::IntervalOverflow {
            start: config.start_interval_code,
            count: (count * config.dhs_cell_count as u64) as usize,
        }
        .into());
    }
    Ok(ReplicaProducer { source, config: config.clone(), signer, next: 0, count })
}

impl<'a> ReplicaProducer<'a> {
    /// Skips to DHS `index`.
    pub fn starting_at(mut self, index: u64) -> Self {
        self.next = index.min(self.count);
        self
    }

    pub fn dhs_count(&self) -> u64 {
        self.count
    }

    fn build(&self, k: u64) -> Result<DataHashSegment, PipelineError> {
        let cfg = &self.config;
        let cells = cfg.dhs_cell_count;
        let binx = cfg.start_interval_code + (k as u32) * cells;
        let einx = binx + cells - 1;
        let frags = cfg.fragments_per_dhs();
        let spf = cfg.samples_per_fragment();
        let fpf = cfg.frames_per_fragment();
        let media_start_ms = k * cfg.dhs_ms();
        let media_end_ms = media_start_ms + cfg.dhs_ms();
        let dhs_id = cfg.dhs_id(binx);

        let start_sample = media_start_ms * AUDIO_SAMPLE_RATE as u64 / 1000;
        let raw = self.source.audio(start_sample, (frags * spf) as usize);
        let marked = embed_watermark(&raw, Vp1Payload::new(cfg.server_code, binx)?, cells as usize)?;

        let mut audio = Vec::with_capacity(frags as usize);
        let mut video = Vec::with_capacity(frags as usize);
        for j in 0..frags {
            let g = k * frags + j;
            let seq = g as u32 + 1;
            let pcm = &marked[(j * spf) as usize..((j + 1) * spf) as usize];
            audio.push(Fragment::new(
                AUDIO_TRACK,
                seq,
                g * spf,
                vec![Sample { duration: spf as u32, size: 2 * spf as u32 }],
                pcm_to_bytes(pcm),
            ));
            let mut samples = Vec::with_capacity(fpf as usize);
            let mut data = Vec::new();
            for f in g * fpf..(g + 1) * fpf {
                let frame = self.source.video_frame(f);
                samples.push(Sample { duration: VIDEO_FRAME_TICKS, size: frame.len() as u32 });
                data.extend_from_slice(&frame);
            }
            video.push(Fragment::new(VIDEO_TRACK, seq, g * fpf * VIDEO_FRAME_TICKS as u64, samples, data));
        }

        let inits = [InitSegment::audio(AUDIO_TRACK), InitSegment::video(VIDEO_TRACK)];
        let mut tracks = Vec::new();
        for (init, track_frags) in inits.iter().zip([&mut audio, &mut video]) {
            let tree = MerkleTree::build(track_frags.iter().map(binding::hash_fragment).collect())?;
            for (leaf, frag) in track_frags.iter_mut().enumerate() {
                let proof = FragmentProof {
                    dhs_id: dhs_id.clone(),
                    dhs_binx: binx,
                    track_id: init.track_id,
                    proof: tree.prove(leaf as u64)?,
                };
                frag.provenance = Some(proof.to_bytes()?);
            }
            tracks.push(TrackBinding {
                track_id: init.track_id,
                alg: binding::HASH_ALGORITHM.into(),
                leaf_count: tree.leaf_count(),
                root: tree.root(),
                init_hash: binding::hash_init_segment(init),
                first_sequence: (k * frags) as u32 + 1,
            });
        }

        let replica_locator = build_asset_url(cfg.server_code, &cfg.base_domain, &dhs_id);
        let hard = Assertion::merkle(&MerkleBinding {
            alg: binding::HASH_ALGORITHM.into(),
            fragment_duration_ms: cfg.fragment_duration_ms,
            tracks,
        })?;
        let metadata: BTreeMap<String, String> = [
            ("title".to_string(), cfg.title.clone()),
            ("dhs_id".to_string(), dhs_id.clone()),
            ("server_code".to_string(), cfg.server_code.to_string()),
        ]
        .into();
        let extras = vec![
            Assertion::soft_watermark(&SoftWatermarkBinding { server_code: cfg.server_code, binx, einx })?,
            Assertion::asset_reference(&AssetReference {
                uri: replica_locator.clone(),
                media_time_start: Some(media_start_ms as f64 / 1000.0),
                media_time_end: Some(media_end_ms as f64 / 1000.0),
            })?,
            Assertion::content_metadata(&metadata)?,
        ];
        let created_at = cfg.epoch + media_end_ms.div_ceil(1000) as i64;
        let manifest = create_manifest(
            &cfg.distributor_id,
            hard,
            extras,
            self.signer,
            ClaimInfo { title: cfg.title.clone(), created_at, dhs_range: Some((binx, einx)) },
        )?;
        let manifest_store = serialize_manifest_store(&ManifestStore::single(manifest.clone()))?;

        let inits = inits
            .into_iter()
            .map(|i| attach_provenance_box(i, manifest_store.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let fragments = audio.into_iter().zip(video).flat_map(|(a, v)| [a, v]).collect();
        let replica = MediaObject::new(MediaKind::Fragmented, inits, fragments);
        replica.check_invariants()?;

        Ok(DataHashSegment {
            index: k,
            dhs_id,
            server_code: cfg.server_code,
            binx,
            einx,
            media_start_ms,
            media_end_ms,
            replica,
            manifest,
            manifest_store,
            replica_locator,
            valid_until: created_at + cfg.validity_secs,
        })
    }
}

impl Iterator for ReplicaProducer<'_> {
    type Item = Result<DataHashSegment, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let k = self.next;
        self.next += 1;
        Some(self.build(k))
    }
}

/// Publishes a DHS once the live edge has passed its last cell.
pub fn publish_dhs(registry: &mut DhsRegistry, dhs: &DataHashSegment, live_edge_ms: u64) -> Result<(), PipelineError> {
    if dhs.media_end_ms > live_edge_ms {
        return Err(PipelineError::NotYetLive { end_ms: dhs.media_end_ms, live_edge_ms });
    }
    registry.publish_dhs(dhs.record(), &dhs.replica_bytes()?)?;
    Ok(())
}

/// Concatenates consecutive DHS replicas into one fragmented object. Init
/// segments come from the first replica.
pub fn concat_replicas(dhs: &[DataHashSegment]) -> Result<MediaObject, PipelineError> {
    let first = dhs.first().ok_or_else(|| PipelineError::NotContiguous("no DHS".into()))?;
    for w in dhs.windows(2) {
        if w[1].binx != w[0].einx + 1 || w[1].server_code != w[0].server_code {
            return Err(PipelineError::NotContiguous(format!("{} does not follow {}", w[1].dhs_id, w[0].dhs_id)));
        }
    }
    let mut obj = first.replica.clone();
    for d in &dhs[1..] {
        obj.fragments.extend(d.replica.fragments.iter().cloned());
    }
    Ok(obj)
}

/// Adds a signed monolithic (exclusion-hash) manifest in a `pmst` box.
pub fn sign_monolithic(
    obj: &MediaObject,
    signer: &Signer,
    title: &str,
    created_at: i64,
    extras: Vec<Assertion>,
) -> Result<MediaObject, PipelineError> {
    let mut out = flatten_to_monolithic(obj)?;
    let hash = binding::monolithic_digest(&out)?;
    let hard = Assertion::monolithic(&MonolithicBinding {
        alg: binding::HASH_ALGORITHM.into(),
        hash,
        exclude: vec!["pmst".into()],
    })?;
    let manifest = create_manifest(
        &signer.distributor_id,
        hard,
        extras,
        signer,
        ClaimInfo { title: title.into(), created_at, dhs_range: None },
    )?;
    out.container_manifest = Some(serialize_manifest_store(&ManifestStore::single(manifest))?);
    Ok(out)
}
