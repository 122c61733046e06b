//! Broadcast worlds shared by the integration suites.

#![allow(dead_code)]

use castprov_core::binding::sha256;
use castprov_core::bmff::MediaObject;
use castprov_core::manifest::{Signer, TrustList};
use castprov_core::pipeline::{
    audio_pcm, perturb_audio, produce_replica, publish_dhs, simulate_capture, BroadcastConfig, DataHashSegment,
    SyntheticSource,
};
use castprov_core::recovery::{authority_host, AssetFetcher, DhsRegistry, LocalRecoveryClient, RecoveryError};
use castprov_core::validator::{
    validate_media_object, PlatformPolicy, StepId, Validation, ValidationContext,
};
use castprov_core::watermark::{erase_watermark, pcm_to_bytes, rewrite_watermark, Vp1Payload, SAMPLES_PER_CELL};

pub const BROADCAST_SEED: u64 = 42;

pub fn signer(id: &str) -> Signer {
    Signer::from_seed(id, &sha256(id.as_bytes()))
}

/// A broadcaster whose replicas are published to an in-memory registry, plus
/// the trust list a platform holds.
pub struct World {
    pub cfg: BroadcastConfig,
    pub signer: Signer,
    pub trust: TrustList,
    pub dhs: Vec<DataHashSegment>,
    pub client: LocalRecoveryClient,
}

impl World {
    pub fn broadcast(secs: u64) -> Self {
        Self::with_config(secs, BroadcastConfig::default(), BROADCAST_SEED)
    }

    pub fn with_config(secs: u64, cfg: BroadcastConfig, seed: u64) -> Self {
        let signer = signer(&cfg.distributor_id);
        let mut trust = TrustList::new();
        trust.add(&cfg.distributor_id, signer.public_key(), &[authority_host(cfg.server_code, &cfg.base_domain)]).unwrap();
        trust.set_approved(&cfg.distributor_id, true).unwrap();
        let source = SyntheticSource::new(seed, secs * 1000);
        let dhs: Vec<DataHashSegment> =
            produce_replica(&source, &cfg, &signer).unwrap().collect::<Result<_, _>>().unwrap();
        let mut registry = DhsRegistry::in_memory();
        for d in &dhs {
            publish_dhs(&mut registry, d, u64::MAX).unwrap();
        }
        let client = LocalRecoveryClient::new(registry.shared(), Some(&cfg.base_domain));
        World { cfg, signer, trust, dhs, client }
    }

    pub fn ctx(&self) -> ValidationContext<'_> {
        ValidationContext {
            trust: &self.trust,
            recovery: &self.client,
            assets: &self.client,
            base_domain: self.cfg.base_domain.clone(),
        }
    }

    pub fn validate(&self, obj: &MediaObject, policy: &PlatformPolicy) -> Validation {
        validate_media_object(obj, &self.ctx(), policy)
    }

    pub fn capture(&self, start: f64, end: f64) -> MediaObject {
        simulate_capture(&self.dhs, start, end).unwrap()
    }

    pub fn perturbed_capture(&self, start: f64, end: f64) -> MediaObject {
        perturb_audio(&self.capture(start, end), 25, 11)
    }

    /// Publishes a second broadcaster's replicas under `server_code` in the
    /// same registry. `approved` registers the signer with the authority;
    /// `None` leaves it off the trust list.
    pub fn publish_other(&mut self, id: &str, server_code: u32, seed: u64, approved: Option<bool>) -> Vec<DataHashSegment> {
        let cfg = BroadcastConfig { server_code, distributor_id: id.into(), ..self.cfg.clone() };
        let s = signer(id);
        let source = SyntheticSource::new(seed, 60_000);
        let dhs: Vec<DataHashSegment> = produce_replica(&source, &cfg, &s).unwrap().collect::<Result<_, _>>().unwrap();
        {
            let mut reg = self.client.registry.write().unwrap();
            for d in &dhs {
                publish_dhs(&mut reg, d, u64::MAX).unwrap();
            }
        }
        if let Some(ok) = approved {
            self.trust.add(id, s.public_key(), &[authority_host(server_code, &cfg.base_domain)]).unwrap();
            self.trust.set_approved(id, ok).unwrap();
        }
        dhs
    }

    /// Replaces a published replica with one whose fragment bytes differ.
    pub fn tamper_replica(&self, dhs_index: usize, fragment_index: usize) {
        let d = &self.dhs[dhs_index];
        let mut bad = d.replica.clone();
        bad.fragments[fragment_index].sample_data[17] ^= 0x10;
        let bytes = castprov_core::bmff::serialize_media(&bad).unwrap();
        self.client.registry.write().unwrap().publish_dhs(d.record(), &bytes).unwrap();
    }
}

/// Swaps the audio essence of a single-audio-region object.
pub fn with_audio(obj: &MediaObject, pcm: &[i16]) -> MediaObject {
    let mut out = obj.clone();
    let track = out.audio_track().unwrap().track_id;
    let frag = out.fragments.iter_mut().find(|f| f.track_id == track).unwrap();
    frag.sample_data = pcm_to_bytes(pcm);
    out
}

/// Rewrites the watermark from the object's first sample with a new start
/// payload.
pub fn rewrite(obj: &MediaObject, server_code: u32, interval_code: u32) -> MediaObject {
    let (_, pcm) = audio_pcm(obj).unwrap();
    let cells = pcm.len() / SAMPLES_PER_CELL;
    let marked = rewrite_watermark(&pcm, Vp1Payload::new(server_code, interval_code).unwrap(), cells).unwrap();
    with_audio(obj, &marked)
}

pub fn erase(obj: &MediaObject) -> MediaObject {
    with_audio(obj, &erase_watermark(&audio_pcm(obj).unwrap().1))
}

pub fn path_of(v: &Validation) -> Vec<(StepId, bool)> {
    v.outcome.steps.iter().map(|s| (s.step, s.passed)).collect()
}

/// Asset fetcher that never finds anything.
pub struct NoAssets;

impl AssetFetcher for NoAssets {
    fn fetch_asset(&self, _uri: &str) -> Result<Vec<u8>, RecoveryError> {
        Err(RecoveryError::NotFound)
    }
}
