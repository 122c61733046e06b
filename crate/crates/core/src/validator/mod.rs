//! Media-object validation.
//!
//! The embedded manifest is tried first (3-1 to 3-3). On absence or failure
//! the audio watermark is extracted (3-4), the manifests of every watermark
//! segment are recovered (3-5) and checked against the trust list (3-6), and
//! the uploaded essence is compared byte for byte with authenticated replica
//! essence over the watermark-derived range (3-7). A mismatch leads to
//! canonical processing (4-8 to 4-11). Every visited step lands in the
//! trail, and the trail alone determines the terminal.

mod compare;
mod policy;
mod trail;

use std::collections::HashMap;

use serde::Serialize;

use crate::bmff::{parse_media, slice_fragments, MediaObject, AUDIO_SAMPLE_RATE, VIDEO_FRAME_TICKS};
use crate::cbor;
use crate::manifest::{
    parse_manifest_store, validate_binding, validate_store_binding, verify_manifest, ManifestStore, TrustList,
    TrustVerdict,
};
use crate::pipeline::{
    audio_pcm, produce_canonical_clip, recovered_dhs, video_frames, CanonicalClip, PipelineError, RecoveredDhs,
};
use crate::recovery::{
    authority_host, build_recovery_url, AssetFetcher, RecoveryClient, RecoveryError, RecoveryResponse,
};
use crate::watermark::{extract_segments, pcm_from_bytes, Vp1Payload, WatermarkSegment, MAX_INTERVAL_CODE, SAMPLES_PER_CELL};

pub use compare::{compare_assets, object_id, ComparisonReport, TrackDiff};
pub use policy::{
    apply_policy, pending_approval, ActionStatus, CanonicalDecision, PlatformAction, PlatformPolicy, PolicyAction,
    PolicyInput,
};
pub use trail::{state_graph, terminal_for_trail, OutcomeKind, StepId, StepResult, Terminal};

use compare::{frame_index, frame_units, UNITS_PER_SAMPLE};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ValidatorError {
    #[error("the uploaded and canonical objects do not overlap")]
    NoOverlap,
    #[error("no canonical content is available")]
    CanonicalUnavailable,
    #[error("report encoding failed: {0}")]
    Encoding(String),
}

/// Effectful collaborators of a validation run.
pub struct ValidationContext<'a> {
    pub trust: &'a TrustList,
    pub recovery: &'a dyn RecoveryClient,
    pub assets: &'a dyn AssetFetcher,
    /// Domain under which watermark authorities are resolved.
    pub base_domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SegmentReport {
    pub server_code: u32,
    pub binx: u32,
    pub einx: u32,
    pub first_cell_sample: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requested_range: Option<(u32, u32)>,
    /// Broadcast media time of the uploaded object's first audio sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CanonicalSummary {
    pub object_id: String,
    pub binx: u32,
    pub einx: u32,
    pub start_time: f64,
    pub end_time: f64,
    pub fragments: usize,
    pub fragments_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationOutcome {
    pub version: u32,
    pub terminal: Terminal,
    pub kind: OutcomeKind,
    pub trail: Vec<StepId>,
    pub steps: Vec<StepResult>,
    pub distributor_id: Option<String>,
    pub uploaded_id: String,
    pub segments: Vec<SegmentReport>,
    pub canonical: Vec<CanonicalSummary>,
    pub comparisons: Vec<ComparisonReport>,
    pub action: Option<PlatformAction>,
}

impl ValidationOutcome {
    pub fn is_success(&self) -> bool {
        self.kind == OutcomeKind::Success
    }

    pub fn passed(&self, step: StepId) -> Option<bool> {
        self.steps.iter().find(|s| s.step == step).map(|s| s.passed)
    }

    pub fn to_json(&self) -> Result<String, ValidatorError> {
        serde_json::to_string_pretty(self).map_err(|e| ValidatorError::Encoding(e.to_string()))
    }

    pub fn to_cbor(&self) -> Result<Vec<u8>, ValidatorError> {
        cbor::to_canonical(self).map_err(|e| ValidatorError::Encoding(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub outcome: ValidationOutcome,
    pub canonical: Vec<CanonicalClip>,
}

// -------------------- run state --------------------

struct Run<'a> {
    obj: &'a MediaObject,
    ctx: &'a ValidationContext<'a>,
    policy: &'a PlatformPolicy,
    steps: Vec<StepResult>,
    distributor: Option<String>,
    segments: Vec<SegmentReport>,
    canonical: Vec<CanonicalClip>,
    comparisons: Vec<ComparisonReport>,
    action: Option<PlatformAction>,
}

impl Run<'_> {
    fn record(&mut self, step: StepId, passed: bool, detail: Option<String>) -> bool {
        self.steps.push(StepResult { step, passed, detail });
        passed
    }

    fn pass(&mut self, step: StepId) -> bool {
        self.record(step, true, None)
    }

    fn fail(&mut self, step: StepId, detail: impl Into<String>) -> bool {
        self.record(step, false, Some(detail.into()))
    }

    fn finish(self) -> Validation {
        let path: Vec<(StepId, bool)> = self.steps.iter().map(|s| (s.step, s.passed)).collect();
        let terminal = terminal_for_trail(&path).expect("validation follows the state graph");
        Validation {
            outcome: ValidationOutcome {
                version: REPORT_VERSION,
                terminal,
                kind: terminal.kind(),
                trail: path.iter().map(|p| p.0).collect(),
                steps: self.steps,
                distributor_id: self.distributor,
                uploaded_id: object_id(self.obj),
                segments: self.segments,
                canonical: self
                    .canonical
                    .iter()
                    .map(|c| CanonicalSummary {
                        object_id: object_id(&c.media),
                        binx: c.binx,
                        einx: c.einx,
                        start_time: c.start_time,
                        end_time: c.end_time,
                        fragments: c.checks.len(),
                        fragments_matched: c.checks.iter().filter(|k| k.matched).count(),
                    })
                    .collect(),
                comparisons: self.comparisons,
                action: self.action,
            },
            canonical: self.canonical,
        }
    }
}

/// The manifest store carried in the container or in an init segment.
pub fn embedded_store(obj: &MediaObject) -> Option<ManifestStore> {
    let from_inits = obj.init_segments.iter().filter_map(|i| i.provenance.as_deref());
    obj.container_manifest.as_deref().into_iter().chain(from_inits).find_map(|b| parse_manifest_store(b).ok())
}

/// Runs the full decision graph over `obj`. Failures never escape as errors;
/// they end in an exception terminal.
pub fn validate_media_object(obj: &MediaObject, ctx: &ValidationContext<'_>, policy: &PlatformPolicy) -> Validation {
    let mut run = Run {
        obj,
        ctx,
        policy,
        steps: Vec::new(),
        distributor: None,
        segments: Vec::new(),
        canonical: Vec::new(),
        comparisons: Vec::new(),
        action: None,
    };
    if embedded_path(&mut run) {
        return run.finish();
    }
    watermark_path(&mut run);
    run.finish()
}

/// 3-1 to 3-3. True when the embedded manifest validates the object.
fn embedded_path(run: &mut Run<'_>) -> bool {
    let Some(store) = embedded_store(run.obj) else {
        return run.fail(StepId::ManifestPresent, "no readable manifest store in the object");
    };
    run.pass(StepId::ManifestPresent);
    let unregistered: Vec<&str> = store
        .manifests
        .iter()
        .map(|m| m.distributor_id())
        .filter(|d| !run.ctx.trust.is_registered(d))
        .collect();
    if !unregistered.is_empty() {
        return run.fail(StepId::DistributorRegistered, format!("unregistered distributor '{}'", unregistered.join("', '")));
    }
    run.pass(StepId::DistributorRegistered);
    run.distributor = Some(store.active_manifest().distributor_id().to_string());
    for m in &store.manifests {
        match verify_manifest(m, run.ctx.trust) {
            TrustVerdict::Trusted(_) => {}
            v => return run.fail(StepId::EmbeddedBinding, format!("manifest of '{}': {v:?}", m.distributor_id())),
        }
    }
    match validate_store_binding(&store, run.obj) {
        Ok(v) if v.is_match() => run.pass(StepId::EmbeddedBinding),
        Ok(v) => run.fail(StepId::EmbeddedBinding, format!("{v:?}")),
        Err(e) => run.fail(StepId::EmbeddedBinding, e.to_string()),
    }
}

/// A segment's recovery response and the range it was requested for.
struct Retrieved {
    seg: WatermarkSegment,
    host: String,
    binx: u32,
    einx: u32,
    response: RecoveryResponse,
}

fn watermark_path(run: &mut Run<'_>) {
    let Some((audio_start, pcm)) = audio_pcm(run.obj) else {
        run.fail(StepId::WatermarkPresent, "no audio track");
        return;
    };
    let segs = extract_segments(&pcm);
    if segs.is_empty() {
        run.fail(StepId::WatermarkPresent, "no complete watermark cell");
        return;
    }
    run.pass(StepId::WatermarkPresent);
    run.segments = segs
        .iter()
        .map(|s| SegmentReport {
            server_code: s.server_code,
            binx: s.binx,
            einx: s.einx,
            first_cell_sample: s.first_cell_sample,
            requested_range: None,
            clip_start: None,
            validated: None,
            detail: None,
        })
        .collect();

    // 3-5
    let mut retrieved = Vec::new();
    for (i, seg) in segs.iter().enumerate() {
        match retrieve(run.ctx, seg, pcm.len()) {
            Ok(r) => {
                run.segments[i].requested_range = Some((r.binx, r.einx));
                retrieved.push(r);
            }
            Err(detail) => {
                run.fail(StepId::ManifestRetrieved, detail);
                return;
            }
        }
    }
    run.pass(StepId::ManifestRetrieved);

    // 3-6
    for r in &retrieved {
        if let Err(detail) = check_signatures(run.ctx.trust, r) {
            run.fail(StepId::SignatureApproved, detail);
            return;
        }
    }
    run.pass(StepId::SignatureApproved);

    // 3-7
    let mut cache = ReplicaCache::default();
    let checked = verify_content(run, &retrieved, audio_start, &pcm, &mut cache);
    let mut windows = Vec::new();
    let mut all_ok = true;
    for (i, c) in checked.into_iter().enumerate() {
        let report = &mut run.segments[i];
        match c {
            Ok(check) => {
                report.clip_start = Some(check.offset as f64 / AUDIO_SAMPLE_RATE as f64);
                report.validated = Some(check.result.is_ok());
                report.detail = check.result.as_ref().err().cloned();
                all_ok &= check.result.is_ok();
                windows.push(Some(check.window));
                if run.distributor.is_none() || i == 0 {
                    run.distributor = Some(check.distributor);
                }
            }
            Err(detail) => {
                report.validated = Some(false);
                report.detail = Some(detail);
                all_ok = false;
                windows.push(None);
            }
        }
    }
    if all_ok {
        run.pass(StepId::RecoveredBinding);
        return;
    }
    let failed: Vec<String> = run
        .segments
        .iter()
        .filter(|s| s.validated != Some(true))
        .map(|s| format!("[{}, {}]: {}", s.binx, s.einx, s.detail.clone().unwrap_or_default()))
        .collect();
    run.fail(StepId::RecoveredBinding, failed.join("; "));
    canonical_path(run, &retrieved, &windows);
}

/// Requests the segment's range widened by one cell on each side that holds
/// a partial cell; falls back to the exact range when the widened request is
/// not fully covered.
fn retrieve(ctx: &ValidationContext<'_>, seg: &WatermarkSegment, audio_len: usize) -> Result<Retrieved, String> {
    let host = authority_host(seg.server_code, &ctx.base_domain);
    if ctx.trust.owner_of_authority(&host).is_none() {
        return Err(format!("{host} does not correspond to a registered broadcaster"));
    }
    let head = seg.first_cell_sample > 0 && seg.binx > 0;
    let tail = seg.end_sample() < audio_len && seg.einx < MAX_INTERVAL_CODE;
    let widened = (seg.binx - head as u32, seg.einx + tail as u32);
    let mut attempts = vec![widened];
    if widened != (seg.binx, seg.einx) {
        attempts.push((seg.binx, seg.einx));
    }
    let mut last = String::new();
    for (binx, einx) in attempts {
        let payload = Vp1Payload::new(seg.server_code, binx).map_err(|e| e.to_string())?;
        let url = build_recovery_url(payload, &ctx.base_domain, Some(einx));
        match ctx.recovery.recover(&url) {
            Ok(response) if response.descriptor.coverage_gap => last = format!("{url}: coverage gap"),
            Ok(response) if response.descriptor.server_code != seg.server_code => {
                last = format!("{url}: response names server code {}", response.descriptor.server_code)
            }
            Ok(response) => {
                for e in &response.descriptor.entries {
                    response.manifest_store(e).map_err(|err| format!("{url}: {}: {err}", e.dhs_id))?;
                }
                return Ok(Retrieved { seg: *seg, host: host.clone(), binx, einx, response });
            }
            Err(RecoveryError::NotFound) => last = format!("{url}: not found"),
            Err(e) => return Err(format!("{url}: {e}")),
        }
    }
    Err(last)
}

/// 3-6: every covering manifest is trusted, its signer is authorized for the
/// authority that served it and it binds the segment's server code.
fn check_signatures(trust: &TrustList, r: &Retrieved) -> Result<(), String> {
    let entries = r.response.descriptor.entries.iter().filter(|e| e.first_interval_code <= r.einx && e.last_interval_code >= r.binx);
    for e in entries {
        let store = r.response.manifest_store(e).map_err(|err| err.to_string())?;
        for m in &store.manifests {
            let who = m.distributor_id();
            match verify_manifest(m, trust) {
                TrustVerdict::Trusted(_) => {}
                v => return Err(format!("{}: signature of '{who}' is not an approved broadcaster's ({v:?})", e.dhs_id)),
            }
            if !trust.authorizes(who, &r.host) {
                return Err(format!("{}: '{who}' is not authorized to publish on {}", e.dhs_id, r.host));
            }
            let wm = m.soft_watermark().map_err(|err| format!("{}: {err}", e.dhs_id))?;
            if wm.server_code != r.seg.server_code {
                return Err(format!("{}: manifest binds server code {}", e.dhs_id, wm.server_code));
            }
        }
    }
    Ok(())
}

// -------------------- 3-7: essence against authenticated replicas --------------------

#[derive(Default)]
struct ReplicaCache {
    replicas: HashMap<String, Result<MediaObject, String>>,
}

impl ReplicaCache {
    fn get(&mut self, uri: &str, assets: &dyn AssetFetcher) -> Result<&MediaObject, String> {
        self.replicas
            .entry(uri.to_string())
            .or_insert_with(|| {
                let bytes = assets.fetch_asset(uri).map_err(|e| format!("{uri}: {e}"))?;
                parse_media(&bytes).map_err(|e| format!("{uri}: {e}"))
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// Replica essence whose fragments verified against their manifests, on the
/// broadcast timeline.
#[derive(Default)]
struct AuthenticView {
    /// (first global sample, PCM), sorted and non-overlapping.
    audio: Vec<(i64, Vec<i16>)>,
    frames: HashMap<u64, Vec<u8>>,
}

impl AuthenticView {
    fn sample(&self, g: i64) -> Option<i16> {
        let i = self.audio.partition_point(|(s, _)| *s <= g).checked_sub(1)?;
        let (s, pcm) = &self.audio[i];
        pcm.get((g - s) as usize).copied()
    }

    fn build(
        dhs: &[RecoveredDhs],
        from: i64,
        to: i64,
        assets: &dyn AssetFetcher,
        cache: &mut ReplicaCache,
    ) -> Result<Self, String> {
        let rate = AUDIO_SAMPLE_RATE as f64;
        let mut view = AuthenticView::default();
        for d in dhs {
            let mut s = d.time_of(d.watermark.binx).max(from as f64 / rate);
            let mut e = d.time_of(d.watermark.einx + 1).min(to as f64 / rate);
            let replica = cache.get(&d.asset.uri, assets)?;
            let Some((rs, re)) = replica.time_span() else { continue };
            s = s.max(rs);
            e = e.min(re);
            if s >= e {
                continue;
            }
            let sliced = slice_fragments(replica, s, e).map_err(|err| format!("{}: {err}", d.dhs_id()))?;
            match validate_binding(&d.manifest, &sliced, None) {
                Ok(v) if v.is_match() => {}
                Ok(v) => return Err(format!("replica {} does not match its manifest: {v:?}", d.dhs_id())),
                Err(err) => return Err(format!("replica {}: {err}", d.dhs_id())),
            }
            if let Some(track) = sliced.audio_track().map(|t| t.track_id) {
                for f in sliced.track_fragments(track) {
                    view.audio.push((f.base_media_decode_time as i64, pcm_from_bytes(&f.sample_data)));
                }
            }
            for f in video_frames(&sliced) {
                if f.ticks % VIDEO_FRAME_TICKS as u64 == 0 {
                    view.frames.insert(f.ticks / VIDEO_FRAME_TICKS as u64, f.data);
                }
            }
        }
        view.audio.sort_by_key(|c| c.0);
        Ok(view)
    }
}

struct SegmentCheck {
    /// Global sample index of uploaded sample 0 under this segment's alignment.
    offset: i64,
    /// Broadcast seconds covered by the segment's share of the upload.
    window: (f64, f64),
    distributor: String,
    result: Result<(), String>,
}

fn verify_content(
    run: &Run<'_>,
    retrieved: &[Retrieved],
    audio_start: u64,
    pcm: &[i16],
    cache: &mut ReplicaCache,
) -> Vec<Result<SegmentCheck, String>> {
    let n = retrieved.len();
    // A cell that abuts its predecessor may straddle a phase-aligned splice
    // and still decode, so it is checked like a splice gap.
    let core_start: Vec<usize> = (0..n)
        .map(|i| {
            let seg = &retrieved[i].seg;
            let abuts = i > 0 && retrieved[i - 1].seg.end_sample() == seg.first_cell_sample;
            if abuts { (seg.first_cell_sample + SAMPLES_PER_CELL).min(seg.end_sample()) } else { seg.first_cell_sample }
        })
        .collect();
    // Uploaded sample range owned by segment i; neighbours share the splice gap.
    let bounds: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let lo = if i == 0 { 0 } else { retrieved[i - 1].seg.end_sample() };
            let hi = if i + 1 == n { pcm.len() } else { core_start[i + 1] };
            (lo, hi)
        })
        .collect();

    let mut prepared: Vec<Result<(i64, AuthenticView, String), String>> = Vec::new();
    for (r, &(lo, hi)) in retrieved.iter().zip(&bounds) {
        prepared.push((|| {
            let dhs = recovered_dhs(&r.response, r.binx, r.einx, run.ctx.trust).map_err(|e| e.to_string())?;
            let anchor = dhs
                .iter()
                .find(|d| (d.watermark.binx..=d.watermark.einx).contains(&r.seg.binx))
                .ok_or("no signed range holds the first complete cell")?;
            let offset = (anchor.time_of(r.seg.binx) * AUDIO_SAMPLE_RATE as f64).round() as i64
                - r.seg.first_cell_sample as i64;
            let view = AuthenticView::build(&dhs, offset + lo as i64, offset + hi as i64, run.ctx.assets, cache)?;
            Ok((offset, view, dhs[0].manifest.distributor_id().to_string()))
        })());
    }

    let matches = |i: usize, j: usize| match &prepared[i] {
        Ok((offset, view, _)) => view.sample(offset + j as i64) == Some(pcm[j]),
        Err(_) => false,
    };
    let mut failures: Vec<Vec<String>> = vec![Vec::new(); n];
    for i in 0..n {
        let seg = &retrieved[i].seg;
        if let Some(j) = (core_start[i]..seg.end_sample()).find(|&j| !matches(i, j)) {
            failures[i].push(format!("audio sample {j} differs from the replica"));
        }
    }
    // Head of the first segment, splice gaps, tail of the last.
    for gap in 0..=n {
        let (lo, hi) = match gap {
            0 => (0, core_start[0]),
            g if g == n => (retrieved[n - 1].seg.end_sample(), pcm.len()),
            g => (retrieved[g - 1].seg.end_sample(), core_start[g]),
        };
        let before = if gap > 0 { (lo..hi).take_while(|&j| matches(gap - 1, j)).count() } else { 0 };
        let after = if gap < n { (lo..hi).rev().take_while(|&j| matches(gap, j)).count() } else { 0 };
        if before + after < hi - lo {
            let msg = format!("audio samples {lo}..{hi} are not covered by the replica");
            if gap > 0 {
                failures[gap - 1].push(msg.clone());
            }
            if gap < n {
                failures[gap].push(msg);
            }
        }
    }
    for frame in video_frames(run.obj) {
        let units = frame_units(&frame, audio_start);
        let p = units.div_euclid(UNITS_PER_SAMPLE);
        let owners: Vec<usize> = (0..n)
            .filter(|&i| {
                let (lo, hi) = bounds[i];
                (i == 0 || p >= lo as i64) && (i + 1 == n || p < hi as i64)
            })
            .collect();
        let ok = owners.iter().any(|&i| match &prepared[i] {
            Ok((offset, view, _)) => frame_index(units + offset * UNITS_PER_SAMPLE)
                .and_then(|f| view.frames.get(&f))
                .is_some_and(|d| *d == frame.data),
            Err(_) => false,
        });
        if !ok {
            for i in owners {
                failures[i].push(format!("video frame at tick {} differs from the replica", frame.ticks));
            }
        }
    }

    prepared
        .into_iter()
        .zip(failures)
        .zip(&bounds)
        .map(|((p, mut fails), &(lo, hi))| {
            let (offset, _, distributor) = p?;
            fails.dedup();
            let rate = AUDIO_SAMPLE_RATE as f64;
            Ok(SegmentCheck {
                offset,
                window: ((offset + lo as i64) as f64 / rate, (offset + hi as i64) as f64 / rate),
                distributor,
                result: if fails.is_empty() { Ok(()) } else { Err(fails.join("; ")) },
            })
        })
        .collect()
}

// -------------------- 4-8 to 4-11 --------------------

fn canonical_path(run: &mut Run<'_>, retrieved: &[Retrieved], windows: &[Option<(f64, f64)>]) {
    let trail_so_far = |run: &Run<'_>| run.steps.iter().map(|s| s.step).collect::<Vec<_>>();
    let Some(decision) = run.policy.decision() else {
        run.fail(StepId::CanonicalDecision, "waiting for the approval hook");
        let trail = trail_so_far(run);
        run.action = Some(pending_approval(&object_id(run.obj), run.policy, &trail));
        return;
    };
    run.pass(StepId::CanonicalDecision);
    if !decision {
        run.fail(StepId::PerformCanonical, "canonical processing declined");
        return;
    }
    run.pass(StepId::PerformCanonical);

    let mut clips = Vec::new();
    for (r, window) in retrieved.iter().zip(windows) {
        match produce_canonical_clip(&r.response, r.binx, r.einx, *window, run.ctx.assets, run.ctx.trust) {
            Ok(c) => clips.push(c),
            Err(PipelineError::CanonicalValidationError(m)) => {
                run.pass(StepId::CanonicalRetrieved);
                run.fail(StepId::CanonicalValidated, m);
                return;
            }
            Err(e) => {
                run.fail(StepId::CanonicalRetrieved, e.to_string());
                return;
            }
        }
    }
    run.pass(StepId::CanonicalRetrieved);

    // The manifests retrieved at 3-5 must validate the canonical content.
    for (r, clip) in retrieved.iter().zip(&clips) {
        let store = ManifestStore { manifests: clip.manifests.clone(), active: 0 };
        let from_response = r
            .response
            .descriptor
            .entries
            .iter()
            .filter_map(|e| r.response.manifest_store(e).ok())
            .flat_map(|s| s.manifests)
            .collect::<Vec<_>>();
        if let Some(m) = clip.manifests.iter().find(|m| !from_response.contains(m)) {
            run.fail(StepId::CanonicalValidated, format!("manifest of '{}' was not retrieved", m.distributor_id()));
            return;
        }
        match validate_store_binding(&store, &clip.media) {
            Ok(v) if v.is_match() => {}
            Ok(v) => {
                run.fail(StepId::CanonicalValidated, format!("{v:?}"));
                return;
            }
            Err(e) => {
                run.fail(StepId::CanonicalValidated, e.to_string());
                return;
            }
        }
    }
    run.pass(StepId::CanonicalValidated);

    for (report, clip) in run.segments.iter().zip(&clips) {
        if let Some(start) = report.clip_start {
            if let Ok(c) = compare_assets(run.obj, &clip.media, start) {
                run.comparisons.push(c);
            }
        }
    }
    let ids: Vec<String> = clips.iter().map(|c| object_id(&c.media)).collect();
    let trail = trail_so_far(run);
    let input =
        PolicyInput { uploaded_id: &object_id(run.obj), canonical_ids: &ids, comparisons: &run.comparisons, trail: &trail };
    run.action = apply_policy(input, run.policy).ok();
    run.canonical = clips;
}

#[cfg(test)]
mod tests;
