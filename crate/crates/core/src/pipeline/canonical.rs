//! Canonical clip reconstruction from a recovery response.

use crate::bmff::{attach_provenance_box, parse_media, slice_fragments, MediaKind, MediaObject};
use crate::manifest::{
    get_asset_reference, serialize_manifest_store, validate_binding, verify_manifest, AssetReference, Manifest,
    ManifestStore, SoftWatermarkBinding, TrustList, TrustVerdict,
};
use crate::recovery::{AssetFetcher, RecoveryResponse};
use crate::watermark::CELL_SECONDS;

use super::PipelineError;

/// A signed DHS manifest from a recovery response, with the signed facts the
/// timeline mapping relies on.
#[derive(Debug, Clone)]
pub struct RecoveredDhs {
    pub manifest: Manifest,
    pub watermark: SoftWatermarkBinding,
    pub asset: AssetReference,
    /// Broadcast media time at which `watermark.binx` begins.
    pub start: f64,
}

impl RecoveredDhs {
    /// Broadcast media time at which `code` begins.
    pub fn time_of(&self, code: u32) -> f64 {
        self.start + (code as f64 - self.watermark.binx as f64) * CELL_SECONDS
    }

    pub fn dhs_id(&self) -> String {
        self.asset.uri.rsplit('/').next().unwrap_or_default().to_string()
    }
}

/// The trusted DHS manifests covering `[binx, einx]`, in code order. Every
/// manifest must verify as trusted and their signed ranges must tile the
/// request without holes.
pub fn recovered_dhs(
    response: &RecoveryResponse,
    binx: u32,
    einx: u32,
    trust: &TrustList,
) -> Result<Vec<RecoveredDhs>, PipelineError> {
    let d = &response.descriptor;
    if d.coverage_gap {
        return Err(PipelineError::CoverageGap(format!("descriptor flags a gap in [{binx}, {einx}]")));
    }
    let mut out: Vec<RecoveredDhs> = Vec::new();
    for entry in d.entries.iter().filter(|e| e.first_interval_code <= einx && e.last_interval_code >= binx) {
        let store = response.manifest_store(entry).map_err(|e| PipelineError::CanonicalRetrieval(e.to_string()))?;
        let manifest = store.active_manifest().clone();
        match verify_manifest(&manifest, trust) {
            TrustVerdict::Trusted(_) => {}
            v => {
                return Err(PipelineError::CanonicalValidationError(format!("manifest for {}: {v:?}", entry.dhs_id)))
            }
        }
        let bad = |m: String| PipelineError::CanonicalValidationError(format!("manifest for {}: {m}", entry.dhs_id));
        let watermark = manifest.soft_watermark().map_err(|e| bad(e.to_string()))?;
        if watermark.server_code != d.server_code {
            return Err(bad(format!("signed server code {} differs from {}", watermark.server_code, d.server_code)));
        }
        let asset = get_asset_reference(&manifest).map_err(|e| bad(e.to_string()))?;
        let start = asset.media_time_start.ok_or_else(|| bad("asset reference has no start time".into()))?;
        out.push(RecoveredDhs { manifest, watermark, asset, start });
    }
    let mut next = binx as u64;
    for r in &out {
        if (r.watermark.binx as u64) > next || (r.watermark.einx as u64) < next {
            return Err(PipelineError::CoverageGap(format!("interval code {next} is not covered by a signed range")));
        }
        next = r.watermark.einx as u64 + 1;
    }
    if next <= einx as u64 {
        return Err(PipelineError::CoverageGap(format!("interval code {next} is not covered by a signed range")));
    }
    Ok(out)
}

/// Outcome of checking one replica fragment against its manifest.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct FragmentCheck {
    pub dhs_id: String,
    pub track_id: u32,
    pub sequence_number: u32,
    pub matched: bool,
}

#[derive(Debug, Clone)]
pub struct CanonicalClip {
    pub media: MediaObject,
    pub manifests: Vec<Manifest>,
    pub checks: Vec<FragmentCheck>,
    /// Broadcast media time span of the clip in seconds.
    pub start_time: f64,
    pub end_time: f64,
    pub binx: u32,
    pub einx: u32,
    pub distributor_id: String,
}

/// Reassembles the replica fragments covering `[binx, einx]` into one
/// fragmented object. `window`, in broadcast seconds, narrows the selection;
/// fragments are always taken whole. Every fragment must match its manifest.
/// The result embeds a store of all covering manifests, the first active.
pub fn produce_canonical_clip(
    response: &RecoveryResponse,
    binx: u32,
    einx: u32,
    window: Option<(f64, f64)>,
    fetcher: &dyn AssetFetcher,
    trust: &TrustList,
) -> Result<CanonicalClip, PipelineError> {
    let covering = recovered_dhs(response, binx, einx, trust)?;
    let mut inits = None;
    let mut fragments = Vec::new();
    let mut checks = Vec::new();
    let mut manifests = Vec::new();
    for r in &covering {
        let mut ts = r.time_of(binx.max(r.watermark.binx));
        let mut te = r.time_of(einx.min(r.watermark.einx) + 1);
        if let Some((ws, we)) = window {
            ts = ts.max(ws);
            te = te.min(we);
        }
        if ts >= te {
            continue;
        }
        let bytes = fetcher.fetch_asset(&r.asset.uri).map_err(|e| PipelineError::CanonicalRetrieval(e.to_string()))?;
        let replica = parse_media(&bytes).map_err(|e| PipelineError::CanonicalRetrieval(e.to_string()))?;
        let sliced = slice_fragments(&replica, ts, te)
            .map_err(|e| PipelineError::CanonicalValidationError(format!("{}: {e}", r.dhs_id())))?;
        for frag in &sliced.fragments {
            let single = MediaObject::new(MediaKind::Fragmented, sliced.init_segments.clone(), vec![frag.clone()]);
            let matched = matches!(validate_binding(&r.manifest, &single, None), Ok(v) if v.is_match());
            checks.push(FragmentCheck {
                dhs_id: r.dhs_id(),
                track_id: frag.track_id,
                sequence_number: frag.sequence_number,
                matched,
            });
        }
        inits.get_or_insert(sliced.init_segments);
        fragments.extend(sliced.fragments);
        manifests.push(r.manifest.clone());
    }
    if let Some(c) = checks.iter().find(|c| !c.matched) {
        return Err(PipelineError::CanonicalValidationError(format!(
            "fragment {} of track {} in {} does not match its manifest",
            c.sequence_number, c.track_id, c.dhs_id
        )));
    }
    let inits = inits.ok_or_else(|| PipelineError::CoverageGap("window selects no fragment".into()))?;
    let store = serialize_manifest_store(&ManifestStore { manifests: manifests.clone(), active: 0 })?;
    let inits = inits
        .into_iter()
        .map(|i| attach_provenance_box(i, store.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let media = MediaObject::new(MediaKind::Fragmented, inits, fragments);
    media.check_invariants()?;
    let (start_time, end_time) = media.time_span().unwrap_or((0.0, 0.0));
    Ok(CanonicalClip {
        distributor_id: manifests[0].distributor_id().to_string(),
        media,
        manifests,
        checks,
        start_time,
        end_time,
        binx,
        einx,
    })
}
