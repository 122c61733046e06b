//! Byte-level comparison of an uploaded object with canonical content.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::binding::sha256;
use crate::bmff::{write_media, MediaObject, AUDIO_SAMPLE_RATE};
use crate::pipeline::{audio_pcm, video_frames, VideoFrame};

use super::ValidatorError;

/// 1/720000 s: integral for both 48 kHz samples and 90 kHz ticks.
pub(crate) const UNITS_PER_SAMPLE: i64 = 15;
pub(crate) const UNITS_PER_TICK: i64 = 8;
pub(crate) const UNITS_PER_FRAME: i64 = 28_800;

/// Stable identifier of a media object: the SHA-256 of its serialization.
pub fn object_id(obj: &MediaObject) -> String {
    format!("sha256:{}", hex::encode(sha256(&write_media(obj))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrackDiff {
    pub track: String,
    pub compared_bytes: u64,
    pub differing_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ComparisonReport {
    /// Canonical duration minus uploaded duration.
    pub duration_delta_seconds: f64,
    pub matching_essence_byte_ratio: f64,
    pub overlap_bytes: u64,
    pub tracks: Vec<TrackDiff>,
}

/// Frame index on the broadcast timeline for a decode time in units, when it
/// lies within one tick of a frame boundary.
pub(crate) fn frame_index(units: i64) -> Option<u64> {
    if units < 0 {
        return None;
    }
    let f = (units + UNITS_PER_FRAME / 2) / UNITS_PER_FRAME;
    ((units - f * UNITS_PER_FRAME).abs() <= UNITS_PER_TICK).then_some(f as u64)
}

/// Decode time of a frame in units relative to the object's first audio
/// sample.
pub(crate) fn frame_units(frame: &VideoFrame, audio_start: u64) -> i64 {
    frame.ticks as i64 * UNITS_PER_TICK - audio_start as i64 * UNITS_PER_SAMPLE
}

fn audio_seconds(obj: &MediaObject) -> f64 {
    match audio_pcm(obj) {
        Some((_, pcm)) => pcm.len() as f64 / AUDIO_SAMPLE_RATE as f64,
        None => obj.duration(),
    }
}

/// Compares essence over the overlap of the two objects. `alignment` is the
/// broadcast media time of the uploaded object's first audio sample; the
/// canonical object carries broadcast decode times.
pub fn compare_assets(
    uploaded: &MediaObject,
    canonical: &MediaObject,
    alignment: f64,
) -> Result<ComparisonReport, ValidatorError> {
    let shift = (alignment * AUDIO_SAMPLE_RATE as f64).round() as i64;
    let mut tracks = Vec::new();

    let up_audio = audio_pcm(uploaded);
    let up_start = up_audio.as_ref().map_or(0, |a| a.0);
    if let (Some((_, up)), Some((c0, can))) = (&up_audio, audio_pcm(canonical)) {
        let c0 = c0 as i64;
        let lo = shift.max(c0);
        let hi = (shift + up.len() as i64).min(c0 + can.len() as i64);
        let mut diff = TrackDiff { track: "audio".into(), compared_bytes: 0, differing_bytes: 0 };
        for g in lo..hi {
            let (a, b) = (up[(g - shift) as usize].to_le_bytes(), can[(g - c0) as usize].to_le_bytes());
            diff.compared_bytes += 2;
            diff.differing_bytes += a.iter().zip(&b).filter(|(x, y)| x != y).count() as u64;
        }
        tracks.push(diff);
    }

    let canon_frames: BTreeMap<u64, VideoFrame> = video_frames(canonical)
        .into_iter()
        .filter_map(|f| frame_index(f.ticks as i64 * UNITS_PER_TICK).map(|i| (i, f)))
        .collect();
    let mut diff = TrackDiff { track: "video".into(), compared_bytes: 0, differing_bytes: 0 };
    for f in video_frames(uploaded) {
        let Some(c) = frame_index(frame_units(&f, up_start) + shift * UNITS_PER_SAMPLE).and_then(|i| canon_frames.get(&i))
        else {
            continue;
        };
        let compared = f.data.len().max(c.data.len()) as u64;
        let equal = f.data.iter().zip(&c.data).filter(|(x, y)| x == y).count() as u64;
        diff.compared_bytes += compared;
        diff.differing_bytes += compared - equal;
    }
    if diff.compared_bytes > 0 || !canon_frames.is_empty() {
        tracks.push(diff);
    }

    let overlap: u64 = tracks.iter().map(|t| t.compared_bytes).sum();
    if overlap == 0 {
        return Err(ValidatorError::NoOverlap);
    }
    let differing: u64 = tracks.iter().map(|t| t.differing_bytes).sum();
    Ok(ComparisonReport {
        duration_delta_seconds: audio_seconds(canonical) - audio_seconds(uploaded),
        matching_essence_byte_ratio: (overlap - differing) as f64 / overlap as f64,
        overlap_bytes: overlap,
        tracks,
    })
}
