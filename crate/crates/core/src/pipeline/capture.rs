//! The hostile capture path and plain re-containerization.

use crate::bmff::{
    slice_fragments, strip_container_metadata, Fragment, InitSegment, MediaKind, MediaObject, Sample,
    AUDIO_SAMPLE_RATE, VIDEO_TIMESCALE,
};
use crate::watermark::{pcm_from_bytes, pcm_to_bytes};

use super::{concat_replicas, DataHashSegment, PipelineError, AUDIO_TRACK, VIDEO_TRACK};

/// Time units per second exact for both 48 kHz samples and 90 kHz ticks.
pub(crate) const UNITS_PER_SECOND: u64 = 720_000;
pub(crate) const UNITS_PER_SAMPLE: u64 = UNITS_PER_SECOND / AUDIO_SAMPLE_RATE as u64;
pub(crate) const UNITS_PER_TICK: u64 = UNITS_PER_SECOND / VIDEO_TIMESCALE as u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrame {
    /// Decode time in 90 kHz ticks.
    pub ticks: u64,
    pub duration: u32,
    pub data: Vec<u8>,
}

/// Decode time of the first audio sample and the track's PCM, fragments
/// concatenated in order.
pub fn audio_pcm(obj: &MediaObject) -> Option<(u64, Vec<i16>)> {
    let track = obj.audio_track()?.track_id;
    let mut frags = obj.track_fragments(track).peekable();
    let start = frags.peek()?.base_media_decode_time;
    let bytes: Vec<u8> = frags.flat_map(|f| f.sample_data.iter().copied()).collect();
    Some((start, pcm_from_bytes(&bytes)))
}

/// Frames of the first non-audio track.
pub fn video_frames(obj: &MediaObject) -> Vec<VideoFrame> {
    let Some(track) = obj.init_segments.iter().find(|i| !i.is_audio()) else { return Vec::new() };
    obj.track_fragments(track.track_id)
        .flat_map(|f| {
            f.sample_spans()
                .zip(&f.samples)
                .map(|((ticks, range), s)| VideoFrame { ticks, duration: s.duration, data: f.sample_data[range].to_vec() })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn monolithic(audio_tfdt: u64, pcm: &[i16], video_tfdt: u64, frames: &[VideoFrame]) -> MediaObject {
    let mut inits = vec![InitSegment::audio(AUDIO_TRACK)];
    let mut frags = vec![Fragment::new(
        AUDIO_TRACK,
        1,
        audio_tfdt,
        vec![Sample { duration: pcm.len() as u32, size: 2 * pcm.len() as u32 }],
        pcm_to_bytes(pcm),
    )];
    if !frames.is_empty() {
        inits.push(InitSegment::video(VIDEO_TRACK));
        frags.push(Fragment::new(
            VIDEO_TRACK,
            1,
            video_tfdt,
            frames.iter().map(|f| Sample { duration: f.duration, size: f.data.len() as u32 }).collect(),
            frames.iter().flat_map(|f| f.data.iter().copied()).collect(),
        ));
    }
    MediaObject::new(MediaKind::Monolithic, inits, frags)
}

/// Re-muxes an object as a plain monolithic file: one essence region per
/// track, no manifest and no provenance boxes. Decode times are kept.
pub fn flatten_to_monolithic(obj: &MediaObject) -> Result<MediaObject, PipelineError> {
    let stripped = strip_container_metadata(obj);
    let (tfdt, pcm) = audio_pcm(&stripped)
        .ok_or_else(|| PipelineError::ConfigInvariantViolation("object has no audio track".into()))?;
    let frames = video_frames(&stripped);
    let out = monolithic(tfdt, &pcm, frames.first().map_or(0, |f| f.ticks), &frames);
    out.check_invariants()?;
    Ok(out)
}

/// Captures `[start, end)` seconds of broadcast media time from the given
/// replicas the way a hostile redistributor would: metadata stripped, audio
/// cut at the exact sample, video kept for frames starting inside the window,
/// and everything re-timed to start at zero in a monolithic file.
pub fn simulate_capture(dhs: &[DataHashSegment], start: f64, end: f64) -> Result<MediaObject, PipelineError> {
    capture_broadcast(&concat_replicas(dhs)?, start, end)
}

/// [`simulate_capture`] over an already concatenated broadcast timeline.
pub fn capture_broadcast(broadcast: &MediaObject, start: f64, end: f64) -> Result<MediaObject, PipelineError> {
    let whole = strip_container_metadata(broadcast);
    let sliced = slice_fragments(&whole, start, end)?;
    let (a0, pcm) = audio_pcm(&sliced)
        .ok_or_else(|| PipelineError::ConfigInvariantViolation("replica has no audio track".into()))?;
    let cs = (start * AUDIO_SAMPLE_RATE as f64).round() as u64;
    let ce = (end * AUDIO_SAMPLE_RATE as f64).round() as u64;
    let lo = (cs.max(a0) - a0) as usize;
    let hi = ((ce.max(a0) - a0) as usize).min(pcm.len());
    if lo >= hi {
        return Err(PipelineError::ConfigInvariantViolation(format!("capture [{start}, {end}) holds no audio")));
    }
    let (cs_u, ce_u) = (cs * UNITS_PER_SAMPLE, ce * UNITS_PER_SAMPLE);
    let frames: Vec<VideoFrame> = video_frames(&sliced)
        .into_iter()
        .filter(|f| (cs_u..ce_u).contains(&(f.ticks * UNITS_PER_TICK)))
        .collect();
    let video_tfdt = frames
        .first()
        .map_or(0, |f| ((f.ticks * UNITS_PER_TICK - cs_u) as f64 / UNITS_PER_TICK as f64).round() as u64);
    let out = monolithic(0, &pcm[lo..hi], video_tfdt, &frames);
    out.check_invariants()?;
    Ok(out)
}

/// Alters `count` audio samples at seeded positions by flipping bit 1. The
/// watermark LSBs survive; any hash over the essence does not.
pub fn perturb_audio(obj: &MediaObject, count: usize, seed: u64) -> MediaObject {
    let mut out = obj.clone();
    let Some(track) = out.audio_track().map(|i| i.track_id) else { return out };
    let total: usize = out.track_fragments(track).map(|f| f.sample_data.len() / 2).sum();
    if total == 0 {
        return out;
    }
    let mut state = seed;
    for _ in 0..count {
        state = super::splitmix64(state);
        let mut idx = (state % total as u64) as usize;
        for f in out.fragments.iter_mut().filter(|f| f.track_id == track) {
            let n = f.sample_data.len() / 2;
            if idx < n {
                f.sample_data[2 * idx] ^= 0x02;
                break;
            }
            idx -= n;
        }
    }
    out
}
