//! Minimal ISOBMFF-style container layer.
//!
//! Every box is `size:u32 | type:4cc | payload`, with `size == 1` signalling
//! a 64-bit `largesize` after the type. The grammar used for media objects:
//!
//! ```text
//! ftyp   major "PMF4" | minor u32 | kind "frag" / "mono"
//! pmst   container-level manifest store (optional)
//! init   one per track: tkhd [unknown..] [prov]
//! moof   one per fragment: mfhd tfhd tfdt trun mdat [unknown..] [prov]
//! ```
//!
//! `prov` is always the last child of its parent. Unknown boxes are carried
//! opaquely and written back after the known children.

use std::ops::Range;

use crate::binding::Digest32;

pub type FourCc = [u8; 4];

pub const BRAND: FourCc = *b"PMF4";
pub const KIND_FRAGMENTED: FourCc = *b"frag";
pub const KIND_MONOLITHIC: FourCc = *b"mono";

pub const FTYP: FourCc = *b"ftyp";
pub const PMST: FourCc = *b"pmst";
pub const INIT: FourCc = *b"init";
pub const TKHD: FourCc = *b"tkhd";
pub const MOOF: FourCc = *b"moof";
pub const MFHD: FourCc = *b"mfhd";
pub const TFHD: FourCc = *b"tfhd";
pub const TFDT: FourCc = *b"tfdt";
pub const TRUN: FourCc = *b"trun";
pub const MDAT: FourCc = *b"mdat";
pub const PROV: FourCc = *b"prov";

/// Codec tag of the 48 kHz signed 16-bit little-endian mono PCM track.
pub const CODEC_PCM: FourCc = *b"lpcm";
/// Codec tag of the opaque per-frame video blob track.
pub const CODEC_VIDEO_BLOB: FourCc = *b"vblb";
pub const HANDLER_SOUND: FourCc = *b"soun";
pub const HANDLER_VIDEO: FourCc = *b"vide";

pub const AUDIO_SAMPLE_RATE: u32 = 48_000;
pub const VIDEO_TIMESCALE: u32 = 90_000;
pub const VIDEO_FPS: u32 = 25;
pub const VIDEO_FRAME_TICKS: u32 = VIDEO_TIMESCALE / VIDEO_FPS;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BmffError {
    #[error("empty input")]
    EmptyInput,
    #[error("truncated input at offset {0}")]
    TruncatedInput(usize),
    #[error("malformed box: {0}")]
    MalformedBox(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("range [{start}, {end}) outside media span [{min}, {max}]")]
    RangeOutOfBounds { start: f64, end: f64, min: f64, max: f64 },
    #[error("provenance payload must not be empty")]
    EmptyProvenance,
}

pub fn fourcc_str(code: &FourCc) -> String {
    String::from_utf8_lossy(code).into_owned()
}

// -------------------- generic boxes --------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoxBody {
    Data(Vec<u8>),
    Children(Vec<BoxNode>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxNode {
    pub box_type: FourCc,
    pub body: BoxBody,
}

impl BoxNode {
    pub fn data(box_type: FourCc, data: Vec<u8>) -> Self {
        BoxNode { box_type, body: BoxBody::Data(data) }
    }

    pub fn container(box_type: FourCc, children: Vec<BoxNode>) -> Self {
        BoxNode { box_type, body: BoxBody::Children(children) }
    }

    fn payload_len(&self) -> u64 {
        match &self.body {
            BoxBody::Data(d) => d.len() as u64,
            BoxBody::Children(c) => c.iter().map(BoxNode::size).sum(),
        }
    }

    /// Header plus payload length in bytes.
    pub fn size(&self) -> u64 {
        let payload = self.payload_len();
        if payload + 8 > u32::MAX as u64 {
            payload + 16
        } else {
            payload + 8
        }
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        let size = self.size();
        if size > u32::MAX as u64 {
            out.extend_from_slice(&1u32.to_be_bytes());
            out.extend_from_slice(&self.box_type);
            out.extend_from_slice(&size.to_be_bytes());
        } else {
            out.extend_from_slice(&(size as u32).to_be_bytes());
            out.extend_from_slice(&self.box_type);
        }
        match &self.body {
            BoxBody::Data(d) => out.extend_from_slice(d),
            BoxBody::Children(children) => children.iter().for_each(|c| c.write_to(out)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size() as usize);
        self.write_to(&mut out);
        out
    }

    pub fn children(&self) -> &[BoxNode] {
        match &self.body {
            BoxBody::Children(c) => c,
            BoxBody::Data(_) => &[],
        }
    }

    pub fn payload(&self) -> Option<&[u8]> {
        match &self.body {
            BoxBody::Data(d) => Some(d),
            BoxBody::Children(_) => None,
        }
    }
}

/// A box located in a byte buffer: type plus header and payload ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxSpan {
    pub box_type: FourCc,
    pub range: Range<usize>,
    pub payload: Range<usize>,
}

/// Walks the boxes that tile `buf[range]` without descending into them.
pub fn scan_boxes(buf: &[u8], range: Range<usize>) -> Result<Vec<BoxSpan>, BmffError> {
    let mut spans = Vec::new();
    let mut pos = range.start;
    while pos < range.end {
        let remaining = range.end - pos;
        if remaining < 8 {
            return Err(BmffError::TruncatedInput(pos));
        }
        let size32 = u32::from_be_bytes(buf[pos..pos + 4].try_into().unwrap()) as u64;
        let box_type: FourCc = buf[pos + 4..pos + 8].try_into().unwrap();
        let (size, header) = match size32 {
            0 => {
                return Err(BmffError::MalformedBox(format!(
                    "'{}' at {pos}: open-ended size is not supported",
                    fourcc_str(&box_type)
                )))
            }
            1 => {
                if remaining < 16 {
                    return Err(BmffError::TruncatedInput(pos));
                }
                (u64::from_be_bytes(buf[pos + 8..pos + 16].try_into().unwrap()), 16u64)
            }
            s => (s, 8u64),
        };
        if size < header {
            return Err(BmffError::MalformedBox(format!(
                "'{}' at {pos}: size {size} smaller than its header",
                fourcc_str(&box_type)
            )));
        }
        if size > remaining as u64 {
            return Err(BmffError::MalformedBox(format!(
                "'{}' at {pos}: size {size} overruns the {remaining} remaining bytes",
                fourcc_str(&box_type)
            )));
        }
        let end = pos + size as usize;
        spans.push(BoxSpan { box_type, range: pos..end, payload: pos + header as usize..end });
        pos = end;
    }
    Ok(spans)
}

/// Parses a sequence of boxes, descending into types for which
/// `is_container` returns true.
pub fn parse_boxes(buf: &[u8], is_container: fn(&FourCc) -> bool) -> Result<Vec<BoxNode>, BmffError> {
    parse_range(buf, 0..buf.len(), is_container)
}

fn parse_range(
    buf: &[u8],
    range: Range<usize>,
    is_container: fn(&FourCc) -> bool,
) -> Result<Vec<BoxNode>, BmffError> {
    scan_boxes(buf, range)?
        .into_iter()
        .map(|span| {
            let body = if is_container(&span.box_type) {
                BoxBody::Children(parse_range(buf, span.payload.clone(), is_container)?)
            } else {
                BoxBody::Data(buf[span.payload].to_vec())
            };
            Ok(BoxNode { box_type: span.box_type, body })
        })
        .collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BmffError> {
        if self.buf.len() - self.pos < n {
            return Err(BmffError::MalformedBox(format!("'{}' payload too short", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, BmffError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BmffError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fourcc(&mut self) -> Result<FourCc, BmffError> {
        Ok(self.take(4)?.try_into().unwrap())
    }

    fn finish(self) -> Result<(), BmffError> {
        if self.pos != self.buf.len() {
            return Err(BmffError::MalformedBox(format!("'{}' has trailing bytes", self.what)));
        }
        Ok(())
    }
}

// -------------------- media model --------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MediaKind {
    Fragmented,
    Monolithic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitSegment {
    pub track_id: u32,
    pub timescale: u32,
    pub codec: FourCc,
    pub handler: FourCc,
    pub extra: Vec<BoxNode>,
    pub provenance: Option<Vec<u8>>,
}

impl InitSegment {
    pub fn new(track_id: u32, timescale: u32, codec: FourCc, handler: FourCc) -> Self {
        InitSegment { track_id, timescale, codec, handler, extra: Vec::new(), provenance: None }
    }

    pub fn audio(track_id: u32) -> Self {
        Self::new(track_id, AUDIO_SAMPLE_RATE, CODEC_PCM, HANDLER_SOUND)
    }

    pub fn video(track_id: u32) -> Self {
        Self::new(track_id, VIDEO_TIMESCALE, CODEC_VIDEO_BLOB, HANDLER_VIDEO)
    }

    pub fn is_audio(&self) -> bool {
        self.codec == CODEC_PCM
    }

    pub fn to_box(&self) -> BoxNode {
        let mut tkhd = Vec::with_capacity(16);
        tkhd.extend_from_slice(&self.track_id.to_be_bytes());
        tkhd.extend_from_slice(&self.timescale.to_be_bytes());
        tkhd.extend_from_slice(&self.codec);
        tkhd.extend_from_slice(&self.handler);
        let mut children = vec![BoxNode::data(TKHD, tkhd)];
        children.extend(self.extra.iter().cloned());
        if let Some(p) = &self.provenance {
            children.push(BoxNode::data(PROV, p.clone()));
        }
        BoxNode::container(INIT, children)
    }

    pub fn from_box(node: &BoxNode) -> Result<Self, BmffError> {
        let children = node.children();
        let (tkhd, rest) = children
            .split_first()
            .filter(|(first, _)| first.box_type == TKHD)
            .ok_or_else(|| BmffError::MalformedBox("init segment must start with 'tkhd'".into()))?;
        let mut r = Reader::new(tkhd.payload().unwrap_or_default(), "tkhd");
        let mut init = InitSegment::new(r.u32()?, r.u32()?, r.fourcc()?, r.fourcc()?);
        r.finish()?;
        let (extra, provenance) = split_provenance(rest)?;
        init.extra = extra;
        init.provenance = provenance;
        Ok(init)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub duration: u32,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub track_id: u32,
    pub sequence_number: u32,
    pub base_media_decode_time: u64,
    pub samples: Vec<Sample>,
    pub sample_data: Vec<u8>,
    pub extra: Vec<BoxNode>,
    pub provenance: Option<Vec<u8>>,
}

impl Fragment {
    pub fn new(
        track_id: u32,
        sequence_number: u32,
        base_media_decode_time: u64,
        samples: Vec<Sample>,
        sample_data: Vec<u8>,
    ) -> Self {
        Fragment {
            track_id,
            sequence_number,
            base_media_decode_time,
            samples,
            sample_data,
            extra: Vec::new(),
            provenance: None,
        }
    }

    pub fn duration_ticks(&self) -> u64 {
        self.samples.iter().map(|s| s.duration as u64).sum()
    }

    pub fn end_ticks(&self) -> u64 {
        self.base_media_decode_time + self.duration_ticks()
    }

    /// Byte ranges of each sample within `sample_data`, with its decode time.
    pub fn sample_spans(&self) -> impl Iterator<Item = (u64, Range<usize>)> + '_ {
        let mut time = self.base_media_decode_time;
        let mut offset = 0usize;
        self.samples.iter().map(move |s| {
            let span = (time, offset..offset + s.size as usize);
            time += s.duration as u64;
            offset += s.size as usize;
            span
        })
    }

    pub fn to_box(&self) -> BoxNode {
        let mut trun = Vec::with_capacity(4 + 8 * self.samples.len());
        trun.extend_from_slice(&(self.samples.len() as u32).to_be_bytes());
        for s in &self.samples {
            trun.extend_from_slice(&s.duration.to_be_bytes());
            trun.extend_from_slice(&s.size.to_be_bytes());
        }
        let mut children = vec![
            BoxNode::data(MFHD, self.sequence_number.to_be_bytes().to_vec()),
            BoxNode::data(TFHD, self.track_id.to_be_bytes().to_vec()),
            BoxNode::data(TFDT, self.base_media_decode_time.to_be_bytes().to_vec()),
            BoxNode::data(TRUN, trun),
            BoxNode::data(MDAT, self.sample_data.clone()),
        ];
        children.extend(self.extra.iter().cloned());
        if let Some(p) = &self.provenance {
            children.push(BoxNode::data(PROV, p.clone()));
        }
        BoxNode::container(MOOF, children)
    }

    pub fn from_box(node: &BoxNode) -> Result<Self, BmffError> {
        let children = node.children();
        let expected = [MFHD, TFHD, TFDT, TRUN, MDAT];
        if children.len() < expected.len()
            || children.iter().zip(expected.iter()).any(|(c, t)| &c.box_type != t)
        {
            return Err(BmffError::MalformedBox(
                "fragment must start with mfhd, tfhd, tfdt, trun, mdat".into(),
            ));
        }
        let payload = |i: usize| children[i].payload().unwrap_or_default();
        let mut r = Reader::new(payload(0), "mfhd");
        let sequence_number = r.u32()?;
        r.finish()?;
        let mut r = Reader::new(payload(1), "tfhd");
        let track_id = r.u32()?;
        r.finish()?;
        let mut r = Reader::new(payload(2), "tfdt");
        let base_media_decode_time = r.u64()?;
        r.finish()?;
        let mut r = Reader::new(payload(3), "trun");
        let count = r.u32()? as usize;
        let mut samples = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            samples.push(Sample { duration: r.u32()?, size: r.u32()? });
        }
        r.finish()?;
        let (extra, provenance) = split_provenance(&children[5..])?;
        Ok(Fragment {
            track_id,
            sequence_number,
            base_media_decode_time,
            samples,
            sample_data: payload(4).to_vec(),
            extra,
            provenance,
        })
    }

    /// Serialized bytes of the fragment box.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_box().to_bytes()
    }
}

fn split_provenance(rest: &[BoxNode]) -> Result<(Vec<BoxNode>, Option<Vec<u8>>), BmffError> {
    let mut extra = Vec::new();
    let mut provenance = None;
    for (i, child) in rest.iter().enumerate() {
        if child.box_type == PROV {
            if i != rest.len() - 1 {
                return Err(BmffError::MalformedBox("'prov' must be the last child".into()));
            }
            provenance = Some(child.payload().unwrap_or_default().to_vec());
        } else {
            extra.push(child.clone());
        }
    }
    Ok((extra, provenance))
}

/// Something that can carry exactly one provenance box.
pub trait ProvenanceTarget {
    fn provenance(&self) -> Option<&[u8]>;
    fn set_provenance(&mut self, payload: Option<Vec<u8>>);
}

impl ProvenanceTarget for InitSegment {
    fn provenance(&self) -> Option<&[u8]> {
        self.provenance.as_deref()
    }
    fn set_provenance(&mut self, payload: Option<Vec<u8>>) {
        self.provenance = payload;
    }
}

impl ProvenanceTarget for Fragment {
    fn provenance(&self) -> Option<&[u8]> {
        self.provenance.as_deref()
    }
    fn set_provenance(&mut self, payload: Option<Vec<u8>>) {
        self.provenance = payload;
    }
}

/// Stores `payload` as the target's provenance box, replacing any previous one.
pub fn attach_provenance_box<T: ProvenanceTarget>(mut target: T, payload: Vec<u8>) -> Result<T, BmffError> {
    if payload.is_empty() {
        return Err(BmffError::EmptyProvenance);
    }
    target.set_provenance(Some(payload));
    Ok(target)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaObject {
    pub kind: MediaKind,
    pub init_segments: Vec<InitSegment>,
    pub fragments: Vec<Fragment>,
    pub container_manifest: Option<Vec<u8>>,
    pub extra: Vec<BoxNode>,
}

fn is_media_container(t: &FourCc) -> bool {
    *t == INIT || *t == MOOF
}

impl MediaObject {
    pub fn new(kind: MediaKind, init_segments: Vec<InitSegment>, fragments: Vec<Fragment>) -> Self {
        MediaObject { kind, init_segments, fragments, container_manifest: None, extra: Vec::new() }
    }

    pub fn init_for(&self, track_id: u32) -> Option<&InitSegment> {
        self.init_segments.iter().find(|i| i.track_id == track_id)
    }

    pub fn audio_track(&self) -> Option<&InitSegment> {
        self.init_segments.iter().find(|i| i.is_audio())
    }

    pub fn track_fragments(&self, track_id: u32) -> impl Iterator<Item = &Fragment> + '_ {
        self.fragments.iter().filter(move |f| f.track_id == track_id)
    }

    /// Media-time span of a track in seconds.
    pub fn track_span(&self, track_id: u32) -> Option<(f64, f64)> {
        let ts = self.init_for(track_id)?.timescale as f64;
        let mut frags = self.track_fragments(track_id).peekable();
        let start = frags.peek()?.base_media_decode_time;
        let end = frags.last()?.end_ticks();
        Some((start as f64 / ts, end as f64 / ts))
    }

    /// Union of all track spans.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        self.init_segments
            .iter()
            .filter_map(|i| self.track_span(i.track_id))
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    pub fn duration(&self) -> f64 {
        self.time_span().map(|(s, e)| e - s).unwrap_or(0.0)
    }

    /// Checks the structural invariants of the object.
    pub fn check_invariants(&self) -> Result<(), BmffError> {
        let bad = |m: String| Err(BmffError::InvariantViolation(m));
        if self.init_segments.is_empty() {
            return bad("media object has no init segment".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for init in &self.init_segments {
            if init.timescale == 0 {
                return bad(format!("track {} has timescale 0", init.track_id));
            }
            if !seen.insert(init.track_id) {
                return bad(format!("duplicate init segment for track {}", init.track_id));
            }
        }
        let mut max_frag_seconds = 0f64;
        for init in &self.init_segments {
            let frags: Vec<&Fragment> = self.track_fragments(init.track_id).collect();
            if self.kind == MediaKind::Monolithic && frags.len() != 1 {
                return bad(format!(
                    "monolithic track {} has {} essence regions",
                    init.track_id,
                    frags.len()
                ));
            }
            for f in &frags {
                let declared: u64 = f.samples.iter().map(|s| s.size as u64).sum();
                if declared != f.sample_data.len() as u64 {
                    return bad(format!(
                        "fragment {} of track {} declares {declared} sample bytes but carries {}",
                        f.sequence_number,
                        f.track_id,
                        f.sample_data.len()
                    ));
                }
                max_frag_seconds = max_frag_seconds.max(f.duration_ticks() as f64 / init.timescale as f64);
            }
            for pair in frags.windows(2) {
                if pair[1].sequence_number <= pair[0].sequence_number {
                    return bad(format!("track {} sequence numbers not increasing", init.track_id));
                }
                if pair[1].base_media_decode_time != pair[0].end_ticks() {
                    return bad(format!(
                        "track {} fragment {} does not start where its predecessor ends",
                        init.track_id, pair[1].sequence_number
                    ));
                }
            }
        }
        if let Some(f) = self.fragments.iter().find(|f| self.init_for(f.track_id).is_none()) {
            return bad(format!("fragment for track {} has no init segment", f.track_id));
        }
        let spans: Vec<(f64, f64)> =
            self.init_segments.iter().filter_map(|i| self.track_span(i.track_id)).collect();
        if let (Some(first), true) = (spans.first(), self.kind == MediaKind::Fragmented) {
            let tolerance = max_frag_seconds + 1e-9;
            if spans.iter().any(|s| (s.0 - first.0).abs() > tolerance || (s.1 - first.1).abs() > tolerance) {
                return bad("tracks do not cover the same media-time span".into());
            }
        }
        Ok(())
    }

    /// Concatenated essence bytes of all fragments in object order.
    pub fn essence_bytes(&self) -> Vec<u8> {
        self.fragments.iter().flat_map(|f| f.sample_data.iter().copied()).collect()
    }
}

/// Serializes a media object. Output is a pure function of the object.
pub fn serialize_media(obj: &MediaObject) -> Result<Vec<u8>, BmffError> {
    obj.check_invariants()?;
    Ok(write_media(obj))
}

pub(crate) fn write_media(obj: &MediaObject) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ftyp = Vec::with_capacity(12);
    ftyp.extend_from_slice(&BRAND);
    ftyp.extend_from_slice(&1u32.to_be_bytes());
    ftyp.extend_from_slice(match obj.kind {
        MediaKind::Fragmented => &KIND_FRAGMENTED,
        MediaKind::Monolithic => &KIND_MONOLITHIC,
    });
    BoxNode::data(FTYP, ftyp).write_to(&mut out);
    if let Some(m) = &obj.container_manifest {
        BoxNode::data(PMST, m.clone()).write_to(&mut out);
    }
    for init in &obj.init_segments {
        init.to_box().write_to(&mut out);
    }
    for frag in &obj.fragments {
        frag.to_box().write_to(&mut out);
    }
    for b in &obj.extra {
        b.write_to(&mut out);
    }
    out
}

pub fn parse_media(bytes: &[u8]) -> Result<MediaObject, BmffError> {
    if bytes.is_empty() {
        return Err(BmffError::EmptyInput);
    }
    let boxes = parse_boxes(bytes, is_media_container)?;
    let (ftyp, rest) = boxes.split_first().ok_or(BmffError::EmptyInput)?;
    if ftyp.box_type != FTYP {
        return Err(BmffError::MalformedBox("first box must be 'ftyp'".into()));
    }
    let mut r = Reader::new(ftyp.payload().unwrap_or_default(), "ftyp");
    if r.fourcc()? != BRAND {
        return Err(BmffError::MalformedBox("missing PMF4 brand".into()));
    }
    let _minor = r.u32()?;
    let kind = match &r.fourcc()? {
        k if *k == KIND_FRAGMENTED => MediaKind::Fragmented,
        k if *k == KIND_MONOLITHIC => MediaKind::Monolithic,
        k => return Err(BmffError::MalformedBox(format!("unknown kind '{}'", fourcc_str(k)))),
    };
    r.finish()?;

    let mut obj = MediaObject::new(kind, Vec::new(), Vec::new());
    for node in rest {
        match node.box_type {
            PMST if obj.container_manifest.is_none() => {
                obj.container_manifest = Some(node.payload().unwrap_or_default().to_vec())
            }
            INIT => obj.init_segments.push(InitSegment::from_box(node)?),
            MOOF => obj.fragments.push(Fragment::from_box(node)?),
            _ => obj.extra.push(node.clone()),
        }
    }
    Ok(obj)
}

/// Byte range of the container-level manifest box within serialized bytes.
pub fn container_manifest_range(bytes: &[u8]) -> Result<Option<Range<usize>>, BmffError> {
    Ok(scan_boxes(bytes, 0..bytes.len())?
        .into_iter()
        .find(|s| s.box_type == PMST)
        .map(|s| s.range))
}

/// Removes the container manifest and every provenance box. Essence is
/// left untouched.
pub fn strip_container_metadata(obj: &MediaObject) -> MediaObject {
    let mut out = obj.clone();
    out.container_manifest = None;
    out.init_segments.iter_mut().for_each(|i| i.provenance = None);
    out.fragments.iter_mut().for_each(|f| f.provenance = None);
    out
}

/// Keeps every fragment intersecting `[start, end)` seconds of media time,
/// on every track. Fragments are never cut.
pub fn slice_fragments(obj: &MediaObject, start: f64, end: f64) -> Result<MediaObject, BmffError> {
    let (min, max) = obj.time_span().unwrap_or((0.0, 0.0));
    const EPS: f64 = 1e-9;
    if start.is_nan() || end.is_nan() || start >= end || start < min - EPS || end > max + EPS {
        return Err(BmffError::RangeOutOfBounds { start, end, min, max });
    }
    let mut out = obj.clone();
    out.fragments.retain(|f| {
        let ts = obj.init_for(f.track_id).map(|i| i.timescale as f64).unwrap_or(1.0);
        let fs = f.base_media_decode_time as f64 / ts;
        let fe = f.end_ticks() as f64 / ts;
        fs < end - EPS && fe > start + EPS
    });
    Ok(out)
}

/// SHA-256 over the concatenated essence bytes, for essence-isolation checks.
pub fn essence_digest(obj: &MediaObject) -> Digest32 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for f in &obj.fragments {
        h.update(&f.sample_data);
    }
    h.finalize().into()
}
