//! Simulated audio watermark channel carrying VP1 payloads.
//!
//! A cell is 90 bits sent MSB-first: a 24-bit sync word, the 50-bit payload
//! (31-bit server code then 19-bit interval code) and a CRC-16/CCITT-FALSE
//! over the 50 payload bits. Each bit occupies one 800-sample period and is
//! written into the least-significant bit of every sample in that period, so
//! a cell spans 72 000 samples (1.5 s at 48 kHz). Cell `k` of an embedding
//! starts at sample `72 000 * k` and carries interval code `start + k`.
//!
//! A bit is read only when all samples of its period agree, which locates
//! complete cells to the exact sample.
//!
//! Nothing here consults keys or trust lists: watermark data is untrusted.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingParams {
    pub sample_rate: u32,
    pub samples_per_bit: usize,
    pub sync_word: u32,
}

impl EmbeddingParams {
    pub const STANDARD: EmbeddingParams =
        EmbeddingParams { sample_rate: 48_000, samples_per_bit: 800, sync_word: 0xB5_9E27 };

    pub const fn samples_per_cell(&self) -> usize {
        self.samples_per_bit * CELL_BITS
    }

    pub fn cell_seconds(&self) -> f64 {
        self.samples_per_cell() as f64 / self.sample_rate as f64
    }
}

pub const SYNC_BITS: usize = 24;
pub const PAYLOAD_BITS: usize = 50;
pub const CRC_BITS: usize = 16;
pub const CELL_BITS: usize = SYNC_BITS + PAYLOAD_BITS + CRC_BITS;
pub const SERVER_CODE_BITS: u32 = 31;
pub const INTERVAL_CODE_BITS: u32 = 19;
pub const MAX_SERVER_CODE: u32 = (1 << SERVER_CODE_BITS) - 1;
pub const MAX_INTERVAL_CODE: u32 = (1 << INTERVAL_CODE_BITS) - 1;

pub const SAMPLES_PER_CELL: usize = EmbeddingParams::STANDARD.samples_per_cell();
/// Cell duration in milliseconds; exact.
pub const CELL_MS: u64 = 1500;
pub const CELL_SECONDS: f64 = 1.5;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WatermarkError {
    #[error("server code {0} exceeds 31 bits")]
    ServerCodeOutOfRange(u32),
    #[error("interval code {0} exceeds 19 bits")]
    IntervalCodeOutOfRange(u32),
    #[error("interval codes from {start} over {count} cells exceed 2^19-1")]
    IntervalOverflow { start: u32, count: usize },
    #[error("sync word not found")]
    BadSync,
    #[error("cell CRC mismatch")]
    CrcMismatch,
    #[error("need {needed} samples, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("anchor interval code {anchor} lies after segment start {binx}")]
    AnchorAfterSegment { anchor: u32, binx: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Vp1Payload {
    pub server_code: u32,
    pub interval_code: u32,
}

impl Vp1Payload {
    pub fn new(server_code: u32, interval_code: u32) -> Result<Self, WatermarkError> {
        if server_code > MAX_SERVER_CODE {
            return Err(WatermarkError::ServerCodeOutOfRange(server_code));
        }
        if interval_code > MAX_INTERVAL_CODE {
            return Err(WatermarkError::IntervalCodeOutOfRange(interval_code));
        }
        Ok(Vp1Payload { server_code, interval_code })
    }

    pub fn to_bits(self) -> u64 {
        ((self.server_code as u64) << INTERVAL_CODE_BITS) | self.interval_code as u64
    }

    pub fn from_bits(bits: u64) -> Self {
        Vp1Payload {
            server_code: ((bits >> INTERVAL_CODE_BITS) & MAX_SERVER_CODE as u64) as u32,
            interval_code: (bits & MAX_INTERVAL_CODE as u64) as u32,
        }
    }
}

/// One cell's bits, MSB-first: sync, payload, CRC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellBitstream(pub [bool; CELL_BITS]);

/// CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, unreflected) of a bit
/// sequence.
pub fn crc16_ccitt_bits(bits: impl IntoIterator<Item = bool>) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for bit in bits {
        let top = crc >> 15 == 1;
        crc <<= 1;
        if top != bit {
            crc ^= 0x1021;
        }
    }
    crc
}

/// CRC of the low `nbits` of `value`, MSB-first.
pub fn crc16_ccitt(value: u64, nbits: usize) -> u16 {
    crc16_ccitt_bits((0..nbits).rev().map(|i| (value >> i) & 1 == 1))
}

fn push_bits(out: &mut Vec<bool>, value: u64, n: usize) {
    out.extend((0..n).rev().map(|i| (value >> i) & 1 == 1));
}

fn read_bits(bits: &[bool]) -> u64 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
}

pub fn encode_cell(payload: Vp1Payload) -> CellBitstream {
    let value = payload.to_bits();
    let mut bits = Vec::with_capacity(CELL_BITS);
    push_bits(&mut bits, EmbeddingParams::STANDARD.sync_word as u64, SYNC_BITS);
    push_bits(&mut bits, value, PAYLOAD_BITS);
    push_bits(&mut bits, crc16_ccitt(value, PAYLOAD_BITS) as u64, CRC_BITS);
    CellBitstream(bits.try_into().unwrap())
}

pub fn decode_cell(cell: &CellBitstream) -> Result<Vp1Payload, WatermarkError> {
    let bits = &cell.0;
    if read_bits(&bits[..SYNC_BITS]) != EmbeddingParams::STANDARD.sync_word as u64 {
        return Err(WatermarkError::BadSync);
    }
    let value = read_bits(&bits[SYNC_BITS..SYNC_BITS + PAYLOAD_BITS]);
    let crc = read_bits(&bits[SYNC_BITS + PAYLOAD_BITS..]) as u16;
    if crc != crc16_ccitt(value, PAYLOAD_BITS) {
        return Err(WatermarkError::CrcMismatch);
    }
    Ok(Vp1Payload::from_bits(value))
}

fn check_codes(start: Vp1Payload, cell_count: usize) -> Result<(), WatermarkError> {
    Vp1Payload::new(start.server_code, start.interval_code)?;
    if cell_count > 0 && start.interval_code as u64 + cell_count as u64 - 1 > MAX_INTERVAL_CODE as u64 {
        return Err(WatermarkError::IntervalOverflow { start: start.interval_code, count: cell_count });
    }
    Ok(())
}

fn write_cells(audio: &mut [i16], start: Vp1Payload, cell_count: usize) {
    let spb = EmbeddingParams::STANDARD.samples_per_bit;
    for k in 0..cell_count {
        let payload = Vp1Payload { interval_code: start.interval_code + k as u32, ..start };
        let cell = encode_cell(payload);
        let base = k * SAMPLES_PER_CELL;
        for (i, &bit) in cell.0.iter().enumerate() {
            for s in &mut audio[base + i * spb..base + (i + 1) * spb] {
                *s = (*s & !1) | bit as i16;
            }
        }
    }
}

/// Embeds `cell_count` cells from the start of `audio`. Samples past the last
/// cell are untouched.
pub fn embed_watermark(audio: &[i16], start: Vp1Payload, cell_count: usize) -> Result<Vec<i16>, WatermarkError> {
    check_codes(start, cell_count)?;
    let needed = cell_count * SAMPLES_PER_CELL;
    if audio.len() < needed {
        return Err(WatermarkError::InsufficientSamples { needed, available: audio.len() });
    }
    let mut out = audio.to_vec();
    write_cells(&mut out, start, cell_count);
    Ok(out)
}

/// Clears every sample's LSB, then embeds `cell_count` cells. With zero
/// cells this is erasure.
pub fn rewrite_watermark(audio: &[i16], new_start: Vp1Payload, cell_count: usize) -> Result<Vec<i16>, WatermarkError> {
    check_codes(new_start, cell_count)?;
    let needed = cell_count * SAMPLES_PER_CELL;
    if audio.len() < needed {
        return Err(WatermarkError::InsufficientSamples { needed, available: audio.len() });
    }
    let mut out: Vec<i16> = audio.iter().map(|s| s & !1).collect();
    write_cells(&mut out, new_start, cell_count);
    Ok(out)
}

pub fn erase_watermark(audio: &[i16]) -> Vec<i16> {
    audio.iter().map(|s| s & !1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WatermarkCell {
    pub payload: Vp1Payload,
    /// Sample index of the cell's first bit.
    pub sample_offset: usize,
}

/// Contiguous cells with a constant server code and incrementing interval
/// codes, each starting exactly one cell after its predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WatermarkSegment {
    pub server_code: u32,
    pub binx: u32,
    pub einx: u32,
    pub first_cell_sample: usize,
}

impl WatermarkSegment {
    pub fn first_cell_offset(&self) -> f64 {
        self.first_cell_sample as f64 / EmbeddingParams::STANDARD.sample_rate as f64
    }

    pub fn cell_count(&self) -> u32 {
        self.einx - self.binx + 1
    }

    /// Sample index one past the last cell.
    pub fn end_sample(&self) -> usize {
        self.first_cell_sample + self.cell_count() as usize * SAMPLES_PER_CELL
    }
}

/// LSB counts over sample windows via prefix sums.
struct LsbVotes {
    prefix: Vec<u32>,
}

impl LsbVotes {
    fn new(audio: &[i16]) -> Self {
        let mut prefix = Vec::with_capacity(audio.len() + 1);
        prefix.push(0);
        let mut acc = 0u32;
        for s in audio {
            acc += (s & 1) as u32;
            prefix.push(acc);
        }
        LsbVotes { prefix }
    }

    fn len(&self) -> usize {
        self.prefix.len() - 1
    }

    /// The bit of `[start, start + spb)` when all its LSBs agree.
    fn bit(&self, start: usize, spb: usize) -> Option<bool> {
        match (self.prefix[start + spb] - self.prefix[start]) as usize {
            0 => Some(false),
            n if n == spb => Some(true),
            _ => None,
        }
    }

    fn cell_at(&self, p: usize, spb: usize) -> Option<Vp1Payload> {
        let mut bits = [false; CELL_BITS];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = self.bit(p + i * spb, spb)?;
        }
        decode_cell(&CellBitstream(bits)).ok()
    }
}

/// Every CRC-valid cell that lies wholly inside `audio`, by position. All
/// sample offsets are tried; a cell whose start precedes sample 0 is not
/// reported.
pub fn extract_cells(audio: &[i16]) -> Vec<WatermarkCell> {
    let spb = EmbeddingParams::STANDARD.samples_per_bit;
    let votes = LsbVotes::new(audio);
    let mut cells = Vec::new();
    let mut p = 0usize;
    while p + SAMPLES_PER_CELL <= votes.len() {
        match votes.cell_at(p, spb) {
            Some(payload) => {
                cells.push(WatermarkCell { payload, sample_offset: p });
                p += SAMPLES_PER_CELL;
            }
            None => p += 1,
        }
    }
    cells
}

/// Groups cells into session-layer segments.
pub fn group_cells(cells: &[WatermarkCell]) -> Vec<WatermarkSegment> {
    let mut segments: Vec<WatermarkSegment> = Vec::new();
    for c in cells {
        if let Some(last) = segments.last_mut() {
            if last.server_code == c.payload.server_code
                && c.payload.interval_code == last.einx + 1
                && c.sample_offset == last.end_sample()
            {
                last.einx += 1;
                continue;
            }
        }
        segments.push(WatermarkSegment {
            server_code: c.payload.server_code,
            binx: c.payload.interval_code,
            einx: c.payload.interval_code,
            first_cell_sample: c.sample_offset,
        });
    }
    segments
}

pub fn extract_segments(audio: &[i16]) -> Vec<WatermarkSegment> {
    group_cells(&extract_cells(audio))
}

/// Broadcast-timeline span of `segment` given that `anchor_code` starts at
/// `anchor_time` seconds.
pub fn map_timeline(
    segment: &WatermarkSegment,
    anchor_code: u32,
    anchor_time: f64,
) -> Result<(f64, f64), WatermarkError> {
    if anchor_code > segment.binx {
        return Err(WatermarkError::AnchorAfterSegment { anchor: anchor_code, binx: segment.binx });
    }
    let at = |code: u32| anchor_time + (code - anchor_code) as f64 * CELL_SECONDS;
    Ok((at(segment.binx), at(segment.einx + 1)))
}

/// Interval code whose cell contains broadcast time `t` given an anchor.
pub fn interval_code_at(anchor_code: u32, anchor_time: f64, t: f64) -> u32 {
    anchor_code + ((t - anchor_time) / CELL_SECONDS + 1e-9).floor() as u32
}

pub fn pcm_from_bytes(bytes: &[u8]) -> Vec<i16> {
    bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()
}

pub fn pcm_to_bytes(samples: &[i16]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}
