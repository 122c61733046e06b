//! `multipart/related` framing of recovery responses.
//!
//! The boundary is `castprov-` plus the hex SHA-256 of all part bodies, so
//! serialization is a pure function of the response.

use std::collections::BTreeMap;

use crate::binding::sha256;

use super::{
    RecoveryDescriptor, RecoveryError, RecoveryResponse, ResponsePart, DESCRIPTOR_CONTENT_ID,
    RECOVERY_DESCRIPTOR_MEDIA_TYPE,
};

/// Returns the `Content-Type` header value and the body.
pub fn serialize_recovery_response(response: &RecoveryResponse) -> Result<(String, Vec<u8>), RecoveryError> {
    let descriptor = response.descriptor.to_cbor()?;
    let mut parts: Vec<(&str, &str, &[u8])> =
        vec![(DESCRIPTOR_CONTENT_ID, RECOVERY_DESCRIPTOR_MEDIA_TYPE, &descriptor)];
    parts.extend(response.parts.iter().map(|(id, p)| (id.as_str(), p.media_type.as_str(), p.bytes.as_slice())));

    let mut digest_input = Vec::new();
    for (id, media_type, bytes) in &parts {
        for field in [id.as_bytes(), media_type.as_bytes(), bytes] {
            digest_input.extend_from_slice(&(field.len() as u64).to_be_bytes());
            digest_input.extend_from_slice(field);
        }
    }
    let boundary = format!("castprov-{}", hex::encode(sha256(&digest_input)));

    let mut body = Vec::new();
    for (id, media_type, bytes) in &parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        body.extend_from_slice(format!("Content-Type: {media_type}\r\n").as_bytes());
        body.extend_from_slice(format!("Content-ID: <{id}>\r\n").as_bytes());
        body.extend_from_slice(format!("Content-Length: {}\r\n\r\n", bytes.len()).as_bytes());
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    let content_type = format!(
        "multipart/related; type=\"{RECOVERY_DESCRIPTOR_MEDIA_TYPE}\"; start=\"<{DESCRIPTOR_CONTENT_ID}>\"; boundary=\"{boundary}\""
    );
    Ok((content_type, body))
}

fn malformed(msg: impl Into<String>) -> RecoveryError {
    RecoveryError::MalformedMultipart(msg.into())
}

fn find(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from > hay.len() {
        return None;
    }
    hay[from..].windows(needle.len()).position(|w| w == needle).map(|p| p + from)
}

struct RawPart {
    headers: BTreeMap<String, String>,
    body: Vec<u8>,
}

fn split_parts(body: &[u8], boundary: &str) -> Result<Vec<RawPart>, RecoveryError> {
    let delim = format!("--{boundary}");
    let delim = delim.as_bytes();
    // No preamble: the body opens with the first delimiter.
    if !body.starts_with(delim) {
        return Err(malformed("body does not open with the boundary"));
    }
    let mut pos = 0;
    let mut parts = Vec::new();
    loop {
        pos += delim.len();
        if body[pos..].starts_with(b"--") {
            return Ok(parts);
        }
        if !body[pos..].starts_with(b"\r\n") {
            return Err(malformed("boundary line not terminated"));
        }
        pos += 2;
        let header_end = find(body, b"\r\n\r\n", pos).ok_or_else(|| malformed("unterminated part headers"))?;
        let mut headers = BTreeMap::new();
        for line in std::str::from_utf8(&body[pos..header_end])
            .map_err(|_| malformed("part headers are not UTF-8"))?
            .split("\r\n")
            .filter(|l| !l.is_empty())
        {
            let (name, value) = line.split_once(':').ok_or_else(|| malformed(format!("bad header line '{line}'")))?;
            headers.insert(name.trim().to_ascii_lowercase(), value.trim().to_string());
        }
        let start = header_end + 4;
        let mut closing = Vec::with_capacity(delim.len() + 2);
        closing.extend_from_slice(b"\r\n");
        closing.extend_from_slice(delim);
        let end = match headers.get("content-length") {
            Some(len) => {
                let len: usize = len.parse().map_err(|_| malformed("bad Content-Length"))?;
                let end = start.checked_add(len).filter(|&e| e <= body.len()).ok_or_else(|| malformed("part overruns body"))?;
                if !body[end..].starts_with(&closing) {
                    return Err(malformed("part length does not reach a boundary"));
                }
                end
            }
            None => find(body, &closing, start).ok_or_else(|| malformed("closing boundary not found"))?,
        };
        parts.push(RawPart { headers, body: body[start..end].to_vec() });
        pos = end + 2;
    }
}

fn content_id(raw: &RawPart) -> Option<String> {
    raw.headers.get("content-id").map(|v| v.trim_start_matches('<').trim_end_matches('>').to_string())
}

/// Parses a response body. Parts not referenced by the descriptor are
/// dropped.
pub fn parse_recovery_response(body: &[u8], content_type: &str) -> Result<RecoveryResponse, RecoveryError> {
    let mime: mime::Mime = content_type.parse().map_err(|e| malformed(format!("content type: {e}")))?;
    if mime.type_() != mime::MULTIPART || mime.subtype().as_str() != "related" {
        return Err(malformed(format!("expected multipart/related, got {}", mime.essence_str())));
    }
    let boundary = mime.get_param(mime::BOUNDARY).ok_or_else(|| malformed("no boundary parameter"))?;
    let start = mime.get_param("start").map(|s| s.as_str().trim_start_matches('<').trim_end_matches('>').to_string());
    let raw = split_parts(body, boundary.as_str())?;

    let root_index = match &start {
        Some(id) => raw.iter().position(|p| content_id(p).as_deref() == Some(id)),
        None => (!raw.is_empty()).then_some(0),
    }
    .ok_or(RecoveryError::MissingRootPart)?;
    let root = &raw[root_index];
    if root.headers.get("content-type").map(String::as_str) != Some(RECOVERY_DESCRIPTOR_MEDIA_TYPE) {
        return Err(RecoveryError::MissingRootPart);
    }
    let descriptor = RecoveryDescriptor::from_cbor(&root.body)?;

    let mut parts = BTreeMap::new();
    for (i, p) in raw.iter().enumerate() {
        let Some(id) = content_id(p) else { continue };
        if i == root_index || !descriptor.entries.iter().any(|e| e.manifest_part_ref == id) {
            continue;
        }
        let media_type = p.headers.get("content-type").cloned().unwrap_or_default();
        if parts.insert(id.clone(), ResponsePart { media_type, bytes: p.body.clone() }).is_some() {
            return Err(malformed(format!("duplicate Content-ID '{id}'")));
        }
    }
    let response = RecoveryResponse { descriptor, parts };
    response.check_refs()?;
    Ok(response)
}
