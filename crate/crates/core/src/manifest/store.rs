//! Box serialization of a manifest store.
//!
//! ```text
//! c2ms                      store
//!   mshd                    version u32 | active u32 | count u32
//!   c2mf  (count times)     manifest
//!     c2as                  assertion store
//!       asrt (per assertion)
//!         albl              UTF-8 label
//!         acbr              canonical CBOR body
//!     c2cl                  claim, canonical CBOR
//!     c2cs                  claim signature, canonical CBOR
//! ```

use crate::bmff::{parse_boxes, BoxNode, FourCc};
use crate::cbor;

use super::{Assertion, Manifest, ManifestError, ManifestStore};

pub const STORE_VERSION: u32 = 1;

const C2MS: FourCc = *b"c2ms";
const MSHD: FourCc = *b"mshd";
const C2MF: FourCc = *b"c2mf";
const C2AS: FourCc = *b"c2as";
const ASRT: FourCc = *b"asrt";
const ALBL: FourCc = *b"albl";
const ACBR: FourCc = *b"acbr";
const C2CL: FourCc = *b"c2cl";
const C2CS: FourCc = *b"c2cs";

fn is_store_container(t: &FourCc) -> bool {
    matches!(t, b"c2ms" | b"c2mf" | b"c2as" | b"asrt")
}

pub fn serialize_manifest_store(store: &ManifestStore) -> Result<Vec<u8>, ManifestError> {
    if store.active >= store.manifests.len() {
        return Err(ManifestError::MalformedStore("active manifest index out of range".into()));
    }
    let mut header = Vec::with_capacity(12);
    header.extend_from_slice(&STORE_VERSION.to_be_bytes());
    header.extend_from_slice(&(store.active as u32).to_be_bytes());
    header.extend_from_slice(&(store.manifests.len() as u32).to_be_bytes());
    let mut children = vec![BoxNode::data(MSHD, header)];
    for m in &store.manifests {
        let assertions = m
            .assertions
            .iter()
            .map(|a| {
                BoxNode::container(
                    ASRT,
                    vec![BoxNode::data(ALBL, a.label.as_bytes().to_vec()), BoxNode::data(ACBR, a.body.clone())],
                )
            })
            .collect();
        children.push(BoxNode::container(
            C2MF,
            vec![
                BoxNode::container(C2AS, assertions),
                BoxNode::data(C2CL, m.claim.to_bytes()?),
                BoxNode::data(C2CS, cbor::to_canonical(&m.signature)?),
            ],
        ));
    }
    Ok(BoxNode::container(C2MS, children).to_bytes())
}

fn malformed(msg: impl Into<String>) -> ManifestError {
    ManifestError::MalformedStore(msg.into())
}

fn expect(node: Option<&BoxNode>, t: FourCc) -> Result<&BoxNode, ManifestError> {
    node.filter(|n| n.box_type == t)
        .ok_or_else(|| malformed(format!("expected '{}' box", String::from_utf8_lossy(&t))))
}

fn leaf(node: &BoxNode) -> Result<&[u8], ManifestError> {
    node.payload().ok_or_else(|| malformed("expected a leaf box"))
}

pub fn parse_manifest_store(bytes: &[u8]) -> Result<ManifestStore, ManifestError> {
    if bytes.is_empty() {
        return Err(malformed("empty input"));
    }
    let top = parse_boxes(bytes, is_store_container).map_err(|e| malformed(e.to_string()))?;
    if top.len() != 1 {
        return Err(malformed(format!("{} top-level boxes", top.len())));
    }
    let store = expect(top.first(), C2MS)?;
    let mut children = store.children().iter();
    let header = leaf(expect(children.next(), MSHD)?)?;
    if header.len() != 12 {
        return Err(malformed("store header must be 12 bytes"));
    }
    let field = |i: usize| u32::from_be_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
    let (version, active, count) = (field(0), field(1) as usize, field(2) as usize);
    if version != STORE_VERSION {
        return Err(ManifestError::UnsupportedVersion(version));
    }
    let manifests = children.map(parse_manifest).collect::<Result<Vec<_>, _>>()?;
    if manifests.len() != count {
        return Err(malformed(format!("header announces {count} manifests, found {}", manifests.len())));
    }
    if active >= count {
        return Err(malformed("active manifest index out of range"));
    }
    Ok(ManifestStore { manifests, active })
}

fn parse_manifest(node: &BoxNode) -> Result<Manifest, ManifestError> {
    if node.box_type != C2MF {
        return Err(malformed("expected 'c2mf' box"));
    }
    let parts = node.children();
    if parts.len() != 3 {
        return Err(malformed("manifest must hold assertion store, claim and signature"));
    }
    let assertions = expect(parts.first(), C2AS)?
        .children()
        .iter()
        .map(|a| {
            let a = expect(Some(a), ASRT)?;
            let (label, body) = match a.children() {
                [l, b] => (leaf(expect(Some(l), ALBL)?)?, leaf(expect(Some(b), ACBR)?)?),
                _ => return Err(malformed("assertion must hold label and body")),
            };
            let label = std::str::from_utf8(label).map_err(|_| malformed("label is not UTF-8"))?;
            Assertion::from_parts(label, body.to_vec()).map_err(|e| malformed(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let claim = cbor::from_canonical(leaf(expect(parts.get(1), C2CL)?)?).map_err(|e| malformed(e.to_string()))?;
    let signature =
        cbor::from_canonical(leaf(expect(parts.get(2), C2CS)?)?).map_err(|e| malformed(e.to_string()))?;
    Ok(Manifest { assertions, claim, signature })
}
