//! Hard bindings: exclusion-range hashing for monolithic objects and
//! per-track Merkle trees over fragment hashes.
//!
//! Trees are binary SHA-256 trees where an interior node is
//! `SHA-256(left || right)` and an odd node at the end of a level is paired
//! with itself. An inclusion proof lists one sibling per level, leaf level
//! first; bit `k` of the leaf index says whether the running hash is the
//! right (1) or left (0) input at level `k`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bmff::{self, BmffError, Fragment, InitSegment, MediaKind, MediaObject};

pub type Digest32 = [u8; 32];

pub const HASH_ALGORITHM: &str = "sha256";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BindingError {
    #[error("merkle tree needs at least one leaf")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {count} leaves")]
    IndexOutOfRange { index: u64, count: u64 },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl From<BmffError> for BindingError {
    fn from(e: BmffError) -> Self {
        BindingError::InvariantViolation(e.to_string())
    }
}

pub fn sha256(data: &[u8]) -> Digest32 {
    Sha256::digest(data).into()
}

fn hash_pair(left: &Digest32, right: &Digest32) -> Digest32 {
    let mut h = Sha256::new();
    h.update(left);
    h.update(right);
    h.finalize().into()
}

/// Digest of a fragment with its provenance box excluded.
pub fn hash_fragment(frag: &Fragment) -> Digest32 {
    if frag.provenance.is_none() {
        return sha256(&frag.to_bytes());
    }
    let mut bare = frag.clone();
    bare.provenance = None;
    sha256(&bare.to_bytes())
}

/// Digest of an init segment with its provenance box excluded.
pub fn hash_init_segment(init: &InitSegment) -> Digest32 {
    let mut bare = init.clone();
    bare.provenance = None;
    sha256(&bare.to_box().to_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleRow {
    pub track_id: u32,
    pub leaf_count: u64,
    #[serde(with = "serde_bytes")]
    pub root: Digest32,
    pub alg: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub siblings: Vec<serde_bytes::ByteArray<32>>,
}

impl InclusionProof {
    pub fn sibling(&self, level: usize) -> &Digest32 {
        &self.siblings[level]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest32>>,
}

impl MerkleTree {
    pub fn build(leaves: Vec<Digest32>) -> Result<Self, BindingError> {
        if leaves.is_empty() {
            return Err(BindingError::EmptyLeaves);
        }
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let next = prev
                .chunks(2)
                .map(|pair| hash_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest32 {
        self.levels.last().unwrap()[0]
    }

    pub fn leaf_count(&self) -> u64 {
        self.levels[0].len() as u64
    }

    pub fn leaves(&self) -> &[Digest32] {
        &self.levels[0]
    }

    pub fn levels(&self) -> &[Vec<Digest32>] {
        &self.levels
    }

    /// Number of sibling digests in every proof: `ceil(log2(leaf_count))`.
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn row(&self, track_id: u32) -> MerkleRow {
        MerkleRow {
            track_id,
            leaf_count: self.leaf_count(),
            root: self.root(),
            alg: HASH_ALGORITHM.to_string(),
        }
    }

    pub fn prove(&self, leaf_index: u64) -> Result<InclusionProof, BindingError> {
        if leaf_index >= self.leaf_count() {
            return Err(BindingError::IndexOutOfRange { index: leaf_index, count: self.leaf_count() });
        }
        let mut idx = leaf_index as usize;
        let siblings = self.levels[..self.height()]
            .iter()
            .map(|level| {
                let sib = level.get(idx ^ 1).unwrap_or(&level[idx]);
                idx >>= 1;
                serde_bytes::ByteArray::new(*sib)
            })
            .collect();
        Ok(InclusionProof { leaf_index, siblings })
    }
}

/// Builds a tree and returns its root alongside the full level list.
pub fn build_merkle(leaves: Vec<Digest32>) -> Result<(Digest32, MerkleTree), BindingError> {
    let tree = MerkleTree::build(leaves)?;
    Ok((tree.root(), tree))
}

pub fn prove_inclusion(tree: &MerkleTree, leaf_index: u64) -> Result<InclusionProof, BindingError> {
    tree.prove(leaf_index)
}

pub fn verify_inclusion(root: &Digest32, leaf: &Digest32, proof: &InclusionProof) -> bool {
    let height = proof.siblings.len();
    if height < 64 && proof.leaf_index >> height != 0 {
        return false;
    }
    let mut acc = *leaf;
    for (level, sib) in proof.siblings.iter().enumerate() {
        acc = if (proof.leaf_index >> level) & 1 == 0 {
            hash_pair(&acc, sib)
        } else {
            hash_pair(sib, &acc)
        };
    }
    acc == *root
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRange {
    pub offset: u64,
    pub length: u64,
}

/// Exclusion ranges covering exactly the container manifest box of `bytes`.
pub fn manifest_exclusions(bytes: &[u8]) -> Result<Vec<ExclusionRange>, BindingError> {
    Ok(bmff::container_manifest_range(bytes)?
        .map(|r| ExclusionRange { offset: r.start as u64, length: r.len() as u64 })
        .into_iter()
        .collect())
}

/// SHA-256 over the bytes of `data` that fall outside `exclusions`.
pub fn hash_with_exclusions(data: &[u8], exclusions: &[ExclusionRange]) -> Result<Digest32, BindingError> {
    let mut cursor = 0u64;
    let mut h = Sha256::new();
    for ex in exclusions {
        let end = ex.offset.checked_add(ex.length).filter(|e| *e <= data.len() as u64);
        let Some(end) = end else {
            return Err(BindingError::InvariantViolation(format!(
                "exclusion {}+{} outside {} bytes",
                ex.offset,
                ex.length,
                data.len()
            )));
        };
        if ex.offset < cursor {
            return Err(BindingError::InvariantViolation("exclusions overlap or are unsorted".into()));
        }
        h.update(&data[cursor as usize..ex.offset as usize]);
        cursor = end;
    }
    h.update(&data[cursor as usize..]);
    Ok(h.finalize().into())
}

pub fn hash_monolithic(obj: &MediaObject, exclusions: &[ExclusionRange]) -> Result<Digest32, BindingError> {
    if obj.kind != MediaKind::Monolithic {
        return Err(BindingError::InvariantViolation("object is not monolithic".into()));
    }
    let bytes = bmff::serialize_media(obj)?;
    hash_with_exclusions(&bytes, exclusions)
}

/// Exclusion hash of a monolithic object, excluding its manifest box.
pub fn monolithic_digest(obj: &MediaObject) -> Result<Digest32, BindingError> {
    if obj.kind != MediaKind::Monolithic {
        return Err(BindingError::InvariantViolation("object is not monolithic".into()));
    }
    let bytes = bmff::serialize_media(obj)?;
    hash_with_exclusions(&bytes, &manifest_exclusions(&bytes)?)
}
