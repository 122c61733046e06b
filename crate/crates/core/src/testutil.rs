//! Fixture builders shared by unit tests.

use crate::binding::{self, MerkleTree};
use crate::bmff::*;
use crate::manifest::*;

/// Two tracks (PCM audio id 1, video blobs id 2), `count` fragments of
/// `frag_secs` seconds each. Audio carries one PCM byte pair per 100 ticks
/// to keep fixtures small.
pub fn two_track(count: u32, frag_secs: u32) -> MediaObject {
    let mut frags = Vec::new();
    for g in 0..count {
        let n = frag_secs * 48_000 / 100;
        let data: Vec<u8> = (0..n * 2).map(|i| (i * 7 + g) as u8).collect();
        frags.push(Fragment::new(
            1,
            g + 1,
            (g * frag_secs * 48_000) as u64,
            vec![Sample { duration: frag_secs * 48_000, size: n * 2 }],
            data,
        ));
        let samples: Vec<Sample> = (0..frag_secs * VIDEO_FPS)
            .map(|i| Sample { duration: VIDEO_FRAME_TICKS, size: 10 + i % 3 })
            .collect();
        let len: u32 = samples.iter().map(|s| s.size).sum();
        frags.push(Fragment::new(
            2,
            g + 1,
            (g * frag_secs * VIDEO_TIMESCALE) as u64,
            samples,
            (0..len).map(|i| (i as u8) ^ (g as u8).wrapping_mul(31)).collect(),
        ));
    }
    MediaObject::new(MediaKind::Fragmented, vec![InitSegment::audio(1), InitSegment::video(2)], frags)
}

pub fn signer(id: &str) -> Signer {
    Signer::from_seed(id, &binding::sha256(id.as_bytes()))
}

pub fn trust_for(signers: &[&Signer], approved: bool) -> TrustList {
    let mut t = TrustList::new();
    for s in signers {
        t.add(&s.distributor_id, s.public_key(), &[format!("{}.test", s.distributor_id)]).unwrap();
        t.set_approved(&s.distributor_id, approved).unwrap();
    }
    t
}

/// Builds per-track trees over `obj`, attaches proofs and returns the signed
/// manifest (also stored in every init segment).
pub fn merkle_bind(obj: &mut MediaObject, signer: &Signer, dhs_binx: u32) -> Manifest {
    let mut tracks = Vec::new();
    for init in obj.init_segments.clone() {
        let idx: Vec<usize> =
            (0..obj.fragments.len()).filter(|&i| obj.fragments[i].track_id == init.track_id).collect();
        let leaves = idx.iter().map(|&i| binding::hash_fragment(&obj.fragments[i])).collect();
        let tree = MerkleTree::build(leaves).unwrap();
        for (leaf, &i) in idx.iter().enumerate() {
            let fp = FragmentProof {
                dhs_id: format!("dhs-{dhs_binx}"),
                dhs_binx,
                track_id: init.track_id,
                proof: tree.prove(leaf as u64).unwrap(),
            };
            obj.fragments[i].provenance = Some(fp.to_bytes().unwrap());
        }
        tracks.push(TrackBinding {
            track_id: init.track_id,
            alg: "sha256".into(),
            leaf_count: tree.leaf_count(),
            root: tree.root(),
            init_hash: binding::hash_init_segment(&init),
            first_sequence: obj.fragments[idx[0]].sequence_number,
        });
    }
    let hard = Assertion::merkle(&MerkleBinding { alg: "sha256".into(), fragment_duration_ms: 2000, tracks }).unwrap();
    let extras = vec![
        Assertion::soft_watermark(&SoftWatermarkBinding { server_code: 7, binx: dhs_binx, einx: dhs_binx + 19 })
            .unwrap(),
        Assertion::asset_reference(&AssetReference {
            uri: format!("https://example.test/assets/dhs-{dhs_binx}"),
            media_time_start: Some(0.0),
            media_time_end: Some(30.0),
        })
        .unwrap(),
    ];
    let info = ClaimInfo { title: "fixture".into(), created_at: 1_700_000_000, dhs_range: Some((dhs_binx, dhs_binx + 19)) };
    let m = create_manifest(&signer.distributor_id, hard, extras, signer, info).unwrap();
    let store = serialize_manifest_store(&ManifestStore::single(m.clone())).unwrap();
    obj.init_segments.iter_mut().for_each(|i| i.provenance = Some(store.clone()));
    m
}

/// Monolithic single-track object with an embedded, signed exclusion-hash
/// manifest.
pub fn monolithic_asset(signer: &Signer) -> (MediaObject, Manifest) {
    let data: Vec<u8> = (0..4000u32).map(|i| (i * 13 % 251) as u8).collect();
    let frag = Fragment::new(1, 1, 0, vec![Sample { duration: 96_000, size: 4000 }], data);
    let mut obj = MediaObject::new(MediaKind::Monolithic, vec![InitSegment::audio(1)], vec![frag]);
    let hash = binding::monolithic_digest(&obj).unwrap();
    let hard = Assertion::monolithic(&MonolithicBinding { alg: "sha256".into(), hash, exclude: vec!["pmst".into()] })
        .unwrap();
    let m = create_manifest(
        &signer.distributor_id,
        hard,
        vec![],
        signer,
        ClaimInfo { title: "asset".into(), created_at: 1_700_000_000, dhs_range: None },
    )
    .unwrap();
    obj.container_manifest = Some(serialize_manifest_store(&ManifestStore::single(m.clone())).unwrap());
    (obj, m)
}
