//! Acceptance criteria. Runs as a plain binary so every criterion prints a
//! single PASS/FAIL line; exits non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use castprov_core::bmff::{
    parse_media, serialize_media, slice_fragments, strip_container_metadata, BoxNode, Fragment, InitSegment,
    MediaKind, MediaObject, Sample,
};
use castprov_core::manifest::{
    create_manifest, parse_manifest_store, serialize_manifest_store, validate_binding, Assertion, ClaimInfo,
    ManifestStore, MonolithicBinding, SoftWatermarkBinding,
};
use castprov_core::pipeline::{
    audio_pcm, concat_replicas, flatten_to_monolithic, sign_monolithic, BroadcastConfig, DataHashSegment,
};
use castprov_core::recovery::{
    parse_recovery_path, parse_recovery_response, serialize_recovery_response, server_code_from_host,
    spawn_server, DescriptorEntry, HttpRecoveryClient, LocalRecoveryClient, RecoveryClient, RecoveryDescriptor,
    SharedRegistry,
};
use castprov_core::validator::{
    terminal_for_trail, validate_media_object, CanonicalDecision, OutcomeKind, PlatformPolicy, PolicyAction, StepId,
    Terminal, Validation, ValidationContext,
};
use castprov_core::watermark::{
    decode_cell, embed_watermark, encode_cell, erase_watermark, extract_segments, Vp1Payload, WatermarkError,
    CELL_BITS, CELL_SECONDS, MAX_INTERVAL_CODE, MAX_SERVER_CODE, SAMPLES_PER_CELL, SYNC_BITS,
};
use common::*;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 tamper evidence", tamper_evidence),
        ("2 piecewise equals whole", piecewise_equals_whole),
        ("3 clipped capture end to end", clipped_capture),
        ("4 scenario matrix", scenario_matrix),
        ("5 watermark loopback and session layer", watermark_session_layer),
        ("6 adversarial trust", adversarial_trust),
        ("7 serialization stability", serialization_stability),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {name}: PASS ({detail}; {secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail}; {secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn within(t: Instant, limit_secs: u64, what: &str) -> Result<(), String> {
    let e = t.elapsed();
    check(e <= Duration::from_secs(limit_secs), || format!("{what} took {:.1} s, limit {limit_secs} s", e.as_secs_f64()))
}

fn trail_string(v: &Validation) -> String {
    path_of(v).iter().map(|(s, ok)| format!("{}{}", s.label(), if *ok { '+' } else { '-' })).collect::<Vec<_>>().join(" ")
}

fn hook() -> PlatformPolicy {
    PlatformPolicy::new(PolicyAction::Replace, CanonicalDecision::RequireApprovalHook)
}

fn replace() -> PlatformPolicy {
    PlatformPolicy::new(PolicyAction::Replace, CanonicalDecision::Automatic)
}

// -------------------- 1 --------------------

/// Flips one essence byte chosen uniformly over all sample data.
fn mutate_essence(obj: &MediaObject, rng: &mut ChaCha8Rng) -> (MediaObject, usize, usize) {
    let total: usize = obj.fragments.iter().map(|f| f.sample_data.len()).sum();
    let mut at = rng.gen_range(0..total);
    let mut out = obj.clone();
    for (i, f) in out.fragments.iter_mut().enumerate() {
        if at < f.sample_data.len() {
            f.sample_data[at] ^= rng.gen_range(1..=255u8);
            return (out, i, at);
        }
        at -= f.sample_data.len();
    }
    unreachable!()
}

fn tamper_evidence() -> Verdict {
    let t = Instant::now();
    let w = World::broadcast(60);
    let owner = &w.signer;
    let flat = |s, e| flatten_to_monolithic(&w.capture(s, e)).unwrap();
    let fixtures: Vec<(&str, MediaObject)> = vec![
        ("replica 0", w.dhs[0].replica.clone()),
        ("replica 1", w.dhs[1].replica.clone()),
        ("signed watermarked 3.1-9.7", sign_monolithic(&flat(3.1, 9.7), owner, "a", 0, vec![]).unwrap()),
        ("signed watermarked 41.2-47.0", sign_monolithic(&flat(41.2, 47.0), owner, "b", 0, vec![]).unwrap()),
        ("signed unwatermarked 12-18", sign_monolithic(&erase(&flat(12.0, 18.0)), owner, "c", 0, vec![]).unwrap()),
        ("signed unwatermarked 50-55", sign_monolithic(&erase(&flat(50.0, 55.0)), owner, "d", 0, vec![]).unwrap()),
        ("capture 0-6", w.capture(0.0, 6.0)),
        ("capture 10.4-16.9", w.capture(10.4, 16.9)),
        ("capture 27.3-35.1", w.capture(27.3, 35.1)),
        ("capture 50.8-59.2", w.capture(50.8, 59.2)),
        ("canonical clip", w.validate(&w.perturbed_capture(20.0, 26.0), &replace()).canonical[0].media.clone()),
    ];
    for (name, f) in &fixtures {
        let v = w.validate(f, &hook());
        check(v.outcome.is_success(), || format!("unmutated fixture {name} does not validate: {}", trail_string(&v)))?;
    }
    const PER_FIXTURE: usize = 100;
    let results: Vec<Result<(usize, usize), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = fixtures
            .iter()
            .enumerate()
            .map(|(k, (name, obj))| {
                let w = &w;
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
                    let mut detected = 0;
                    for _ in 0..PER_FIXTURE {
                        let (bad, frag, at) = mutate_essence(obj, &mut rng);
                        let v = w.validate(&bad, &hook());
                        let t = v.outcome.terminal;
                        if matches!(t, Terminal::EmbeddedValid | Terminal::WatermarkRecoveredValid) {
                            return Err(format!("{name}: byte {at} of fragment {frag} accepted as {t:?}"));
                        }
                        let failed = |step| v.outcome.passed(step) == Some(false);
                        if failed(StepId::EmbeddedBinding) || failed(StepId::RecoveredBinding) {
                            detected += 1;
                        }
                    }
                    Ok((PER_FIXTURE, detected))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut total = 0;
    let mut detected = 0;
    for r in results {
        let (n, d) = r?;
        total += n;
        detected += d;
    }
    within(t, 120, "tamper sweep")?;
    check(detected == total, || format!("binding mismatch detected for {detected}/{total} mutations"))?;
    Ok(format!("{total} mutations over {} fixtures, binding mismatch rate 100%, 0 accepted", fixtures.len()))
}

// -------------------- 2 --------------------

fn oracle_hash(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Root of a binary tree whose odd last node pairs with itself.
fn oracle_root(mut level: Vec<[u8; 32]>) -> [u8; 32] {
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|p| oracle_hash(&[p[0], *p.get(1).unwrap_or(&p[0])].concat()))
            .collect();
    }
    level[0]
}

fn oracle_leaf(f: &Fragment) -> [u8; 32] {
    let mut bare = f.clone();
    bare.provenance = None;
    oracle_hash(&bare.to_bytes())
}

/// Rebuilds every touched track tree from the full replica with `sub`'s
/// fragments written over their slots.
fn full_rebuild_verdict(dhs: &DataHashSegment, sub: &MediaObject) -> bool {
    let binding = dhs.manifest.merkle_binding().unwrap();
    for track in &binding.tracks {
        let mine: Vec<&Fragment> = sub.fragments.iter().filter(|f| f.track_id == track.track_id).collect();
        if mine.is_empty() {
            continue;
        }
        let mut leaves: Vec<[u8; 32]> = dhs.replica.track_fragments(track.track_id).map(oracle_leaf).collect();
        for f in mine {
            let Some(slot) = f.sequence_number.checked_sub(track.first_sequence) else { return false };
            let Some(leaf) = leaves.get_mut(slot as usize) else { return false };
            *leaf = oracle_leaf(f);
        }
        let mut init = sub.init_for(track.track_id).unwrap().clone();
        init.provenance = None;
        if oracle_root(leaves) != track.root || oracle_hash(&init.to_box().to_bytes()) != track.init_hash {
            return false;
        }
    }
    true
}

fn piecewise_equals_whole() -> Verdict {
    let configs = [
        BroadcastConfig { fragment_duration_ms: 2000, ..Default::default() },
        BroadcastConfig { dhs_cell_count: 10, ..Default::default() },
        BroadcastConfig { dhs_cell_count: 4, ..Default::default() },
    ];
    let mut replicas = Vec::new();
    for (i, cfg) in configs.into_iter().enumerate() {
        let secs = cfg.dhs_ms() * 2 / 1000;
        replicas.extend(World::with_config(secs, cfg, 70 + i as u64).dhs);
    }
    let (mut compared, mut discrepancies, mut matches) = (0, 0, 0);
    for dhs in &replicas {
        let n = dhs.replica.fragments.len();
        if n > 32 {
            return Err(format!("replica {} has {n} fragments", dhs.dhs_id));
        }
        for i in 0..n {
            for j in i + 1..=n {
                let base = MediaObject { fragments: dhs.replica.fragments[i..j].to_vec(), ..dhs.replica.clone() };
                let mid = i + (j - i) / 2;
                let mut variants = vec![base.clone()];
                let mut flipped = base.clone();
                let data = &mut flipped.fragments[mid - i].sample_data;
                let len = data.len();
                data[(i * 31 + j * 17) % len] ^= 0x01;
                variants.push(flipped);
                let mut shifted = base.clone();
                shifted.fragments[j - 1 - i].base_media_decode_time += 1;
                variants.push(shifted);
                // Same-track neighbours with their payloads exchanged.
                if j - i > 2 {
                    let mut swapped = base.clone();
                    let (a, b) = swapped.fragments.split_at_mut(2);
                    std::mem::swap(&mut a[0].sample_data, &mut b[0].sample_data);
                    std::mem::swap(&mut a[0].samples, &mut b[0].samples);
                    variants.push(swapped);
                }
                for v in variants {
                    let piecewise = validate_binding(&dhs.manifest, &v, None).is_ok_and(|r| r.is_match());
                    let oracle = full_rebuild_verdict(dhs, &v);
                    compared += 1;
                    matches += usize::from(oracle);
                    if piecewise != oracle {
                        discrepancies += 1;
                    }
                }
            }
        }
    }
    check(discrepancies == 0, || format!("{discrepancies} discrepancies over {compared} verdicts"))?;
    Ok(format!("{compared} verdicts over {} replicas ({matches} match), 0 discrepancies", replicas.len()))
}

// -------------------- 3 --------------------

fn clipped_capture() -> Verdict {
    let t = Instant::now();
    let w = World::broadcast(90);
    check(w.dhs.len() >= 3, || format!("{} DHS produced", w.dhs.len()))?;
    let (start, end) = (20.3, 40.3);
    let boundary = w.dhs[0].media_end_ms as f64 / 1000.0;
    check(start < boundary && boundary < end, || "clip does not straddle a DHS boundary".into())?;

    let clip = w.capture(start, end);
    check(clip.container_manifest.is_none() && clip.init_segments.iter().all(|i| i.provenance.is_none()), || {
        "capture carries metadata".into()
    })?;
    let clean = w.validate(&clip, &replace());
    check(clean.outcome.terminal == Terminal::WatermarkRecoveredValid, || {
        format!("clean capture gave {:?}: {}", clean.outcome.terminal, trail_string(&clean))
    })?;

    let perturbed = w.perturbed_capture(start, end);
    let v = w.validate(&perturbed, &replace());
    check(v.outcome.terminal == Terminal::CanonicalProduced, || {
        format!("perturbed capture gave {:?}: {}", v.outcome.terminal, trail_string(&v))
    })?;
    let canon = &v.canonical[0];
    let whole = concat_replicas(&w.dhs).unwrap();
    let reference = slice_fragments(&whole, canon.start_time, canon.end_time).unwrap();
    let essence = |o: &MediaObject| o.fragments.iter().map(|f| f.sample_data.clone()).collect::<Vec<_>>();
    check(essence(&canon.media) == essence(&reference), || "canonical essence differs from the replica range".into())?;
    let drift = (canon.start_time - start).abs();
    check(drift <= CELL_SECONDS, || format!("canonical start {} is {drift} s from the clip start", canon.start_time))?;
    within(t, 60, "scenario")?;
    Ok(format!(
        "clean: WatermarkRecoveredValid; perturbed: CanonicalProduced [{}, {}) s byte-identical, start offset {drift:.2} s",
        canon.start_time, canon.end_time
    ))
}

// -------------------- 4 --------------------

fn scenario_matrix() -> Verdict {
    let mut w = World::broadcast(60);
    w.publish_other("pirate", 666, 9, Some(false));
    let stranger = signer("stranger");
    let flat = flatten_to_monolithic(&erase(&w.capture(2.0, 9.0))).unwrap();
    let mut mismatched = sign_monolithic(&flat, &w.signer, "x", 0, vec![]).unwrap();
    mismatched.fragments[0].sample_data[100] ^= 0x20;
    let tampered = World::broadcast(60);
    tampered.tamper_replica(1, 2 * 5 + 1);

    let clean = w.capture(33.1, 43.1);
    let perturbed = w.perturbed_capture(33.1, 43.1);
    let wm = "3-1- 3-4+ 3-5+ 3-6+";
    let canon = "3-1- 3-4+ 3-5+ 3-6+ 3-7- 4-8+ 4-9+";
    let cases: Vec<(Terminal, Validation, String)> = vec![
        (Terminal::EmbeddedValid, w.validate(&w.dhs[0].replica, &replace()), "3-1+ 3-2+ 3-3+".into()),
        (Terminal::WatermarkRecoveredValid, w.validate(&clean, &replace()), format!("{wm} 3-7+")),
        (Terminal::NoManifestNoWatermark, w.validate(&erase(&clean), &replace()), "3-1- 3-4-".into()),
        (
            Terminal::UnregisteredDistributor,
            w.validate(&sign_monolithic(&flat, &stranger, "x", 0, vec![]).unwrap(), &replace()),
            "3-1+ 3-2- 3-4-".into(),
        ),
        (Terminal::RetrievalFailed, w.validate(&rewrite(&clean, 999, 7), &replace()), "3-1- 3-4+ 3-5-".into()),
        (Terminal::UntrustedSignature, w.validate(&rewrite(&clean, 666, 1004), &replace()), format!("{}-", &wm[..wm.len() - 1])),
        (Terminal::BindingMismatch, w.validate(&mismatched, &replace()), "3-1+ 3-2+ 3-3- 3-4-".into()),
        (Terminal::CanonicalProduced, w.validate(&perturbed, &replace()), format!("{canon} 4-10+ 4-11+")),
        (Terminal::CanonicalDeclined, w.validate(&perturbed, &hook().with_approval(false)), format!("{}-", &canon[..canon.len() - 1])),
        (Terminal::CanonicalValidationError, tampered.validate(&perturbed, &replace()), format!("{canon} 4-10+ 4-11-")),
    ];
    let covered: std::collections::BTreeSet<_> = cases.iter().map(|c| c.0).collect();
    check(covered.len() == Terminal::ALL.len(), || "a terminal has no fixture".into())?;
    for (expected, v, trail) in &cases {
        let got = trail_string(v);
        check(v.outcome.terminal == *expected && got == *trail, || {
            format!("{expected:?}: got {:?} with trail {got}, expected {trail}", v.outcome.terminal)
        })?;
        check(terminal_for_trail(&path_of(v)) == Some(*expected), || format!("{expected:?}: trail not in the state graph"))?;
        let kind = if matches!(expected, Terminal::EmbeddedValid | Terminal::WatermarkRecoveredValid | Terminal::CanonicalProduced) {
            OutcomeKind::Success
        } else {
            OutcomeKind::Exception
        };
        check(v.outcome.kind == kind, || format!("{expected:?} reported as {:?}", v.outcome.kind))?;
    }
    Ok(format!("{} terminals, every trail matches the state graph", cases.len()))
}

// -------------------- 5 --------------------

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<i16> {
    (0..n).map(|_| rng.gen()).collect()
}

fn watermark_session_layer() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let p = Vp1Payload::new(rng.gen_range(0..=MAX_SERVER_CODE), rng.gen_range(0..=MAX_INTERVAL_CODE)).unwrap();
        let got = decode_cell(&encode_cell(p));
        check(got == Ok(p), || format!("{p:?} decoded as {got:?}"))?;
    }
    // Audio loopback on a subset; each round trip embeds and extracts one cell.
    for _ in 0..200 {
        let p = Vp1Payload::new(rng.gen_range(0..=MAX_SERVER_CODE), rng.gen_range(0..MAX_INTERVAL_CODE)).unwrap();
        let audio = noise(&mut rng, SAMPLES_PER_CELL);
        let segs = extract_segments(&embed_watermark(&audio, p, 1).unwrap());
        check(segs.len() == 1 && segs[0].binx == p.interval_code && segs[0].server_code == p.server_code, || {
            format!("{p:?} extracted as {segs:?}")
        })?;
    }

    let mut flips = 0;
    for _ in 0..200 {
        let cell = encode_cell(Vp1Payload::new(rng.gen_range(0..=MAX_SERVER_CODE), rng.gen_range(0..=MAX_INTERVAL_CODE)).unwrap());
        for i in 0..CELL_BITS {
            let mut bad = cell;
            bad.0[i] = !bad.0[i];
            let expected = if i < SYNC_BITS { WatermarkError::BadSync } else { WatermarkError::CrcMismatch };
            check(decode_cell(&bad) == Err(expected), || format!("flip of bit {i} accepted"))?;
            flips += 1;
        }
    }

    // Two sources spliced at non-aligned cell phases.
    let mut splices = 0;
    while splices < 50 {
        let (pa, pb) = (rng.gen_range(0..SAMPLES_PER_CELL), rng.gen_range(0..SAMPLES_PER_CELL));
        let (ca, cb) = (rng.gen_range(3..8), rng.gen_range(3..8));
        // Each cut removes at least one whole bit of the straddled cell.
        let spb = SAMPLES_PER_CELL / CELL_BITS;
        let (cut_a, cut_b) = (rng.gen_range(0..SAMPLES_PER_CELL - spb), rng.gen_range(spb..SAMPLES_PER_CELL));
        // Equal in-cell cut offsets join into one valid cell.
        if cut_a == cut_b {
            continue;
        }
        let (sa, sb) = (rng.gen_range(1..1000), rng.gen_range(1000..2000));
        let (ia, ib) = (rng.gen_range(0..100_000), rng.gen_range(0..100_000));
        let source = |rng: &mut ChaCha8Rng, lead: usize, cells: usize, server: u32, start: u32| {
            let mut audio = noise(rng, lead);
            let marked = embed_watermark(&noise(rng, cells * SAMPLES_PER_CELL), Vp1Payload::new(server, start).unwrap(), cells);
            audio.extend(marked.unwrap());
            audio.extend(noise(rng, SAMPLES_PER_CELL));
            audio
        };
        let a = source(&mut rng, pa, ca + 1, sa, ia);
        let b = source(&mut rng, pb, cb + 1, sb, ib);
        // Cut A inside its last cell and B inside its first.
        let a_end = pa + ca * SAMPLES_PER_CELL + cut_a;
        let b_start = pb + cut_b;
        let mixed: Vec<i16> = a[..a_end].iter().chain(&b[b_start..]).copied().collect();
        let segs = extract_segments(&mixed);
        let expected = [
            (sa, ia, ia + ca as u32 - 1, pa),
            (sb, ib + 1, ib + cb as u32, a_end + pb + SAMPLES_PER_CELL - b_start),
        ];
        let got: Vec<_> = segs.iter().map(|s| (s.server_code, s.binx, s.einx, s.first_cell_sample)).collect();
        check(got == expected, || format!("splice gave {got:?}, expected {expected:?}"))?;
        splices += 1;
    }

    // Time to the first complete payload from a random clip start.
    let w = World::broadcast(30);
    let (_, broadcast) = audio_pcm(&concat_replicas(&w.dhs).unwrap()).unwrap();
    let mut total_secs = 0.0;
    const STARTS: usize = 200;
    for _ in 0..STARTS {
        let start = rng.gen_range(0..broadcast.len() - 4 * SAMPLES_PER_CELL);
        let segs = extract_segments(&broadcast[start..start + 4 * SAMPLES_PER_CELL]);
        let first = segs.first().ok_or("no payload in a four-cell clip")?;
        let decoded_at = first.first_cell_sample + SAMPLES_PER_CELL;
        check(decoded_at <= 2 * SAMPLES_PER_CELL, || format!("first payload complete only at sample {decoded_at}"))?;
        total_secs += decoded_at as f64 / 48_000.0;
    }
    Ok(format!(
        "10000 payload round trips exact, {flips}/{flips} bit flips rejected, {splices} splices give two exact segments, mean time to first payload {:.2} s",
        total_secs / STARTS as f64
    ))
}

// -------------------- 6 --------------------

fn adversarial_trust() -> Verdict {
    let mut w = World::broadcast(60);
    let mut runs: Vec<(String, Validation)> = Vec::new();

    // Forged manifests: attacker essence signed by keys the platform does not list.
    let attacker = World::with_config(
        60,
        BroadcastConfig { server_code: 4242, distributor_id: "broadcaster".into(), ..Default::default() },
        77,
    );
    let forger = signer("forger");
    let impostor = castprov_core::manifest::Signer::from_seed("broadcaster", &[9; 32]);
    for (k, (s, e)) in [(1.0, 7.0), (12.5, 19.0), (31.0, 38.5), (44.0, 52.0)].into_iter().enumerate() {
        let theirs = erase(&attacker.capture(s, e));
        let flat = flatten_to_monolithic(&theirs).unwrap();
        for who in [&forger, &impostor] {
            let forged = sign_monolithic(&flat, who, "forged", k as i64, vec![]).unwrap();
            runs.push((format!("forged by {} {s}-{e}", who.distributor_id), w.validate(&forged, &replace())));
        }
    }
    // Impostor replicas carry a matching store but the wrong key.
    let source = castprov_core::pipeline::SyntheticSource::new(78, 60_000);
    let impostor_replicas = |cfg: &BroadcastConfig| -> Vec<DataHashSegment> {
        castprov_core::pipeline::produce_replica(&source, cfg, &impostor).unwrap().collect::<Result<_, _>>().unwrap()
    };
    for d in &impostor_replicas(&attacker.cfg) {
        runs.push((format!("impostor replica {}", d.dhs_id), w.validate(&d.replica, &replace())));
    }

    // Watermarks rewritten to authorities whose manifests are signed by unlisted keys.
    let hosted = w.publish_other("mallory", 666, 13, None);
    let unapproved = w.publish_other("pirate", 667, 14, Some(false));
    for (s, e) in [(2.0, 10.0), (20.7, 29.1), (35.0, 44.0)] {
        let clip = w.capture(s, e);
        for (code, label) in [(666, "unlisted"), (667, "unapproved"), (4242, "unpublished")] {
            let rewritten = rewrite(&clip, code, 1000 + (s / CELL_SECONDS) as u32);
            runs.push((format!("rewritten to {label} {s}-{e}"), w.validate(&rewritten, &replace())));
        }
    }
    // The attacker's own published replicas, as uploaded copies.
    for d in hosted.iter().chain(&unapproved) {
        runs.push((format!("attacker replica {}", d.dhs_id), w.validate(&d.replica, &replace())));
        runs.push((format!("attacker capture {}", d.dhs_id), w.validate(&strip_container_metadata(&d.replica), &replace())));
    }

    // Legitimate manifests replayed over different essence.
    for (i, d) in w.dhs.iter().enumerate() {
        let theirs = &attacker.dhs[i].replica;
        let mut replay = d.replica.clone();
        for (mine, other) in replay.fragments.iter_mut().zip(&theirs.fragments) {
            mine.samples = other.samples.clone();
            mine.sample_data = other.sample_data.clone();
        }
        runs.push((format!("replayed replica {}", d.dhs_id), w.validate(&replay, &replace())));
        let mut stripped_wm = replay.clone();
        for f in stripped_wm.fragments.iter_mut().filter(|f| f.track_id == 1) {
            let pcm = castprov_core::watermark::pcm_from_bytes(&f.sample_data);
            f.sample_data = castprov_core::watermark::pcm_to_bytes(&erase_watermark(&pcm));
        }
        runs.push((format!("replayed replica {} without watermark", d.dhs_id), w.validate(&stripped_wm, &replace())));
    }
    let legit = sign_monolithic(&flatten_to_monolithic(&w.capture(5.0, 11.0)).unwrap(), &w.signer, "legit", 0, vec![]).unwrap();
    for (s, e) in [(5.0, 11.0), (40.0, 46.0)] {
        let mut replay = flatten_to_monolithic(&erase(&attacker.capture(s, e))).unwrap();
        replay.container_manifest = legit.container_manifest.clone();
        runs.push((format!("replayed monolithic store over {s}-{e}"), w.validate(&replay, &replace())));
    }

    // An impostor that also copies the broadcaster's watermark gets its upload
    // replaced by the broadcaster's own content; nothing it signed survives.
    let mut replaced = 0;
    for d in &impostor_replicas(&w.cfg) {
        let v = w.validate(&d.replica, &replace());
        let canonical_ok = v.canonical.iter().all(|c| {
            c.distributor_id == w.cfg.distributor_id
                && c.manifests.iter().all(|m| w.dhs.iter().any(|own| own.manifest == *m))
        });
        check(v.outcome.terminal == Terminal::CanonicalProduced && canonical_ok, || {
            format!("impostor with copied watermark gave {:?}", v.outcome.terminal)
        })?;
        check(v.outcome.passed(StepId::EmbeddedBinding) == Some(false), || "impostor store accepted".into())?;
        replaced += 1;
    }

    let successes: Vec<String> = runs
        .iter()
        .filter(|(_, v)| v.outcome.kind == OutcomeKind::Success)
        .map(|(n, v)| format!("{n}: {:?}", v.outcome.terminal))
        .collect();
    check(successes.is_empty(), || format!("{} success verdicts: {}", successes.len(), successes.join("; ")))?;
    let mut by_terminal: BTreeMap<String, usize> = BTreeMap::new();
    for (_, v) in &runs {
        *by_terminal.entry(format!("{:?}", v.outcome.terminal)).or_default() += 1;
    }
    let summary: Vec<String> = by_terminal.iter().map(|(t, n)| format!("{t} {n}")).collect();
    Ok(format!(
        "{} adversarial uploads, 0 success verdicts ({}); {replaced} impostors copying the broadcaster watermark replaced by its canonical content",
        runs.len(),
        summary.join(", ")
    ))
}

// -------------------- 7 --------------------

fn random_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

fn random_store(rng: &mut ChaCha8Rng) -> ManifestStore {
    let count = rng.gen_range(1..4);
    let manifests = (0..count)
        .map(|i| {
            let id = format!("dist-{}", rng.gen_range(0..50));
            let s = signer(&id);
            let binding = MonolithicBinding { alg: "sha256".into(), hash: rng.gen(), exclude: vec!["pmst".into()] };
            let mut extras = Vec::new();
            if rng.gen_bool(0.5) {
                let body = SoftWatermarkBinding { server_code: rng.gen_range(0..=MAX_SERVER_CODE), binx: i, einx: i + 20 };
                extras.push(Assertion::soft_watermark(&body).unwrap());
            }
            if rng.gen_bool(0.5) {
                let fields: BTreeMap<String, String> =
                    (0..rng.gen_range(0..4)).map(|k| (format!("k{k}"), hex::encode(random_bytes(rng, 12)))).collect();
                extras.push(Assertion::content_metadata(&fields).unwrap());
            }
            let info = ClaimInfo { title: hex::encode(random_bytes(rng, 8)), created_at: rng.gen(), dhs_range: None };
            create_manifest(&id, Assertion::monolithic(&binding).unwrap(), extras, &s, info).unwrap()
        })
        .collect::<Vec<_>>();
    let active = rng.gen_range(0..manifests.len());
    ManifestStore { manifests, active }
}

fn random_descriptor(rng: &mut ChaCha8Rng) -> RecoveryDescriptor {
    let mut code = rng.gen_range(0..1000u32);
    let entries = (0..rng.gen_range(0..5))
        .map(|i| {
            let first = code + rng.gen_range(0..3);
            let last = first + rng.gen_range(0..40);
            code = last + 1;
            DescriptorEntry {
                dhs_id: format!("dhs-{i}"),
                first_interval_code: first,
                last_interval_code: last,
                manifest_part_ref: format!("manifest-{i}"),
                valid_until: rng.gen(),
            }
        })
        .collect();
    RecoveryDescriptor {
        version: 1,
        server_code: rng.gen_range(0..=MAX_SERVER_CODE),
        anchor_interval_code: rng.gen_range(0..=MAX_INTERVAL_CODE),
        anchor_media_time_ms: rng.gen_range(0..u32::MAX as u64),
        cell_duration_ms: 1500,
        entries,
        coverage_gap: rng.gen(),
    }
}

fn random_media(rng: &mut ChaCha8Rng) -> MediaObject {
    let tracks: Vec<u32> = (1..=rng.gen_range(1..4)).collect();
    let inits = tracks
        .iter()
        .map(|&t| {
            let mut init = if t == 1 { InitSegment::audio(t) } else { InitSegment::video(t) };
            if rng.gen_bool(0.3) {
                init.provenance = Some(random_bytes(rng, 40));
            }
            if rng.gen_bool(0.2) {
                init.extra.push(BoxNode::data(*b"udta", random_bytes(rng, 16)));
            }
            init
        })
        .collect();
    let kind = if rng.gen_bool(0.8) { MediaKind::Fragmented } else { MediaKind::Monolithic };
    // Tracks stay aligned: every slot holds one fragment per track covering
    // the same whole number of video frames.
    let slots = if kind == MediaKind::Monolithic { 1 } else { rng.gen_range(0..4) };
    let first_frame = if kind == MediaKind::Monolithic { 0 } else { rng.gen_range(0..1000u64) };
    let first_seq: Vec<u32> = tracks.iter().map(|_| rng.gen_range(1..100)).collect();
    let mut fragments = Vec::new();
    let mut frame = first_frame;
    for slot in 0..slots {
        let frames = rng.gen_range(1..6u32);
        for (k, &t) in tracks.iter().enumerate() {
            let (per_frame, time) = if t == 1 { (1920, frame * 1920) } else { (3600, frame * 3600) };
            let samples: Vec<Sample> = if t == 1 {
                vec![Sample { duration: frames * per_frame, size: rng.gen_range(0..64) }]
            } else {
                (0..frames).map(|_| Sample { duration: per_frame, size: rng.gen_range(0..64) }).collect()
            };
            let data_len: u32 = samples.iter().map(|s| s.size).sum();
            let data = (0..data_len).map(|_| rng.gen()).collect();
            let mut f = Fragment::new(t, first_seq[k] + slot, time, samples, data);
            if rng.gen_bool(0.5) {
                f.provenance = Some(random_bytes(rng, 48));
            }
            if rng.gen_bool(0.1) {
                f.extra.push(BoxNode::data(*b"sidx", random_bytes(rng, 12)));
            }
            fragments.push(f);
        }
        frame += frames as u64;
    }
    let mut obj = MediaObject::new(kind, inits, fragments);
    if rng.gen_bool(0.3) {
        obj.container_manifest = Some(random_bytes(rng, 64));
    }
    obj
}

/// Answers recovery and asset requests from `registry`, appending a part of
/// an unknown type to every multipart response.
fn spawn_extra_part_server(registry: SharedRegistry, base_domain: &str) -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let base = base_domain.to_string();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let mut host = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("host") {
                        host = v.trim().to_string();
                    }
                }
            }
            let reg = registry.read().unwrap();
            let reply = match (server_code_from_host(&host, Some(&base)), path.strip_prefix("/assets/")) {
                (Some(_), Some(id)) => reg.asset(id).map(|b| ("application/x-pmf4".to_string(), b)),
                (Some(code), None) => parse_recovery_path(code, &path)
                    .ok()
                    .and_then(|req| reg.serve_recovery(&req).ok())
                    .map(|resp| {
                        let (ct, body) = serialize_recovery_response(&resp).unwrap();
                        (ct.clone(), with_extra_part(&body, &ct))
                    }),
                _ => None,
            };
            drop(reg);
            let head = match &reply {
                Some((ct, body)) => format!("HTTP/1.1 200 OK\r\nContent-Type: {ct}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len()),
                None => "HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n".to_string(),
            };
            let _ = stream.write_all(head.as_bytes());
            if let Some((_, body)) = reply {
                let _ = stream.write_all(&body);
            }
        }
    });
    addr
}

fn with_extra_part(body: &[u8], content_type: &str) -> Vec<u8> {
    let boundary = content_type.rsplit("boundary=\"").next().unwrap().trim_end_matches('"');
    let closing = format!("--{boundary}--\r\n");
    let mut out = body[..body.len() - closing.len()].to_vec();
    out.extend_from_slice(
        format!("--{boundary}\r\nContent-Type: application/x-future-extension\r\nContent-ID: <future>\r\n\r\n\x00\x01future\r\n").as_bytes(),
    );
    out.extend_from_slice(closing.as_bytes());
    out
}

fn serialization_stability() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    const N: usize = 1000;
    for i in 0..N {
        let store = random_store(&mut rng);
        let bytes = serialize_manifest_store(&store).unwrap();
        let back = parse_manifest_store(&bytes).unwrap();
        check(back == store && serialize_manifest_store(&back).unwrap() == bytes, || format!("store {i} differs"))?;

        let d = random_descriptor(&mut rng);
        let bytes = d.to_cbor().unwrap();
        let back = RecoveryDescriptor::from_cbor(&bytes).unwrap();
        check(back == d && back.to_cbor().unwrap() == bytes, || format!("descriptor {i} differs"))?;

        let m = random_media(&mut rng);
        let bytes = serialize_media(&m).unwrap();
        let back = parse_media(&bytes).unwrap();
        check(back == m && serialize_media(&back).unwrap() == bytes, || format!("media object {i} differs"))?;
    }

    let w = World::broadcast(60);
    let domain = w.cfg.base_domain.clone();
    let server = spawn_server(w.client.registry.clone(), Some(domain.clone()), "127.0.0.1:0".parse().unwrap()).unwrap();
    let http = HttpRecoveryClient::new().unwrap().with_resolve(&domain, server.addr());
    let extra = HttpRecoveryClient::new().unwrap().with_resolve(&domain, spawn_extra_part_server(w.client.registry.clone(), &domain));
    let local = LocalRecoveryClient::new(w.client.registry.clone(), Some(&domain));
    let mut requests = 0;
    for (binx, einx) in [(1000, None), (1005, Some(1030)), (1019, Some(1020)), (1039, None), (1010, Some(1039))] {
        let url = castprov_core::recovery::build_recovery_url(Vp1Payload::new(w.cfg.server_code, binx).unwrap(), &domain, einx);
        let expected = local.recover(&url).unwrap();
        check(http.recover(&url).as_ref() == Ok(&expected), || format!("server response for {url} differs"))?;
        check(extra.recover(&url).as_ref() == Ok(&expected), || format!("extra-part response for {url} differs"))?;
        requests += 2;
    }

    // Full validations over both HTTP peers agree with the in-process run.
    let clip = w.perturbed_capture(14.2, 33.0);
    let policy = replace();
    let reference = w.validate(&clip, &policy).outcome;
    for client in [&http, &extra] {
        let ctx = ValidationContext { recovery: client, assets: client, ..w.ctx() };
        let v = validate_media_object(&clip, &ctx, &policy);
        check(v.outcome == reference, || format!("HTTP validation gave {:?}", v.outcome.terminal))?;
    }
    let (ct, body) = serialize_recovery_response(&local.recover(&castprov_core::recovery::build_recovery_url(
        Vp1Payload::new(w.cfg.server_code, 1000).unwrap(),
        &domain,
        None,
    )).unwrap())
    .unwrap();
    check(parse_recovery_response(&with_extra_part(&body, &ct), &ct).is_ok(), || "extra part rejected".into())?;
    Ok(format!(
        "{N} stores, {N} descriptors, {N} media objects byte-identical; {requests} HTTP recoveries and 2 HTTP validations agree, unknown part ignored"
    ))
}
