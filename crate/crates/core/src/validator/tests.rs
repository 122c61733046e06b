use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::bmff::{slice_fragments, MediaKind};
use crate::pipeline::{concat_replicas, produce_replica, simulate_capture, BroadcastConfig, SyntheticSource};
use crate::testutil::signer;

#[test]
fn state_graph_is_a_function_of_the_trail() {
    let graph = state_graph();
    assert_eq!(graph.len(), 1 + 3 * 9);
    let paths: BTreeSet<_> = graph.iter().map(|(p, _)| p.clone()).collect();
    assert_eq!(paths.len(), graph.len(), "paths are distinct");
    for (path, terminal) in &graph {
        assert_eq!(terminal_for_trail(path), Some(*terminal), "{path:?}");
        for cut in 0..path.len() {
            assert_eq!(terminal_for_trail(&path[..cut]), None, "prefix of {path:?}");
        }
        for step in StepId::ALL {
            let mut longer = path.clone();
            longer.push((step, true));
            assert_eq!(terminal_for_trail(&longer), None);
        }
    }
    let reached: BTreeSet<Terminal> = graph.iter().map(|g| g.1).collect();
    assert_eq!(reached, Terminal::ALL.into_iter().collect());
}

#[test]
fn success_kinds() {
    let success: Vec<Terminal> = Terminal::ALL.into_iter().filter(|t| t.kind() == OutcomeKind::Success).collect();
    assert_eq!(success, [Terminal::EmbeddedValid, Terminal::WatermarkRecoveredValid, Terminal::CanonicalProduced]);
}

#[test]
fn step_labels() {
    let labels: Vec<&str> = StepId::ALL.iter().map(|s| s.label()).collect();
    assert_eq!(labels, ["3-1", "3-2", "3-3", "3-4", "3-5", "3-6", "3-7", "4-8", "4-9", "4-10", "4-11"]);
    for s in StepId::ALL {
        assert_eq!(StepId::from_label(s.label()), Some(s));
    }
    assert_eq!(serde_json::to_string(&StepId::CanonicalRetrieved).unwrap(), "\"4-10\"");
}

proptest! {
    #[test]
    fn only_graph_paths_have_terminals(
        steps in prop::collection::vec((0usize..11, any::<bool>()), 0..12)
    ) {
        let trail: Vec<(StepId, bool)> = steps.into_iter().map(|(i, b)| (StepId::ALL[i], b)).collect();
        let in_graph = state_graph().into_iter().find(|(p, _)| *p == trail).map(|g| g.1);
        prop_assert_eq!(terminal_for_trail(&trail), in_graph);
    }
}

// -------------------- comparison --------------------

fn replicas() -> Vec<crate::pipeline::DataHashSegment> {
    let cfg = BroadcastConfig::default();
    let s = signer(&cfg.distributor_id);
    let src = SyntheticSource::new(5, 30_000);
    produce_replica(&src, &cfg, &s).unwrap().collect::<Result<_, _>>().unwrap()
}

#[test]
fn comparison_of_identical_essence() {
    let dhs = replicas();
    let uploaded = simulate_capture(&dhs, 2.0, 23.0).unwrap();
    let canonical = slice_fragments(&concat_replicas(&dhs).unwrap(), 2.0, 23.0).unwrap();
    let r = compare_assets(&uploaded, &canonical, 2.0).unwrap();
    assert_eq!(r.matching_essence_byte_ratio, 1.0);
    assert_eq!(r.duration_delta_seconds, 0.0);
    let audio = &r.tracks[0];
    assert_eq!((audio.track.as_str(), audio.compared_bytes, audio.differing_bytes), ("audio", 2 * 21 * 48_000, 0));
    let frame_bytes: u64 = video_frames(&canonical).iter().map(|f| f.data.len() as u64).sum();
    assert_eq!(r.tracks[1].compared_bytes, frame_bytes);
    assert_eq!(r.overlap_bytes, 2 * 21 * 48_000 + frame_bytes);
}

#[test]
fn comparison_counts_single_bytes() {
    let dhs = replicas();
    let mut uploaded = simulate_capture(&dhs, 2.0, 23.0).unwrap();
    let canonical = slice_fragments(&concat_replicas(&dhs).unwrap(), 2.0, 23.0).unwrap();
    uploaded.fragments[0].sample_data[1001] ^= 0x80;
    let r = compare_assets(&uploaded, &canonical, 2.0).unwrap();
    let expected = 1.0 - 1.0 / r.overlap_bytes as f64;
    assert!((r.matching_essence_byte_ratio - expected).abs() < 1e-15);
    assert_eq!(r.tracks[0].differing_bytes, 1);
}

#[test]
fn comparison_reports_outward_rounding() {
    let dhs = replicas();
    let uploaded = simulate_capture(&dhs, 2.0, 22.0).unwrap();
    let canonical = slice_fragments(&concat_replicas(&dhs).unwrap(), 2.0, 23.0).unwrap();
    let r = compare_assets(&uploaded, &canonical, 2.0).unwrap();
    assert_eq!(r.duration_delta_seconds, 1.0);
    assert_eq!(r.matching_essence_byte_ratio, 1.0);
    assert_eq!(compare_assets(&uploaded, &canonical, 40.0), Err(ValidatorError::NoOverlap));
    let mono_empty = MediaObject::new(MediaKind::Monolithic, vec![], vec![]);
    assert_eq!(compare_assets(&mono_empty, &canonical, 2.0), Err(ValidatorError::NoOverlap));
}

// -------------------- policy --------------------

fn sample_report() -> ComparisonReport {
    ComparisonReport { duration_delta_seconds: 0.5, matching_essence_byte_ratio: 0.9, overlap_bytes: 10, tracks: vec![] }
}

#[test]
fn policy_actions() {
    let canon = vec!["sha256:c".to_string()];
    let comparisons = vec![sample_report()];
    let trail = [StepId::ManifestPresent, StepId::WatermarkPresent];
    let input = PolicyInput { uploaded_id: "sha256:u", canonical_ids: &canon, comparisons: &comparisons, trail: &trail };
    let run = |a| apply_policy(input, &PlatformPolicy::new(a, CanonicalDecision::Automatic)).unwrap();

    let side = run(PolicyAction::AttachSideBySide);
    assert_eq!((side.payload_refs.clone(), side.attachments.clone()), (vec!["sha256:u".into()], canon.clone()));
    assert_eq!(side.status, ActionStatus::Completed);

    let choice = run(PolicyAction::OfferChoice);
    assert_eq!(choice.status, ActionStatus::PendingExternalHook);
    assert_eq!(choice.attachments, canon);

    assert_eq!(run(PolicyAction::AutoCompare).comparisons, comparisons);

    let replace = run(PolicyAction::Replace);
    assert_eq!(replace.payload_refs, canon);
    assert!(replace.attachments.is_empty());

    let moderation = run(PolicyAction::ForwardToModeration);
    assert_eq!(moderation.status, ActionStatus::PendingExternalHook);
    assert_eq!((moderation.uploaded_id.as_str(), moderation.canonical_ids.clone()), ("sha256:u", canon.clone()));
    assert_eq!(moderation.trail, trail);

    let none = PolicyInput { canonical_ids: &[], ..input };
    assert_eq!(apply_policy(none, &PlatformPolicy::default()), Err(ValidatorError::CanonicalUnavailable));
}

#[test]
fn policy_decisions_and_names() {
    let hook = PlatformPolicy::new(PolicyAction::Replace, CanonicalDecision::RequireApprovalHook);
    assert_eq!(hook.decision(), None);
    assert_eq!(hook.with_approval(false).decision(), Some(false));
    assert_eq!(hook.with_approval(true).decision(), Some(true));
    assert_eq!(PlatformPolicy::default().decision(), Some(true));
    for a in [
        PolicyAction::AttachSideBySide,
        PolicyAction::OfferChoice,
        PolicyAction::AutoCompare,
        PolicyAction::Replace,
        PolicyAction::ForwardToModeration,
    ] {
        assert_eq!(a.to_string().parse::<PolicyAction>(), Ok(a));
    }
    assert!("shred".parse::<PolicyAction>().is_err());
    assert_eq!("require-approval".parse(), Ok(CanonicalDecision::RequireApprovalHook));
    let pending = pending_approval("sha256:u", &hook, &[StepId::RecoveredBinding]);
    assert_eq!(pending.status, ActionStatus::PendingApproval);
    assert!(pending.canonical_ids.is_empty());
}

#[test]
fn object_ids_track_content() {
    let dhs = replicas();
    let a = &dhs[0].replica;
    let mut b = a.clone();
    assert_eq!(object_id(a), object_id(&b));
    b.fragments[3].sample_data[0] ^= 1;
    assert_ne!(object_id(a), object_id(&b));
    assert!(object_id(a).starts_with("sha256:") && object_id(a).len() == 7 + 64);
}
