//! Platform policy and the action record it produces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::compare::ComparisonReport;
use super::trail::StepId;
use super::ValidatorError;

/// What the platform does once canonical content exists for an upload that
/// failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyAction {
    AttachSideBySide,
    OfferChoice,
    AutoCompare,
    Replace,
    ForwardToModeration,
}

/// Who decides whether canonical processing runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanonicalDecision {
    Automatic,
    /// An external hook (the uploader or a moderator) must answer first.
    RequireApprovalHook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PlatformPolicy {
    pub action: PolicyAction,
    pub canonical_decision: CanonicalDecision,
    /// The hook's answer when re-entering after a pending record.
    pub approval: Option<bool>,
}

impl Default for PlatformPolicy {
    fn default() -> Self {
        PlatformPolicy { action: PolicyAction::AttachSideBySide, canonical_decision: CanonicalDecision::Automatic, approval: None }
    }
}

impl PlatformPolicy {
    pub fn new(action: PolicyAction, canonical_decision: CanonicalDecision) -> Self {
        PlatformPolicy { action, canonical_decision, approval: None }
    }

    pub fn with_approval(mut self, approval: bool) -> Self {
        self.approval = Some(approval);
        self
    }

    /// `None` while the decision is still pending.
    pub fn decision(&self) -> Option<bool> {
        match self.canonical_decision {
            CanonicalDecision::Automatic => Some(true),
            CanonicalDecision::RequireApprovalHook => self.approval,
        }
    }
}

const ACTION_NAMES: [(&str, PolicyAction); 5] = [
    ("attach-side-by-side", PolicyAction::AttachSideBySide),
    ("offer-choice", PolicyAction::OfferChoice),
    ("auto-compare", PolicyAction::AutoCompare),
    ("replace", PolicyAction::Replace),
    ("forward-to-moderation", PolicyAction::ForwardToModeration),
];

impl FromStr for PolicyAction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ACTION_NAMES.iter().find(|(n, _)| *n == s).map(|(_, a)| *a).ok_or_else(|| {
            format!("unknown action '{s}', expected one of {}", ACTION_NAMES.map(|(n, _)| n).join(", "))
        })
    }
}

impl fmt::Display for PolicyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(ACTION_NAMES.iter().find(|(_, a)| a == self).map(|(n, _)| *n).unwrap_or_default())
    }
}

impl FromStr for CanonicalDecision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "automatic" => Ok(CanonicalDecision::Automatic),
            "require-approval" => Ok(CanonicalDecision::RequireApprovalHook),
            _ => Err(format!("unknown decision mode '{s}', expected automatic or require-approval")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionStatus {
    Completed,
    /// Waiting for an external hook to pick or moderate.
    PendingExternalHook,
    /// Waiting for the canonical-processing decision.
    PendingApproval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PlatformAction {
    pub action: PolicyAction,
    pub status: ActionStatus,
    pub uploaded_id: String,
    pub canonical_ids: Vec<String>,
    /// Objects to publish as the post's payload.
    pub payload_refs: Vec<String>,
    /// Objects to post alongside or offer instead of the payload.
    pub attachments: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<ComparisonReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trail: Vec<StepId>,
}

/// Inputs to [`apply_policy`] gathered from a validation run.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub uploaded_id: &'a str,
    pub canonical_ids: &'a [String],
    pub comparisons: &'a [ComparisonReport],
    pub trail: &'a [StepId],
}

pub fn apply_policy(input: PolicyInput<'_>, policy: &PlatformPolicy) -> Result<PlatformAction, ValidatorError> {
    if input.canonical_ids.is_empty() {
        return Err(ValidatorError::CanonicalUnavailable);
    }
    let uploaded = vec![input.uploaded_id.to_string()];
    let canonical = input.canonical_ids.to_vec();
    let mut record = PlatformAction {
        action: policy.action,
        status: ActionStatus::Completed,
        uploaded_id: input.uploaded_id.to_string(),
        canonical_ids: canonical.clone(),
        payload_refs: uploaded,
        attachments: canonical.clone(),
        comparisons: Vec::new(),
        trail: Vec::new(),
    };
    match policy.action {
        PolicyAction::AttachSideBySide => {}
        PolicyAction::OfferChoice => record.status = ActionStatus::PendingExternalHook,
        PolicyAction::AutoCompare => record.comparisons = input.comparisons.to_vec(),
        PolicyAction::Replace => {
            record.payload_refs = canonical;
            record.attachments.clear();
        }
        PolicyAction::ForwardToModeration => {
            record.status = ActionStatus::PendingExternalHook;
            record.trail = input.trail.to_vec();
        }
    }
    Ok(record)
}

/// The record emitted while the canonical-processing decision is pending.
pub fn pending_approval(uploaded_id: &str, policy: &PlatformPolicy, trail: &[StepId]) -> PlatformAction {
    PlatformAction {
        action: policy.action,
        status: ActionStatus::PendingApproval,
        uploaded_id: uploaded_id.to_string(),
        canonical_ids: Vec::new(),
        payload_refs: vec![uploaded_id.to_string()],
        attachments: Vec::new(),
        comparisons: Vec::new(),
        trail: trail.to_vec(),
    }
}
