//! Decision steps, terminals and the state graph connecting them.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

/// A decision step, labeled as in the published validation flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepId {
    ManifestPresent,
    DistributorRegistered,
    EmbeddedBinding,
    WatermarkPresent,
    ManifestRetrieved,
    SignatureApproved,
    RecoveredBinding,
    CanonicalDecision,
    PerformCanonical,
    CanonicalRetrieved,
    CanonicalValidated,
}

impl StepId {
    pub const ALL: [StepId; 11] = [
        StepId::ManifestPresent,
        StepId::DistributorRegistered,
        StepId::EmbeddedBinding,
        StepId::WatermarkPresent,
        StepId::ManifestRetrieved,
        StepId::SignatureApproved,
        StepId::RecoveredBinding,
        StepId::CanonicalDecision,
        StepId::PerformCanonical,
        StepId::CanonicalRetrieved,
        StepId::CanonicalValidated,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StepId::ManifestPresent => "3-1",
            StepId::DistributorRegistered => "3-2",
            StepId::EmbeddedBinding => "3-3",
            StepId::WatermarkPresent => "3-4",
            StepId::ManifestRetrieved => "3-5",
            StepId::SignatureApproved => "3-6",
            StepId::RecoveredBinding => "3-7",
            StepId::CanonicalDecision => "4-8",
            StepId::PerformCanonical => "4-9",
            StepId::CanonicalRetrieved => "4-10",
            StepId::CanonicalValidated => "4-11",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.label() == label)
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for StepId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepResult {
    pub step: StepId,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Terminal {
    EmbeddedValid,
    WatermarkRecoveredValid,
    NoManifestNoWatermark,
    UnregisteredDistributor,
    RetrievalFailed,
    UntrustedSignature,
    BindingMismatch,
    CanonicalProduced,
    CanonicalDeclined,
    CanonicalValidationError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Success,
    Exception,
}

impl Terminal {
    pub const ALL: [Terminal; 10] = [
        Terminal::EmbeddedValid,
        Terminal::WatermarkRecoveredValid,
        Terminal::NoManifestNoWatermark,
        Terminal::UnregisteredDistributor,
        Terminal::RetrievalFailed,
        Terminal::UntrustedSignature,
        Terminal::BindingMismatch,
        Terminal::CanonicalProduced,
        Terminal::CanonicalDeclined,
        Terminal::CanonicalValidationError,
    ];

    pub fn kind(self) -> OutcomeKind {
        match self {
            Terminal::EmbeddedValid | Terminal::WatermarkRecoveredValid | Terminal::CanonicalProduced => {
                OutcomeKind::Success
            }
            _ => OutcomeKind::Exception,
        }
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub type Path = Vec<(StepId, bool)>;

/// Every complete path through the decision graph with its terminal.
pub fn state_graph() -> Vec<(Path, Terminal)> {
    use StepId::*;
    let embedded: [(Path, Terminal); 3] = [
        (vec![(ManifestPresent, false)], Terminal::NoManifestNoWatermark),
        (vec![(ManifestPresent, true), (DistributorRegistered, false)], Terminal::UnregisteredDistributor),
        (
            vec![(ManifestPresent, true), (DistributorRegistered, true), (EmbeddedBinding, false)],
            Terminal::BindingMismatch,
        ),
    ];
    let mut out = vec![(
        vec![(ManifestPresent, true), (DistributorRegistered, true), (EmbeddedBinding, true)],
        Terminal::EmbeddedValid,
    )];
    for (prefix, no_watermark) in embedded {
        let wm = [(WatermarkPresent, true), (ManifestRetrieved, true), (SignatureApproved, true)];
        let mismatch = [&wm[..], &[(RecoveredBinding, false)]].concat();
        let canon = [&mismatch[..], &[(CanonicalDecision, true), (PerformCanonical, true)]].concat();
        let tails: Vec<(Path, Terminal)> = vec![
            (vec![(WatermarkPresent, false)], no_watermark),
            (vec![wm[0], (ManifestRetrieved, false)], Terminal::RetrievalFailed),
            (vec![wm[0], wm[1], (SignatureApproved, false)], Terminal::UntrustedSignature),
            ([&wm[..], &[(RecoveredBinding, true)]].concat(), Terminal::WatermarkRecoveredValid),
            ([&mismatch[..], &[(CanonicalDecision, false)]].concat(), Terminal::CanonicalDeclined),
            (
                [&mismatch[..], &[(CanonicalDecision, true), (PerformCanonical, false)]].concat(),
                Terminal::CanonicalDeclined,
            ),
            ([&canon[..], &[(CanonicalRetrieved, false)]].concat(), Terminal::CanonicalValidationError),
            (
                [&canon[..], &[(CanonicalRetrieved, true), (CanonicalValidated, false)]].concat(),
                Terminal::CanonicalValidationError,
            ),
            ([&canon[..], &[(CanonicalRetrieved, true), (CanonicalValidated, true)]].concat(), Terminal::CanonicalProduced),
        ];
        for (tail, terminal) in tails {
            out.push(([&prefix[..], &tail[..]].concat(), terminal));
        }
    }
    out
}

/// Terminal of a complete trail, or `None` when the trail is not a complete
/// path through the graph.
pub fn terminal_for_trail(trail: &[(StepId, bool)]) -> Option<Terminal> {
    use StepId::*;
    let (no_watermark, rest) = match trail {
        [(ManifestPresent, true), (DistributorRegistered, true), (EmbeddedBinding, true)] => {
            return Some(Terminal::EmbeddedValid)
        }
        [(ManifestPresent, false), rest @ ..] => (Terminal::NoManifestNoWatermark, rest),
        [(ManifestPresent, true), (DistributorRegistered, false), rest @ ..] => (Terminal::UnregisteredDistributor, rest),
        [(ManifestPresent, true), (DistributorRegistered, true), (EmbeddedBinding, false), rest @ ..] => {
            (Terminal::BindingMismatch, rest)
        }
        _ => return None,
    };
    let tail = match rest {
        [(WatermarkPresent, false)] => return Some(no_watermark),
        [(WatermarkPresent, true), (ManifestRetrieved, false)] => return Some(Terminal::RetrievalFailed),
        [(WatermarkPresent, true), (ManifestRetrieved, true), (SignatureApproved, false)] => {
            return Some(Terminal::UntrustedSignature)
        }
        [(WatermarkPresent, true), (ManifestRetrieved, true), (SignatureApproved, true), (RecoveredBinding, true)] => {
            return Some(Terminal::WatermarkRecoveredValid)
        }
        [(WatermarkPresent, true), (ManifestRetrieved, true), (SignatureApproved, true), (RecoveredBinding, false), tail @ ..] => {
            tail
        }
        _ => return None,
    };
    match tail {
        [(CanonicalDecision, false)] | [(CanonicalDecision, true), (PerformCanonical, false)] => {
            Some(Terminal::CanonicalDeclined)
        }
        [(CanonicalDecision, true), (PerformCanonical, true), (CanonicalRetrieved, false)]
        | [(CanonicalDecision, true), (PerformCanonical, true), (CanonicalRetrieved, true), (CanonicalValidated, false)] => {
            Some(Terminal::CanonicalValidationError)
        }
        [(CanonicalDecision, true), (PerformCanonical, true), (CanonicalRetrieved, true), (CanonicalValidated, true)] => {
            Some(Terminal::CanonicalProduced)
        }
        _ => None,
    }
}
