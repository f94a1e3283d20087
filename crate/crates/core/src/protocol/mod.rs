//! The five-step session between a Seller and a Buyer.
//!
//! 1. Hello, configuration agreement, Seller statistics.
//! 2. Blind signatures for every statement and metric element, then the PSI
//!    filter. All signed batches go out before any filter does.
//! 3. One counting filter per agreed metric.
//! 4. k-out-of-n transfer of Seller graph parts.
//! 5. The Seller discloses graph and secrets so the Buyer can replay 2–4.
//!
//! Either side may stop at every step boundary.

mod buyer;
mod config;
mod engine;
mod message;
mod seller;
mod transcript;
mod verify;

use std::fmt;

use serde::Serialize;

pub use buyer::{run_buyer, BuyerOptions, BuyerOutcome, SessionResults};
pub use config::{ConfigError, SessionConfig, CONFIG_KEYS};
pub use engine::{Disclosure, EngineError, SellerEngine, SellerSecrets, Tamper};
pub use message::{step_of, tag, tag_name, DecodeError, Message, Purpose, PROTOCOL_VERSION};
pub use seller::{run_seller, SellerOptions, SellerOutcome};
pub use transcript::{RecordSummary, Transcript, TranscriptRecord};
pub use verify::{verify_disclosure, VerificationCheck, VerificationReport, VerifyError, VerifyMode};

use crate::entropy::{EntropyResult, MetricId};
use crate::kg::GraphStatistics;
use crate::net::{Channel, MeteredChannel, NetError, TrafficMeter};
use crate::ot::RecoveredPart;
use crate::psi::IntersectionResult;
use crate::role::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    UserDecline,
    PeerAbort,
    ProtocolViolation,
    BudgetExceeded,
    ConfigMismatch,
    Misbehavior,
    Transport,
    Parameter,
}

impl AbortReason {
    pub fn name(self) -> &'static str {
        match self {
            AbortReason::UserDecline => "user-decline",
            AbortReason::PeerAbort => "peer-abort",
            AbortReason::ProtocolViolation => "protocol-violation",
            AbortReason::BudgetExceeded => "budget-exceeded",
            AbortReason::ConfigMismatch => "config-mismatch",
            AbortReason::Misbehavior => "misbehavior",
            AbortReason::Transport => "transport",
            AbortReason::Parameter => "parameter",
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Init,
    Step1Done,
    SignaturesServed,
    FiltersSent,
    Step3Done,
    Step4Done,
    Closed,
    Aborted { step: u8, reason: AbortReason },
}

impl SessionState {
    fn rank(self) -> Option<u8> {
        Some(match self {
            SessionState::Init => 0,
            SessionState::Step1Done => 1,
            SessionState::SignaturesServed => 2,
            SessionState::FiltersSent => 3,
            SessionState::Step3Done => 4,
            SessionState::Step4Done => 5,
            SessionState::Closed => 6,
            SessionState::Aborted { .. } => return None,
        })
    }

    /// Whether `next` is the immediate successor of `self`, or an abort
    /// from a live state.
    pub fn can_move_to(self, next: SessionState) -> bool {
        match (self.rank(), next) {
            (None, _) => false,
            (Some(6), _) => false,
            (Some(_), SessionState::Aborted { .. }) => true,
            (Some(r), n) => n.rank() == Some(r + 1),
        }
    }

    pub fn is_closed(self) -> bool {
        self == SessionState::Closed
    }

    pub fn is_aborted(self) -> bool {
        matches!(self, SessionState::Aborted { .. })
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionState::Aborted { step, reason } => write!(f, "Aborted(step{step}, {reason})"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl Serialize for SessionState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A point where a party may stop the session.
#[derive(Debug, Clone, Copy)]
pub enum Checkpoint<'a> {
    /// Buyer, after reading the Seller statistics.
    Statistics(&'a GraphStatistics),
    /// Buyer, after computing the intersection. Narrowing the metrics is
    /// possible only here.
    Intersection {
        result: &'a IntersectionResult,
        metrics: &'a [MetricId],
    },
    /// Buyer, after the entropy estimates.
    Entropy(&'a [EntropyResult]),
    /// Buyer, after opening the transferred parts.
    Parts(&'a [RecoveredPart]),
    /// Seller, before releasing the artifacts of the given step (5 is the
    /// disclosure).
    SellerRelease(u8),
}

impl Checkpoint<'_> {
    pub fn step(&self) -> u8 {
        match self {
            Checkpoint::Statistics(_) => 1,
            Checkpoint::Intersection { .. } => 2,
            Checkpoint::Entropy(_) => 3,
            Checkpoint::Parts(_) => 4,
            Checkpoint::SellerRelease(step) => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Abort,
    /// Continue with a subset of the agreed metrics.
    SelectMetrics(Vec<MetricId>),
}

pub trait Decider {
    fn decide(&mut self, checkpoint: &Checkpoint<'_>) -> Decision;
}

impl<F: FnMut(&Checkpoint<'_>) -> Decision> Decider for F {
    fn decide(&mut self, checkpoint: &Checkpoint<'_>) -> Decision {
        self(checkpoint)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysContinue;

impl Decider for AlwaysContinue {
    fn decide(&mut self, _: &Checkpoint<'_>) -> Decision {
        Decision::Continue
    }
}

/// Why a run stopped early. `notify` says whether the peer still needs an
/// ABORT frame.
#[derive(Debug)]
struct Halt {
    step: u8,
    reason: AbortReason,
    detail: String,
    notify: bool,
}

impl Halt {
    fn new(step: u8, reason: AbortReason, detail: impl Into<String>) -> Self {
        Self {
            step,
            reason,
            detail: detail.into(),
            notify: !matches!(reason, AbortReason::PeerAbort | AbortReason::Transport),
        }
    }

    fn transport(step: u8, e: &NetError) -> Self {
        Self::new(
            step,
            AbortReason::Transport,
            format!("{e}; the session cannot be resumed, start a new one"),
        )
    }
}

/// Metered, transcribed message channel for one party.
struct Link<C: Channel> {
    channel: MeteredChannel<C>,
    transcript: Transcript,
    role: Role,
    retain_outbound: bool,
}

impl<C: Channel> Link<C> {
    fn new(channel: C, role: Role, retain_outbound: bool) -> Self {
        Self {
            channel: MeteredChannel::new(channel, role, step_of),
            transcript: Transcript::new(),
            role,
            retain_outbound,
        }
    }

    fn send(&mut self, step: u8, msg: &Message) -> Result<(), Halt> {
        let payload = msg.encode();
        let t = msg.tag();
        self.channel
            .send_frame(t, &payload)
            .map_err(|e| Halt::transport(step, &e))?;
        self.transcript
            .record(step_of(t, &payload), self.role.outbound(), t, &payload, self.retain_outbound);
        Ok(())
    }

    /// Next message; a peer ABORT becomes a halt.
    fn recv(&mut self, step: u8) -> Result<Message, Halt> {
        let frame = self.channel.recv_frame().map_err(|e| Halt::transport(step, &e))?;
        self.transcript
            .record(step_of(frame.tag, &frame.payload), self.role.inbound(), frame.tag, &frame.payload, false);
        match Message::decode(frame.tag, &frame.payload) {
            Ok(Message::Abort { step, reason }) => Err(Halt::new(step, AbortReason::PeerAbort, reason)),
            Ok(m) => Ok(m),
            Err(e) => Err(Halt::new(step, AbortReason::ProtocolViolation, e.to_string())),
        }
    }

    /// Sends ABORT if the peer needs one, then closes.
    fn abort(&mut self, halt: &Halt) {
        if halt.notify {
            let _ = self.send(
                halt.step,
                &Message::Abort {
                    step: halt.step,
                    reason: halt.reason.name().to_string(),
                },
            );
        }
        self.channel.close();
    }

    fn finish(mut self) -> (Transcript, TrafficMeter) {
        self.channel.close();
        let (_, meter) = self.channel.into_inner();
        (self.transcript, meter)
    }
}

fn unexpected(step: u8, expected: &str, got: &Message) -> Halt {
    Halt::new(
        step,
        AbortReason::ProtocolViolation,
        format!("expected {expected}, received {}", tag_name(got.tag())),
    )
}

/// Moves `state` forward, refusing anything off the linear order.
fn advance(state: &mut SessionState, next: SessionState, step: u8) -> Result<(), Halt> {
    if !state.can_move_to(next) {
        return Err(Halt::new(
            step,
            AbortReason::ProtocolViolation,
            format!("illegal transition {state} -> {next}"),
        ));
    }
    *state = next;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_move_in_order_only() {
        use SessionState::*;
        let order = [Init, Step1Done, SignaturesServed, FiltersSent, Step3Done, Step4Done, Closed];
        for (i, a) in order.iter().enumerate() {
            for (j, b) in order.iter().enumerate() {
                assert_eq!(a.can_move_to(*b), j == i + 1, "{a} -> {b}");
            }
            let abort = Aborted { step: 1, reason: AbortReason::UserDecline };
            assert_eq!(a.can_move_to(abort), *a != Closed);
            assert!(!abort.can_move_to(*a));
        }
    }

    #[test]
    fn state_display() {
        let s = SessionState::Aborted { step: 2, reason: AbortReason::UserDecline };
        assert_eq!(s.to_string(), "Aborted(step2, user-decline)");
        assert_eq!(SessionState::Closed.to_string(), "Closed");
    }
}
