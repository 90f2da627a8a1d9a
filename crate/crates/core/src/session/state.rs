//! Session states and the only transitions allowed between them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Initializing,
    AtBasePose,
    WaitingForStart,
    Approaching,
    Running,
    Resetting,
    Shutdown,
}

impl SessionState {
    pub const ALL: [SessionState; 7] = [
        SessionState::Initializing,
        SessionState::AtBasePose,
        SessionState::WaitingForStart,
        SessionState::Approaching,
        SessionState::Running,
        SessionState::Resetting,
        SessionState::Shutdown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Initializing => "initializing",
            SessionState::AtBasePose => "at_base_pose",
            SessionState::WaitingForStart => "waiting_for_start",
            SessionState::Approaching => "approaching",
            SessionState::Running => "running",
            SessionState::Resetting => "resetting",
            SessionState::Shutdown => "shutdown",
        }
    }
}

impl std::fmt::Display for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The transition table. `WaitingForStart → Shutdown` covers cancellation
/// and a leader with no sessions left; `Approaching → WaitingForStart` is an
/// aborted approach.
pub const TRANSITIONS: [(SessionState, SessionState); 10] = {
    use SessionState::*;
    [
        (Initializing, AtBasePose),
        (AtBasePose, WaitingForStart),
        (WaitingForStart, Approaching),
        (WaitingForStart, Shutdown),
        (Approaching, Running),
        (Approaching, WaitingForStart),
        (Running, Resetting),
        (Running, Shutdown),
        (Resetting, WaitingForStart),
        (Resetting, Shutdown),
    ]
};

pub fn is_legal(from: SessionState, to: SessionState) -> bool {
    TRANSITIONS.contains(&(from, to))
}

/// Things that can happen to a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionEvent {
    Initialized,
    FeedbackStarted,
    StartSignal,
    ApproachDone,
    ApproachFailed,
    EndSignal,
    Disconnect,
    ResetDone,
    ResetFailed,
    Cancel,
    LeaderFinished,
}

impl SessionEvent {
    pub const ALL: [SessionEvent; 11] = [
        SessionEvent::Initialized,
        SessionEvent::FeedbackStarted,
        SessionEvent::StartSignal,
        SessionEvent::ApproachDone,
        SessionEvent::ApproachFailed,
        SessionEvent::EndSignal,
        SessionEvent::Disconnect,
        SessionEvent::ResetDone,
        SessionEvent::ResetFailed,
        SessionEvent::Cancel,
        SessionEvent::LeaderFinished,
    ];
}

/// Next state for `event`, or `None` when the event does not apply.
pub fn next_state(state: SessionState, event: SessionEvent) -> Option<SessionState> {
    use SessionEvent as E;
    use SessionState as S;
    let to = match (state, event) {
        (S::Initializing, E::Initialized) => S::AtBasePose,
        (S::AtBasePose, E::FeedbackStarted) => S::WaitingForStart,
        (S::WaitingForStart, E::StartSignal) => S::Approaching,
        (S::WaitingForStart, E::Cancel | E::LeaderFinished) => S::Shutdown,
        (S::Approaching, E::ApproachDone) => S::Running,
        (S::Approaching, E::ApproachFailed | E::Disconnect) => S::WaitingForStart,
        (S::Running, E::EndSignal | E::Disconnect) => S::Resetting,
        (S::Running, E::Cancel) => S::Shutdown,
        (S::Resetting, E::ResetDone) => S::WaitingForStart,
        (S::Resetting, E::ResetFailed | E::Cancel) => S::Shutdown,
        _ => return None,
    };
    debug_assert!(is_legal(state, to));
    Some(to)
}
