//! Notices a session emits (state changes, warnings, recording files), kept
//! in a bounded ring so late readers can catch up by sequence number.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::state::SessionState;

pub const FEED_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NoticeKind {
    Transition {
        from: SessionState,
        to: SessionState,
    },
    Warning {
        message: String,
    },
    Error {
        message: String,
    },
    RecordingStarted {
        path: PathBuf,
    },
    RecordingFinished {
        path: PathBuf,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionNotice {
    pub seq: u64,
    /// Session clock, seconds.
    pub timestamp: f64,
    #[serde(flatten)]
    pub kind: NoticeKind,
}

#[derive(Debug)]
struct Ring {
    next_seq: u64,
    items: VecDeque<SessionNotice>,
}

/// Cloneable handle to a session's notice ring.
#[derive(Debug, Clone)]
pub struct EventFeed {
    ring: Arc<Mutex<Ring>>,
}

impl Default for EventFeed {
    fn default() -> Self {
        Self {
            ring: Arc::new(Mutex::new(Ring {
                next_seq: 1,
                items: VecDeque::new(),
            })),
        }
    }
}

impl EventFeed {
    pub fn push(&self, timestamp: f64, kind: NoticeKind) -> u64 {
        let mut r = self.ring.lock().unwrap_or_else(|e| e.into_inner());
        let seq = r.next_seq;
        r.next_seq += 1;
        if r.items.len() == FEED_CAPACITY {
            r.items.pop_front();
        }
        r.items.push_back(SessionNotice {
            seq,
            timestamp,
            kind,
        });
        seq
    }

    /// Notices with `seq > after`, oldest first. Older ones may have been
    /// dropped from the ring.
    pub fn since(&self, after: u64) -> Vec<SessionNotice> {
        let r = self.ring.lock().unwrap_or_else(|e| e.into_inner());
        r.items.iter().filter(|n| n.seq > after).cloned().collect()
    }

    pub fn last_seq(&self) -> u64 {
        self.ring.lock().unwrap_or_else(|e| e.into_inner()).next_seq - 1
    }

    /// State changes still in the ring, in order.
    pub fn transitions(&self) -> Vec<(SessionState, SessionState)> {
        self.since(0)
            .into_iter()
            .filter_map(|n| match n.kind {
                NoticeKind::Transition { from, to } => Some((from, to)),
                _ => None,
            })
            .collect()
    }
}
