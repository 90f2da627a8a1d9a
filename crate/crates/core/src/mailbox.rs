//! Single-slot latest-value mailboxes.
//!
//! Writers overwrite, readers clone the freshest value. Nothing ever queues, so
//! a slow reader only ever misses intermediate values. The lock is held just
//! long enough to swap or clone.

use std::sync::{Arc, Mutex};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct Stamped<T> {
    pub value: T,
    /// Strictly increasing per mailbox, starting at 1.
    pub seq: u64,
    pub published_at: Instant,
}

#[derive(Debug)]
struct Slot<T> {
    latest: Option<Stamped<T>>,
    next_seq: u64,
}

/// Cloneable handle; all clones share the same slot.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Arc<Mutex<Slot<T>>>,
}

impl<T> Clone for Mailbox<T> {
    fn clone(&self) -> Self {
        Self {
            slot: Arc::clone(&self.slot),
        }
    }
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self {
            slot: Arc::new(Mutex::new(Slot {
                latest: None,
                next_seq: 1,
            })),
        }
    }

    pub fn publish(&self, value: T) -> u64 {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        let seq = slot.next_seq;
        slot.next_seq += 1;
        slot.latest = Some(Stamped {
            value,
            seq,
            published_at: Instant::now(),
        });
        seq
    }

    /// Removes and returns the current value, if any.
    pub fn take(&self) -> Option<Stamped<T>> {
        self.slot
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .latest
            .take()
    }

    /// Sequence number of the latest publication (0 if never published).
    pub fn last_seq(&self) -> u64 {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).next_seq - 1
    }
}

impl<T: Clone> Mailbox<T> {
    pub fn latest(&self) -> Option<Stamped<T>> {
        self.slot
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .latest
            .clone()
    }

    pub fn latest_value(&self) -> Option<T> {
        self.latest().map(|s| s.value)
    }

    /// Latest value only if it is newer than `seen`.
    pub fn newer_than(&self, seen: u64) -> Option<Stamped<T>> {
        let slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        match &slot.latest {
            Some(s) if s.seq > seen => Some(s.clone()),
            _ => None,
        }
    }
}
