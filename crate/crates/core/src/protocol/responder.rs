use std::collections::VecDeque;

use super::handshake::HandshakeState;
use super::message::{AbortReason, SessionCookie};

pub const DEFAULT_HALF_OPEN_CAP: usize = 64;

/// Something the half-open table can hold.
pub trait HalfOpenEntry {
    fn cookie(&self) -> SessionCookie;
    /// Called on the entry pushed out by a newer one.
    fn evict(&mut self);
}

impl HalfOpenEntry for HandshakeState {
    fn cookie(&self) -> SessionCookie {
        HandshakeState::cookie(self)
    }

    fn evict(&mut self) {
        self.abandon(AbortReason::HalfOpenEvicted);
    }
}

/// Responder sessions that sent Msg2 and wait for Msg3, bounded by a cap.
/// When full, the least recently admitted session is evicted.
#[derive(Debug)]
pub struct HalfOpenSessions<T = HandshakeState> {
    cap: usize,
    entries: VecDeque<T>,
    peak: usize,
}

impl<T: HalfOpenEntry> Default for HalfOpenSessions<T> {
    fn default() -> Self {
        Self::new(DEFAULT_HALF_OPEN_CAP)
    }
}

impl<T: HalfOpenEntry> HalfOpenSessions<T> {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "half-open cap must be positive");
        HalfOpenSessions {
            cap,
            entries: VecDeque::with_capacity(cap),
            peak: 0,
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest number of simultaneously held sessions so far.
    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn contains(&self, cookie: &SessionCookie) -> bool {
        self.entries.iter().any(|s| s.cookie() == *cookie)
    }

    /// Admits a session. Returns the evicted one, already passed through
    /// [`HalfOpenEntry::evict`], when the cap was reached.
    pub fn insert(&mut self, state: T) -> Option<T> {
        let evicted = if self.entries.len() == self.cap {
            self.entries.pop_front().map(|mut s| {
                s.evict();
                s
            })
        } else {
            None
        };
        self.entries.push_back(state);
        self.peak = self.peak.max(self.entries.len());
        evicted
    }

    pub fn take(&mut self, cookie: &SessionCookie) -> Option<T> {
        let pos = self.entries.iter().position(|s| s.cookie() == *cookie)?;
        self.entries.remove(pos)
    }

    /// Removes and returns every session for which `expired` is true.
    pub fn drain_where(&mut self, mut expired: impl FnMut(&T) -> bool) -> Vec<T> {
        let mut out = Vec::new();
        let mut keep = VecDeque::with_capacity(self.entries.len());
        for s in self.entries.drain(..) {
            if expired(&s) {
                out.push(s);
            } else {
                keep.push_back(s);
            }
        }
        self.entries = keep;
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }
}
