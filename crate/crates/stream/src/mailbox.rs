use std::sync::{Condvar, Mutex, MutexGuard};

struct Slot<T> {
    value: Option<T>,
    closed: bool,
    overwritten: u64,
}

/// Single-slot mailbox with overwrite semantics: a new value replaces any
/// value the consumer has not taken yet.
pub struct LatestMailbox<T> {
    slot: Mutex<Slot<T>>,
    ready: Condvar,
}

impl<T> Default for LatestMailbox<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> LatestMailbox<T> {
    pub fn new() -> Self {
        Self {
            slot: Mutex::new(Slot {
                value: None,
                closed: false,
                overwritten: 0,
            }),
            ready: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Slot<T>> {
        self.slot.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Stores `value`; returns true if it replaced an untaken one. Values put
    /// after [`close`](Self::close) are discarded and count as overwritten.
    pub fn put(&self, value: T) -> bool {
        let mut s = self.lock();
        if s.closed {
            s.overwritten += 1;
            return true;
        }
        let replaced = s.value.replace(value).is_some();
        if replaced {
            s.overwritten += 1;
        }
        self.ready.notify_one();
        replaced
    }

    /// Takes the current value without waiting.
    pub fn try_take(&self) -> Option<T> {
        self.lock().value.take()
    }

    /// Waits for a value. Returns `None` once the mailbox is closed and empty.
    pub fn take(&self) -> Option<T> {
        let mut s = self.lock();
        loop {
            if let Some(v) = s.value.take() {
                return Some(v);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// No more values will come; a pending value can still be taken.
    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    /// Closes and discards any pending value, counting it as overwritten.
    pub fn abort(&self) {
        let mut s = self.lock();
        s.closed = true;
        if s.value.take().is_some() {
            s.overwritten += 1;
        }
        self.ready.notify_all();
    }

    pub fn overwritten(&self) -> u64 {
        self.lock().overwritten
    }
}
