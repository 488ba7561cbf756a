use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding concurrent backend requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    capacity: usize,
    state: Mutex<State>,
    released: Condvar,
}

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    peak: usize,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "in-flight capacity must be positive");
        Self {
            capacity,
            state: Mutex::new(State::default()),
            released: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().expect("limiter poisoned");
        while state.in_flight >= self.capacity {
            state = self.released.wait(state).expect("limiter poisoned");
        }
        state.in_flight += 1;
        state.peak = state.peak.max(state.in_flight);
        Permit { limiter: self }
    }

    /// Highest number of permits held at once so far.
    pub fn peak(&self) -> usize {
        self.state.lock().expect("limiter poisoned").peak
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().expect("limiter poisoned");
        state.in_flight -= 1;
        drop(state);
        self.limiter.released.notify_one();
    }
}
