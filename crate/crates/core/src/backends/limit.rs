use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::Clock;

/// Token bucket over requests per minute. Starts full.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<BucketState>,
}

#[derive(Debug)]
struct BucketState {
    tokens: f64,
    updated: Duration,
}

impl TokenBucket {
    pub fn per_minute(requests: u32, now: Duration) -> Self {
        let capacity = f64::from(requests.max(1));
        Self {
            capacity,
            per_second: capacity / 60.0,
            state: Mutex::new(BucketState {
                tokens: capacity,
                updated: now,
            }),
        }
    }

    /// Takes one token, sleeping on `clock` until one is available.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut s = self.state.lock().unwrap();
                let now = clock.now();
                let elapsed = now.saturating_sub(s.updated).as_secs_f64();
                s.tokens = (s.tokens + elapsed * self.per_second).min(self.capacity);
                s.updated = now;
                if s.tokens >= 1.0 {
                    s.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - s.tokens) / self.per_second)
            };
            clock.sleep(wait);
        }
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.cap {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard { limit: self }
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.limit.active.lock().unwrap() -= 1;
        self.limit.freed.notify_one();
    }
}
