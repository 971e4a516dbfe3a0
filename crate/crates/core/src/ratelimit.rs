use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Spaces calls at least `min_interval` apart across threads.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        RateLimiter {
            min_interval,
            next: Mutex::new(None),
        }
    }

    pub fn unlimited() -> Self {
        RateLimiter::new(Duration::ZERO)
    }

    /// Block until the caller may issue its request.
    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut next = self.next.lock().unwrap_or_else(|p| p.into_inner());
        let now = Instant::now();
        let slot = match *next {
            Some(t) if t > now => t,
            _ => now,
        };
        if slot > now {
            thread::sleep(slot - now);
        }
        *next = Some(slot + self.min_interval);
    }
}
