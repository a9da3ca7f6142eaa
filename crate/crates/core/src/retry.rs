//! Exponential backoff with additive jitter, plus the small throttling
//! primitives shared by the HTTP clients.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: f64,
    /// Total attempts including the first.
    pub max_attempts: u32,
    /// Extra random delay, as a fraction of the nominal delay.
    pub jitter_fraction: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay_ms: 1000,
            factor: 2.0,
            max_attempts: 5,
            jitter_fraction: 0.25,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given `attempt ≥ 1` failures so far
    /// and a jitter sample in `[0, 1)`.
    pub fn delay(&self, attempt: u32, jitter: f64) -> Duration {
        let nominal = self.base_delay_ms as f64 * self.factor.powi(attempt.saturating_sub(1) as i32);
        let ms = nominal * (1.0 + self.jitter_fraction * jitter.clamp(0.0, 1.0));
        Duration::from_secs_f64(ms / 1000.0)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure<E> {
    pub error: E,
    pub attempts: u32,
    /// The last error was retryable but the attempt budget ran out.
    pub exhausted: bool,
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// attempt budget is spent. Returns the value and the attempt count.
pub fn retry<T, E>(
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    mut jitter: impl FnMut() -> f64,
    retryable: impl Fn(&E) -> bool,
    mut op: impl FnMut(u32) -> Result<T, E>,
) -> Result<(T, u32), Failure<E>> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op(attempt) {
            Ok(v) => return Ok((v, attempt)),
            Err(e) if !retryable(&e) => {
                return Err(Failure {
                    error: e,
                    attempts: attempt,
                    exhausted: false,
                })
            }
            Err(e) if attempt >= max => {
                return Err(Failure {
                    error: e,
                    attempts: attempt,
                    exhausted: true,
                })
            }
            Err(_) => sleeper.sleep(policy.delay(attempt, jitter())),
        }
    }
}

/// Counting gate capping concurrent requests.
#[derive(Debug)]
pub struct InFlightGate {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePass<'a>(&'a InFlightGate);

impl InFlightGate {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn enter(&self) -> GatePass<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        GatePass(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.used.lock().unwrap()
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Spaces request starts at least `1 / per_second` apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let interval = if per_second.is_finite() && per_second > 0.0 {
            Duration::from_secs_f64(1.0 / per_second)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            next: Mutex::new(None),
        }
    }

    /// Reserves the next slot and returns how long the caller must wait.
    pub fn reserve(&self) -> Duration {
        let now = Instant::now();
        let mut next = self.next.lock().unwrap();
        let slot = match *next {
            Some(t) if t > now => t,
            _ => now,
        };
        *next = Some(slot + self.interval);
        slot - now
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[derive(Default)]
    pub struct RecordingSleeper(pub Mutex<Vec<Duration>>);

    impl Sleeper for RecordingSleeper {
        fn sleep(&self, d: Duration) {
            self.0.lock().unwrap().push(d);
        }
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1, 0.0), Duration::from_secs(1));
        assert_eq!(p.delay(2, 0.0), Duration::from_secs(2));
        assert_eq!(p.delay(3, 0.0), Duration::from_secs(4));
        assert_eq!(p.delay(1, 0.999_999), Duration::from_secs_f64(1.0 + 0.25 * 0.999_999));
    }

    #[test]
    fn succeeds_after_transient_failures() {
        let sleeper = RecordingSleeper::default();
        let mut fails = 2;
        let out = retry(&RetryPolicy::default(), &sleeper, || 0.5, |_: &&str| true, |_| {
            if fails > 0 {
                fails -= 1;
                Err("busy")
            } else {
                Ok(42)
            }
        });
        assert_eq!(out, Ok((42, 3)));
        let total: Duration = sleeper.0.lock().unwrap().iter().sum();
        assert!(total >= Duration::from_secs(3));
    }

    #[test]
    fn stops_on_terminal_error_and_budget() {
        let sleeper = RecordingSleeper::default();
        let out: Result<((), u32), _> = retry(&RetryPolicy::default(), &sleeper, || 0.0, |e: &&str| *e == "busy", |_| Err("denied"));
        assert_eq!(out.unwrap_err(), Failure { error: "denied", attempts: 1, exhausted: false });
        assert!(sleeper.0.lock().unwrap().is_empty());

        let out: Result<((), u32), _> = retry(&RetryPolicy::default(), &sleeper, || 0.0, |_: &&str| true, |_| Err("busy"));
        assert_eq!(out.unwrap_err(), Failure { error: "busy", attempts: 5, exhausted: true });
        assert_eq!(sleeper.0.lock().unwrap().len(), 4);
    }

    #[test]
    fn gate_caps_concurrency() {
        let gate = Arc::new(InFlightGate::new(2));
        let peak = Arc::new(Mutex::new(0usize));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let gate = gate.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _pass = gate.enter();
                    let now = gate.in_flight();
                    let mut p = peak.lock().unwrap();
                    *p = (*p).max(now);
                    drop(p);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(gate.in_flight(), 0);
    }

    #[test]
    fn limiter_spaces_slots() {
        let l = RateLimiter::new(10.0);
        assert_eq!(l.reserve(), Duration::ZERO);
        let w = l.reserve();
        assert!(w > Duration::from_millis(90) && w <= Duration::from_millis(100));
    }
}
