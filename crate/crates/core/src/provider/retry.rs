use std::time::Duration;

use rand::Rng;

/// Exponential backoff with full jitter: before retry `n` (0-based) the caller
/// sleeps a uniform random time in `[0, min(max_delay, base_delay * 2^n)]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    /// 0.5 s, 1 s, 2 s, ... capped at 8 s.
    pub fn standard(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }

    /// No waiting between attempts.
    pub fn immediate(max_retries: u32) -> Self {
        Self { max_retries, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    pub fn ceiling(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    pub fn jittered_delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.ceiling(retry);
        if ceiling.is_zero() {
            return Duration::ZERO;
        }
        Duration::from_nanos(rng.random_range(0..=ceiling.as_nanos() as u64))
    }

    pub(crate) fn wait(&self, retry: u32) {
        let delay = self.jittered_delay(retry, &mut rand::rng());
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
    }
}
