use std::time::Duration;

/// Exponential backoff: the delay before retry `i` (0-based) is `base * 2^i`,
/// capped at [`RetryPolicy::MAX_DELAY`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
}

impl RetryPolicy {
    pub const MAX_DELAY: Duration = Duration::from_secs(60);

    pub fn new(max_retries: u32, base: Duration) -> Self {
        Self { max_retries, base }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(Self::MAX_DELAY)
    }

    pub fn delays(&self) -> Vec<Duration> {
        (0..self.max_retries).map(|i| self.delay(i)).collect()
    }
}

/// Outcome of a single attempt.
pub(crate) enum Attempt<T, E> {
    Done(T),
    /// Worth retrying; carries the error reported if retries run out.
    Transient(E),
    Fatal(E),
}

/// Run `op` until it succeeds, fails fatally, or exhausts the policy.
/// `op` receives the 1-based attempt number.
pub(crate) fn run_with_retries<T, E>(
    policy: &RetryPolicy,
    mut sleep: impl FnMut(Duration),
    mut op: impl FnMut(u32) -> Attempt<T, E>,
) -> Result<T, E> {
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Transient(e) => {
                let retry = attempt - 1;
                if retry >= policy.max_retries {
                    return Err(e);
                }
                sleep(policy.delay(retry));
                attempt += 1;
            }
        }
    }
}
