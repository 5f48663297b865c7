use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding concurrent provider calls.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard { limit: self }
    }

    pub fn current(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limit.freed.notify_one();
    }
}
