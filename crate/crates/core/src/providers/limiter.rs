use std::collections::VecDeque;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Sliding-window request limiter shared by every caller of one profile.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        Self::new(limit, Duration::from_secs(60))
    }

    pub fn new(limit: u32, window: Duration) -> Self {
        RateLimiter {
            limit: limit.max(1) as usize,
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a request slot is free in the current window.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("limiter lock poisoned");
                let now = Instant::now();
                while issued
                    .front()
                    .is_some_and(|&t| now.duration_since(t) >= self.window)
                {
                    issued.pop_front();
                }
                if issued.len() < self.limit {
                    issued.push_back(now);
                    return;
                }
                self.window - now.duration_since(*issued.front().expect("non-empty"))
            };
            thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn never_exceeds_limit_within_a_window() {
        let window = Duration::from_millis(150);
        let limiter = Arc::new(RateLimiter::new(3, window));
        let stamps = Arc::new(Mutex::new(Vec::new()));
        let workers: Vec<_> = (0..4)
            .map(|_| {
                let limiter = Arc::clone(&limiter);
                let stamps = Arc::clone(&stamps);
                thread::spawn(move || {
                    for _ in 0..2 {
                        limiter.acquire();
                        stamps.lock().unwrap().push(Instant::now());
                    }
                })
            })
            .collect();
        for w in workers {
            w.join().unwrap();
        }
        let mut stamps = stamps.lock().unwrap().clone();
        stamps.sort();
        assert_eq!(stamps.len(), 8);
        for (i, &start) in stamps.iter().enumerate() {
            let in_window = stamps[i..]
                .iter()
                .take_while(|&&t| t.duration_since(start) < window)
                .count();
            // ±1 for requests landing on the window boundary
            assert!(in_window <= 4, "{in_window} requests inside one window");
        }
    }
}
