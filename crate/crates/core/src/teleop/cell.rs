//! Single-writer "latest window" cell. The writer never waits; readers retry
//! until they observe an unchanged sequence number around their copy
//! (a seqlock), so every returned window is one consistent snapshot.

use std::sync::atomic::{fence, AtomicU64, Ordering};
use std::time::Instant;

use crate::suitsim::{SensorFrame, CHANNELS};

/// Words per frame: source index, replay time, publish time (ns), 4 channels.
const STRIDE: usize = 3 + CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedFrame {
    /// Position in the acquisition stream, counting from 0.
    pub index: u64,
    pub frame: SensorFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSnapshot {
    pub frames: Vec<StampedFrame>,
    /// Monotonic publish time of the newest frame, ns since the cell epoch.
    pub published_ns: u64,
}

impl WindowSnapshot {
    /// True when the frame indices are consecutive.
    pub fn is_contiguous(&self) -> bool {
        self.frames.windows(2).all(|w| w[1].index == w[0].index + 1)
    }

    pub fn last(&self) -> &StampedFrame {
        self.frames.last().expect("snapshots are never empty")
    }
}

pub struct LatestWindow {
    n: usize,
    epoch: Instant,
    seq: AtomicU64,
    /// Frames published so far.
    count: AtomicU64,
    data: Box<[AtomicU64]>,
}

impl LatestWindow {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "window length must be positive");
        Self {
            n,
            epoch: Instant::now(),
            seq: AtomicU64::new(0),
            count: AtomicU64::new(0),
            data: (0..n * STRIDE + 1).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn window_len(&self) -> usize {
        self.n
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    pub fn published(&self) -> u64 {
        self.count.load(Ordering::Acquire)
    }

    /// Publishes `window` (oldest first, exactly `n` frames). Only one thread
    /// may call this.
    pub fn publish(&self, window: &[StampedFrame]) {
        assert_eq!(window.len(), self.n, "window length");
        let now = self.now_ns();
        let s = self.seq.load(Ordering::Relaxed);
        self.seq.store(s.wrapping_add(1), Ordering::Relaxed);
        fence(Ordering::Release);
        for (k, f) in window.iter().enumerate() {
            let base = k * STRIDE;
            self.data[base].store(f.index, Ordering::Relaxed);
            self.data[base + 1].store(f.frame.t.to_bits(), Ordering::Relaxed);
            self.data[base + 2].store(now, Ordering::Relaxed);
            for c in 0..CHANNELS {
                self.data[base + 3 + c].store(f.frame.s[c].to_bits(), Ordering::Relaxed);
            }
        }
        self.seq.store(s.wrapping_add(2), Ordering::Release);
        self.count.fetch_add(1, Ordering::Release);
    }

    /// Latest full window, or `None` before the first publish. Also returns
    /// how many times the copy had to be retried.
    pub fn read(&self) -> Option<(WindowSnapshot, u64)> {
        if self.published() == 0 {
            return None;
        }
        let mut retries = 0;
        let mut words = vec![0u64; self.n * STRIDE];
        loop {
            let s1 = self.seq.load(Ordering::Acquire);
            if s1 % 2 == 1 {
                retries += 1;
                std::hint::spin_loop();
                continue;
            }
            for (w, d) in words.iter_mut().zip(self.data.iter()) {
                *w = d.load(Ordering::Relaxed);
            }
            fence(Ordering::Acquire);
            if self.seq.load(Ordering::Relaxed) == s1 {
                break;
            }
            retries += 1;
        }
        let frames = words
            .chunks_exact(STRIDE)
            .map(|w| StampedFrame {
                index: w[0],
                frame: SensorFrame {
                    t: f64::from_bits(w[1]),
                    s: std::array::from_fn(|c| f64::from_bits(w[3 + c])),
                },
            })
            .collect::<Vec<_>>();
        let published_ns = words[(self.n - 1) * STRIDE + 2];
        Some((WindowSnapshot { frames, published_ns }, retries))
    }
}
