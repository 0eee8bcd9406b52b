use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::cell::{LatestWindow, StampedFrame};
use crate::error::{Error, Result};
use crate::motion::{generate_script, MovementKind, MovementScript, TrajectoryRecord};
use crate::nonlin::{corrupt_stream, CorruptionConfig};
use crate::orient::JointAngles;
use crate::suitsim::{sweep, RoutingLayout, SensorFrame};

pub const DEFAULT_RATE_HZ: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceMode {
    ReplayFile,
    LiveSimulator,
}

/// Sensor frames played out at a fixed rate. Frame `k` is stamped with the
/// synthetic replay clock `k / rate`; the recording's own timestamps are
/// ignored, so looping never makes time go backwards.
#[derive(Debug, Clone)]
pub struct StreamSource {
    pub mode: SourceMode,
    pub rate_hz: f64,
    pub looping: bool,
    frames: Vec<[f64; 4]>,
    truth: Vec<JointAngles>,
}

impl StreamSource {
    pub fn new(
        mode: SourceMode,
        rate_hz: f64,
        looping: bool,
        frames: Vec<[f64; 4]>,
        truth: Vec<JointAngles>,
    ) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::Validation(format!("stream rate must be > 0, got {rate_hz}")));
        }
        if frames.is_empty() || frames.len() != truth.len() {
            return Err(Error::Validation(
                "stream source needs frames with matching ground truth".into(),
            ));
        }
        Ok(Self {
            mode,
            rate_hz,
            looping,
            frames,
            truth,
        })
    }

    pub fn from_record(record: &TrajectoryRecord, rate_hz: f64, looping: bool) -> Result<Self> {
        Self::new(
            SourceMode::ReplayFile,
            rate_hz,
            looping,
            record.frames.iter().map(|f| f.s).collect(),
            record.angles.clone(),
        )
    }

    /// Replays a trajectory CSV in corpus format.
    pub fn replay_file(path: &Path, rate_hz: f64, looping: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("replay");
        let record = TrajectoryRecord::from_csv(id, MovementKind::Random, 0, &text)?;
        Self::from_record(&record, rate_hz, looping)
    }

    /// Synthesizes `frames` samples of random movement through the suit model
    /// and the given corruption.
    pub fn live(
        layout: &RoutingLayout,
        corruption: &CorruptionConfig,
        frames: usize,
        seed: u64,
        rate_hz: f64,
    ) -> Result<Self> {
        let script = MovementScript::new(MovementKind::Random, 1, frames);
        let traj = generate_script(&script, seed)?;
        let ideal = sweep(layout, &traj.timed_poses())?;
        let noisy = corrupt_stream(&ideal, corruption)?;
        Self::new(
            SourceMode::LiveSimulator,
            rate_hz,
            true,
            noisy.iter().map(|f| f.s).collect(),
            traj.samples.iter().map(|s| s.q).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.rate_hz)
    }

    /// Frame `k` of the stream, or `None` past the end in non-loop mode.
    pub fn frame(&self, k: u64) -> Option<StampedFrame> {
        let i = self.source_index(k)?;
        Some(StampedFrame {
            index: k,
            frame: SensorFrame {
                t: k as f64 / self.rate_hz,
                s: self.frames[i],
            },
        })
    }

    pub fn source_index(&self, k: u64) -> Option<usize> {
        let n = self.frames.len() as u64;
        match (self.looping, k < n) {
            (_, true) => Some(k as usize),
            (true, false) => Some((k % n) as usize),
            (false, false) => None,
        }
    }

    /// Ground truth of stream frame `k`.
    pub fn truth(&self, k: u64) -> Option<JointAngles> {
        self.source_index(k).map(|i| self.truth[i])
    }

    /// Ground truth at replay time `t`.
    pub fn truth_at(&self, t: f64) -> Option<JointAngles> {
        if !(t >= 0.0) {
            return None;
        }
        self.truth((t * self.rate_hz).round() as u64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionStats {
    pub frames: u64,
    pub elapsed_s: f64,
    pub rate_hz: f64,
    /// Publish lateness against the ideal schedule, microseconds.
    pub mean_lateness_us: f64,
    pub max_lateness_us: f64,
    /// Set when a non-looping source ran out.
    pub exhausted: bool,
}

/// Writes frames into `cell` on a fixed schedule until `stop` is set or the
/// source is exhausted. Returns when either happens; `done` is raised on exit
/// so readers can tell the stream ended.
pub fn acquisition_loop(
    source: &StreamSource,
    cell: &LatestWindow,
    stop: &AtomicBool,
    done: &AtomicBool,
) -> AcquisitionStats {
    let n = cell.window_len();
    let period = source.period();
    let mut ring: Vec<StampedFrame> = Vec::with_capacity(n);
    let start = Instant::now();
    let mut k = 0u64;
    let mut lateness_sum = 0.0;
    let mut lateness_max: f64 = 0.0;
    let mut exhausted = false;
    while !stop.load(Ordering::Relaxed) {
        let due = start + period.mul_f64(k as f64);
        sleep_until(due);
        let Some(f) = source.frame(k) else {
            exhausted = true;
            break;
        };
        if ring.len() == n {
            ring.remove(0);
        }
        ring.push(f);
        if ring.len() == n {
            cell.publish(&ring);
        }
        let late = Instant::now().saturating_duration_since(due).as_secs_f64() * 1e6;
        lateness_sum += late;
        lateness_max = lateness_max.max(late);
        k += 1;
    }
    let elapsed_s = start.elapsed().as_secs_f64();
    done.store(true, Ordering::Release);
    AcquisitionStats {
        frames: k,
        elapsed_s,
        rate_hz: if elapsed_s > 0.0 { k as f64 / elapsed_s } else { 0.0 },
        mean_lateness_us: if k > 0 { lateness_sum / k as f64 } else { 0.0 },
        max_lateness_us: lateness_max,
        exhausted,
    }
}

/// Sleeps most of the way, then yields until the deadline.
pub(crate) fn sleep_until(due: Instant) {
    const SPIN: Duration = Duration::from_micros(300);
    loop {
        let now = Instant::now();
        if now >= due {
            return;
        }
        let left = due - now;
        if left > SPIN {
            std::thread::sleep(left - SPIN);
        } else {
            std::thread::yield_now();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn source(len: usize, looping: bool, rate: f64) -> StreamSource {
        let frames = (0..len).map(|i| [i as f64; 4]).collect();
        let truth = (0..len).map(|i| JointAngles::new(i as f64, 0.0)).collect();
        StreamSource::new(SourceMode::ReplayFile, rate, looping, frames, truth).unwrap()
    }

    #[test]
    fn looping_clock_is_monotonic() {
        let s = source(100, true, 250.0);
        let mut prev = -1.0;
        for k in 0..1000 {
            let f = s.frame(k).unwrap();
            assert!(f.frame.t > prev);
            prev = f.frame.t;
            assert_eq!(f.frame.s[0], (k % 100) as f64);
        }
        assert_eq!(s.truth_at(100.0 / 250.0).unwrap().theta, 0.0);
        let once = source(100, false, 250.0);
        assert!(once.frame(99).is_some() && once.frame(100).is_none());
        assert!(StreamSource::new(
            SourceMode::ReplayFile,
            0.0,
            true,
            vec![[0.0; 4]],
            vec![JointAngles::NEUTRAL]
        )
        .is_err());
    }

    #[test]
    fn acquisition_rate_and_windows() {
        let s = source(100, true, 250.0);
        let cell = Arc::new(LatestWindow::new(10));
        let stop = Arc::new(AtomicBool::new(false));
        let done = Arc::new(AtomicBool::new(false));
        let h = {
            let (s, cell, stop, done) = (s.clone(), cell.clone(), stop.clone(), done.clone());
            std::thread::spawn(move || acquisition_loop(&s, &cell, &stop, &done))
        };
        let t0 = Instant::now();
        let mut last_t = -1.0;
        while t0.elapsed() < Duration::from_secs(2) {
            std::thread::sleep(Duration::from_millis(40));
            if let Some((snap, _)) = cell.read() {
                assert_eq!(snap.frames.len(), 10);
                assert!(snap.is_contiguous());
                assert!(snap.frames.windows(2).all(|w| w[1].frame.t > w[0].frame.t));
                assert!(snap.last().frame.t >= last_t);
                last_t = snap.last().frame.t;
            }
        }
        stop.store(true, Ordering::Relaxed);
        let stats = h.join().unwrap();
        assert!(done.load(Ordering::Acquire));
        assert!((stats.frames as f64 - 500.0).abs() <= 10.0, "{stats:?}");
    }

    #[test]
    fn finite_source_ends() {
        let s = source(30, false, 1000.0);
        let cell = LatestWindow::new(10);
        let (stop, done) = (AtomicBool::new(false), AtomicBool::new(false));
        let stats = acquisition_loop(&s, &cell, &stop, &done);
        assert!(stats.exhausted);
        assert_eq!(stats.frames, 30);
        assert_eq!(cell.published(), 21);
        assert_eq!(cell.read().unwrap().0.last().index, 29);
    }
}
