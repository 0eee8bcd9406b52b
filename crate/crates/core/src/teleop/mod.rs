//! Real-time teleoperation: an acquisition thread fills a latest-window cell,
//! the inference loop turns each window into robot-frame angles and sends
//! them to a TCP robot sink.

mod cell;
mod sink;
mod source;

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use cell::{LatestWindow, StampedFrame, WindowSnapshot};
pub use sink::{
    read_sink_log, RobotCommand, RobotSink, SinkClient, SinkLogRow, SinkMode, SinkStats, ACK, SINK_LOG_HEADER,
};
pub use source::{acquisition_loop, AcquisitionStats, SourceMode, StreamSource, DEFAULT_RATE_HZ};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::nn::{forward, Model};
use crate::orient::{ms_to_robot, JointAngles};
use crate::suitsim::CHANNELS;

/// Anything that maps a sensor window to joint angles.
pub trait AngleModel: Sync {
    fn window_len(&self) -> usize;
    fn predict(&self, window: &[[f64; CHANNELS]]) -> Result<JointAngles>;
}

impl AngleModel for Model {
    fn window_len(&self) -> usize {
        self.spec.n_steps
    }

    fn predict(&self, window: &[[f64; CHANNELS]]) -> Result<JointAngles> {
        let mut x = Array2::zeros((window.len(), CHANNELS));
        for (k, s) in window.iter().enumerate() {
            let z = self.scaler.normalize_input(s);
            for c in 0..CHANNELS {
                x[[k, c]] = z[c];
            }
        }
        let y = self
            .scaler
            .denormalize_target(forward(&self.spec, &self.params, x.view())?);
        Ok(JointAngles::new(y[0], y[1]))
    }
}

/// Robot-frame ZYX angles for one window; the streamed and offline paths
/// both go through here.
pub fn window_to_zyx<M: AngleModel + ?Sized>(model: &M, window: &[[f64; CHANNELS]]) -> Result<[f64; 3]> {
    Ok(ms_to_robot(model.predict(window)?)?.angles())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Target command rate; the loop never runs faster than this.
    pub loop_hz: f64,
    /// Wall-clock run time; `None` runs until stopped or the stream ends.
    #[serde(with = "opt_secs")]
    pub duration: Option<Duration>,
    pub max_commands: Option<u64>,
    /// Reconnect attempts after a failed send before giving up.
    pub send_retries: u32,
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        let v: Option<f64> = Option::deserialize(d)?;
        v.map(|s| Duration::try_from_secs_f64(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            loop_hz: 100.0,
            duration: None,
            max_commands: None,
            send_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl StageSummary {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        ms.sort_by(f64::total_cmp);
        let q = |p: f64| ms[((ms.len() - 1) as f64 * p).round() as usize];
        Self {
            count: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: q(0.5),
            p95_ms: q(0.95),
            max_ms: ms[ms.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mode: Option<SinkMode>,
    /// Publish of the newest frame to the start of inference on it.
    pub acquisition_to_inference: StageSummary,
    pub inference: StageSummary,
    pub send: StageSummary,
    pub commands_attempted: u64,
    pub commands_delivered: u64,
    pub send_failures: u64,
    pub torn_reads: u64,
    pub read_retries: u64,
    /// Newest available frame minus the frame a command was computed from,
    /// on the replay clock.
    pub max_staleness_s: f64,
    pub elapsed_s: f64,
    pub command_rate_hz: f64,
    pub acquisition: AcquisitionStats,
}

/// Runs acquisition and inference until `stop` is raised, the configured
/// duration or command budget is reached, or a finite source ends.
pub fn run_pipeline<M: AngleModel>(
    model: &M,
    source: &StreamSource,
    mut client: SinkClient,
    cfg: &InferenceConfig,
    stop: &AtomicBool,
) -> Result<LatencyStats> {
    if !(cfg.loop_hz > 0.0 && cfg.loop_hz.is_finite()) {
        return Err(Error::Validation(format!("loop_hz must be > 0, got {}", cfg.loop_hz)));
    }
    let n = model.window_len();
    let cell = LatestWindow::new(n);
    let acq_stop = AtomicBool::new(false);
    let acq_done = AtomicBool::new(false);
    let mode = client.mode();

    let (acq, mut stats) = std::thread::scope(|scope| {
        let acq = scope.spawn(|| acquisition_loop(source, &cell, &acq_stop, &acq_done));
        let stats = inference_loop(model, &cell, &mut client, cfg, stop, &acq_done, source.rate_hz);
        acq_stop.store(true, Ordering::Relaxed);
        (acq.join().expect("acquisition thread"), stats)
    });
    if let Err(e) = client.close() {
        log::warn!("closing sink connection: {e}");
    }
    stats.mode = Some(mode);
    stats.acquisition = acq;
    Ok(stats)
}

fn inference_loop<M: AngleModel>(
    model: &M,
    cell: &LatestWindow,
    client: &mut SinkClient,
    cfg: &InferenceConfig,
    stop: &AtomicBool,
    source_done: &AtomicBool,
    rate_hz: f64,
) -> LatencyStats {
    let period = Duration::from_secs_f64(1.0 / cfg.loop_hz);
    let mut stats = LatencyStats::default();
    let (mut acq_ms, mut inf_ms, mut send_ms) = (Vec::new(), Vec::new(), Vec::new());
    let start = Instant::now();
    let mut next = start;
    let mut seq = 0u64;
    let mut last_index = None;
    let mut consecutive_failures = 0;
    let mut window = Vec::with_capacity(model.window_len());
    loop {
        if stop.load(Ordering::Relaxed)
            || cfg.duration.is_some_and(|d| start.elapsed() >= d)
            || cfg.max_commands.is_some_and(|m| stats.commands_attempted >= m)
        {
            break;
        }
        source::sleep_until(next);
        next = (next + period).max(Instant::now());

        let Some((snap, retries)) = cell.read() else {
            if source_done.load(Ordering::Acquire) {
                break;
            }
            continue;
        };
        stats.read_retries += retries;
        if !snap.is_contiguous() {
            stats.torn_reads += 1;
            continue;
        }
        let end = snap.last().index;
        if last_index == Some(end) {
            if source_done.load(Ordering::Acquire) {
                break;
            }
            continue;
        }
        last_index = Some(end);
        acq_ms.push(cell.now_ns().saturating_sub(snap.published_ns) as f64 / 1e6);

        let t0 = Instant::now();
        window.clear();
        window.extend(snap.frames.iter().map(|f| f.frame.s));
        let zyx = match window_to_zyx(model, &window) {
            Ok(z) => z,
            Err(e) => {
                log::error!("inference failed: {e}");
                break;
            }
        };
        inf_ms.push(t0.elapsed().as_secs_f64() * 1e3);

        seq += 1;
        let cmd = RobotCommand {
            seq,
            t: snap.last().frame.t,
            zyx,
        };
        // After p publishes the newest frame index is p + n - 2.
        let newest = (cell.published() + model.window_len() as u64).saturating_sub(2);
        stats.max_staleness_s = stats.max_staleness_s.max(newest.saturating_sub(end) as f64 / rate_hz);
        stats.commands_attempted += 1;
        let t1 = Instant::now();
        match client.send(&cmd) {
            Ok(()) => {
                send_ms.push(t1.elapsed().as_secs_f64() * 1e3);
                stats.commands_delivered += 1;
                consecutive_failures = 0;
            }
            Err(e) => {
                stats.send_failures += 1;
                consecutive_failures += 1;
                log::warn!("send failed ({consecutive_failures}): {e}");
                if consecutive_failures > cfg.send_retries || client.reconnect().is_err() {
                    break;
                }
            }
        }
    }
    stats.elapsed_s = start.elapsed().as_secs_f64();
    stats.command_rate_hz = stats.commands_delivered as f64 / stats.elapsed_s.max(1e-9);
    stats.acquisition_to_inference = StageSummary::from_samples(acq_ms);
    stats.inference = StageSummary::from_samples(inf_ms);
    stats.send = StageSummary::from_samples(send_ms);
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredVsTruth {
    pub t: f64,
    pub theta_true: f64,
    pub phi_true: f64,
    pub theta_pred: f64,
    pub phi_pred: f64,
}

pub const PRED_VS_TRUTH_HEADER: &str = "t,theta_true,phi_true,theta_pred,phi_pred";

/// Recovers predicted angles from logged robot-frame commands. Inverts
/// `ms_to_robot` away from gimbal lock, where it is `(0, theta, -phi)`.
pub fn zyx_to_joint(zyx: [f64; 3]) -> JointAngles {
    JointAngles::new(zyx[1], -zyx[2])
}

/// Pairs every logged command with the ground truth of its source frame.
pub fn pred_vs_truth(rows: &[SinkLogRow], source: &StreamSource) -> Result<Vec<PredVsTruth>> {
    rows.iter()
        .map(|r| {
            let truth = source
                .truth_at(r.t_capture)
                .ok_or_else(|| Error::Validation(format!("no ground truth at t = {}", r.t_capture)))?;
            let pred = zyx_to_joint(r.zyx);
            Ok(PredVsTruth {
                t: r.t_capture,
                theta_true: truth.theta.to_degrees(),
                phi_true: truth.phi.to_degrees(),
                theta_pred: pred.theta.to_degrees(),
                phi_pred: pred.phi.to_degrees(),
            })
        })
        .collect()
}

pub fn write_pred_vs_truth(path: &Path, rows: &[PredVsTruth]) -> Result<()> {
    let mut out = String::from(PRED_VS_TRUTH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t, r.theta_true, r.phi_true, r.theta_pred, r.phi_pred
        ));
    }
    write_atomic(path, out.as_bytes())
}
