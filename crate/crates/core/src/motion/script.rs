use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orient::JointAngles;

/// Motion-capture camera rate.
pub const SAMPLE_RATE_HZ: f64 = 120.0;
pub const AZIMUTH_RANGE_DEG: (f64, f64) = (-40.0, 90.0);
pub const ELEVATION_RANGE_DEG: (f64, f64) = (0.0, 90.0);

// Extra duration weight per waypoint so zero-distance moves still take time.
const SEGMENT_FLOOR_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MovementKind {
    FlexExt,
    AbdAdd,
    FixedAzimuthSweep,
    FixedElevationSweep,
    Random,
}

impl MovementKind {
    pub const ALL: [MovementKind; 5] = [
        MovementKind::FlexExt,
        MovementKind::AbdAdd,
        MovementKind::FixedAzimuthSweep,
        MovementKind::FixedElevationSweep,
        MovementKind::Random,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            MovementKind::FlexExt => "flex_ext",
            MovementKind::AbdAdd => "abd_add",
            MovementKind::FixedAzimuthSweep => "fixed_azimuth",
            MovementKind::FixedElevationSweep => "fixed_elevation",
            MovementKind::Random => "random",
        }
    }

    /// Repetitions and recorded frame count of the motion-capture session.
    /// Random movement has no repetitions; `None` there.
    pub fn session(self) -> (Option<usize>, usize) {
        match self {
            MovementKind::FlexExt => (Some(4), 3037),
            MovementKind::AbdAdd => (Some(4), 3630),
            MovementKind::FixedAzimuthSweep => (Some(2), 5814),
            MovementKind::FixedElevationSweep => (Some(2), 6757),
            MovementKind::Random => (None, 10313),
        }
    }
}

/// Waypoint timing for random movement, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomParams {
    pub dwell: (f64, f64),
    pub transit: (f64, f64),
}

impl Default for RandomParams {
    fn default() -> Self {
        Self {
            dwell: (0.1, 0.5),
            transit: (0.6, 1.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementScript {
    pub kind: MovementKind,
    /// Repetitions; for random movement, the number of equal blocks the
    /// stream is cut into.
    pub reps: usize,
    /// Frames per repetition.
    pub frames_per_rep: Vec<usize>,
    /// Constant azimuth (fixed-azimuth sweep) or elevation (fixed-elevation
    /// sweep) values, degrees.
    pub fixed_values_deg: Vec<f64>,
    pub random: RandomParams,
}

impl MovementScript {
    /// Script for `kind` with `total_frames` split evenly over `reps`.
    pub fn new(kind: MovementKind, reps: usize, total_frames: usize) -> Self {
        let frames_per_rep = if reps == 0 {
            Vec::new()
        } else {
            (0..reps)
                .map(|i| total_frames / reps + usize::from(i < total_frames % reps))
                .collect()
        };
        let fixed_values_deg = match kind {
            MovementKind::FixedAzimuthSweep => linspace(AZIMUTH_RANGE_DEG.0, AZIMUTH_RANGE_DEG.1, 5),
            MovementKind::FixedElevationSweep => (1..=5).map(|k| 18.0 * k as f64).collect(),
            _ => Vec::new(),
        };
        Self {
            kind,
            reps,
            frames_per_rep,
            fixed_values_deg,
            random: RandomParams::default(),
        }
    }

    pub fn total_frames(&self) -> usize {
        self.frames_per_rep.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.frames_per_rep.len() != self.reps {
            return Err(Error::Validation(format!(
                "{:?}: need one frame count per repetition",
                self.kind
            )));
        }
        if self.frames_per_rep.iter().any(|&f| f < 2) {
            return Err(Error::Validation(format!(
                "{:?}: every repetition needs at least 2 frames",
                self.kind
            )));
        }
        let (lo, hi) = match self.kind {
            MovementKind::FixedAzimuthSweep => AZIMUTH_RANGE_DEG,
            MovementKind::FixedElevationSweep => ELEVATION_RANGE_DEG,
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        if matches!(
            self.kind,
            MovementKind::FixedAzimuthSweep | MovementKind::FixedElevationSweep
        ) && self.fixed_values_deg.is_empty()
        {
            return Err(Error::Validation(format!("{:?}: no fixed values", self.kind)));
        }
        if let Some(v) = self.fixed_values_deg.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(Error::Validation(format!(
                "{:?}: fixed value {v} deg outside [{lo}, {hi}]",
                self.kind
            )));
        }
        let r = self.random;
        if !(r.dwell.0 >= 0.0 && r.dwell.1 >= r.dwell.0 && r.transit.0 > 0.0 && r.transit.1 >= r.transit.0) {
            return Err(Error::Validation("random timing ranges are invalid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub q: JointAngles,
    pub rep: usize,
}

/// Uniformly sampled joint trajectory at [`SAMPLE_RATE_HZ`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn timed_poses(&self) -> Vec<(f64, JointAngles)> {
        self.samples.iter().map(|s| (s.t, s.q)).collect()
    }
}

/// Minimum-jerk blend `10 s^3 - 15 s^4 + 6 s^5` on `s in [0, 1]`.
pub fn minimum_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    let s3 = s * s * s;
    s3 * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Waypoint plus the relative duration of the move that reaches it.
#[derive(Debug, Clone, Copy)]
struct Waypoint {
    deg: (f64, f64),
    weight: f64,
}

fn rep_waypoints(script: &MovementScript) -> Vec<(f64, f64)> {
    match script.kind {
        MovementKind::FlexExt => vec![(90.0, 0.0), (90.0, 90.0), (90.0, 0.0)],
        MovementKind::AbdAdd => vec![(0.0, 0.0), (0.0, 90.0), (0.0, 0.0)],
        MovementKind::FixedAzimuthSweep => {
            let mut w = vec![(0.0, 0.0)];
            for &th in &script.fixed_values_deg {
                w.extend([(th, 0.0), (th, 90.0), (th, 0.0)]);
            }
            w.push((0.0, 0.0));
            w
        }
        MovementKind::FixedElevationSweep => {
            let (lo, hi) = AZIMUTH_RANGE_DEG;
            let mut w = vec![(0.0, 0.0)];
            for &ph in &script.fixed_values_deg {
                w.extend([(lo, ph), (hi, ph), (lo, ph)]);
            }
            w.push((0.0, 0.0));
            w
        }
        MovementKind::Random => unreachable!("random waypoints are sampled"),
    }
}

fn distance_weighted(points: &[(f64, f64)]) -> Vec<Waypoint> {
    let mut out = vec![Waypoint {
        deg: points[0],
        weight: 0.0,
    }];
    for w in points.windows(2) {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        out.push(Waypoint {
            deg: w[1],
            weight: d + SEGMENT_FLOOR_DEG,
        });
    }
    out
}

/// Samples `frames` poses of a piecewise minimum-jerk path whose segment
/// durations are proportional to the waypoint weights.
fn sample_path(path: &[Waypoint], frames: usize, t0_index: usize, rep: usize) -> Vec<TrajectorySample> {
    let duration = frames as f64 / SAMPLE_RATE_HZ;
    let total: f64 = path.iter().map(|w| w.weight).sum();
    let mut ends = Vec::with_capacity(path.len());
    let mut acc = 0.0;
    for w in path {
        acc += w.weight;
        ends.push(acc / total * duration);
    }
    let mut seg = 1;
    (0..frames)
        .map(|i| {
            let local = i as f64 / SAMPLE_RATE_HZ;
            while seg + 1 < path.len() && local >= ends[seg] {
                seg += 1;
            }
            let (a, b) = (path[seg - 1].deg, path[seg].deg);
            let span = ends[seg] - ends[seg - 1];
            let s = minimum_jerk((local - ends[seg - 1]) / span);
            let q = JointAngles::from_degrees(a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s);
            TrajectorySample {
                t: (t0_index + i) as f64 / SAMPLE_RATE_HZ,
                q: clamp_to_box(q),
                rep,
            }
        })
        .collect()
}

fn clamp_to_box(q: JointAngles) -> JointAngles {
    let (tl, th) = AZIMUTH_RANGE_DEG;
    let (pl, ph) = ELEVATION_RANGE_DEG;
    JointAngles::new(
        q.theta.clamp(tl.to_radians(), th.to_radians()),
        q.phi.clamp(pl.to_radians(), ph.to_radians()),
    )
}

fn random_path(script: &MovementScript, seed: u64) -> Vec<Waypoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let needed = script.total_frames() as f64 / SAMPLE_RATE_HZ;
    let r = script.random;
    let mut path = vec![Waypoint {
        deg: (0.0, 0.0),
        weight: 0.0,
    }];
    let mut elapsed = 0.0;
    while elapsed < needed {
        let last = path[path.len() - 1].deg;
        let dwell = rng.random_range(r.dwell.0..=r.dwell.1);
        path.push(Waypoint {
            deg: last,
            weight: dwell,
        });
        let target = (
            rng.random_range(AZIMUTH_RANGE_DEG.0..=AZIMUTH_RANGE_DEG.1),
            rng.random_range(ELEVATION_RANGE_DEG.0..=ELEVATION_RANGE_DEG.1),
        );
        let transit = rng.random_range(r.transit.0..=r.transit.1);
        path.push(Waypoint {
            deg: target,
            weight: transit,
        });
        elapsed += dwell + transit;
    }
    path
}

/// Ground-truth trajectory for a movement script, deterministic in `seed`.
pub fn generate_script(script: &MovementScript, seed: u64) -> Result<Trajectory> {
    script.validate()?;
    let mut samples = Vec::with_capacity(script.total_frames());
    if script.kind == MovementKind::Random {
        // One continuous stream; repetitions are equal consecutive blocks.
        let path = random_path(script, seed);
        // Waypoint weights are seconds here, rescaled to the exact frame budget.
        let stream = sample_path(&path, script.total_frames(), 0, 0);
        let mut start = 0;
        for (rep, &n) in script.frames_per_rep.iter().enumerate() {
            for s in &stream[start..start + n] {
                samples.push(TrajectorySample { rep, ..*s });
            }
            start += n;
        }
    } else {
        let path = distance_weighted(&rep_waypoints(script));
        let mut offset = 0;
        for (rep, &n) in script.frames_per_rep.iter().enumerate() {
            samples.extend(sample_path(&path, n, offset, rep));
            offset += n;
        }
    }
    Ok(Trajectory { samples })
}
