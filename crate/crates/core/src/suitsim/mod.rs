//! Geometric stand-in for the sensing suit.
//!
//! Each tendon is a spline through routing anchors. Torso anchors stay put;
//! upper-arm anchors rotate about the shoulder center with the arm. A sensor
//! value is the change of the tendon's path length from the neutral pose, in
//! millimeters, positive when the tendon lengthens.

pub mod spline;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orient::{self, JointAngles, Mat3};
pub use spline::{path_length, Vec3};

pub const CHANNELS: usize = 4;
pub const LAYOUT_VERSION: u32 = 1;

const DEFAULT_LAYOUT: &str = include_str!("../../data/default_layout.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tendon {
    F,
    SF,
    SR,
    R,
}

impl Tendon {
    pub const ALL: [Tendon; CHANNELS] = [Tendon::F, Tendon::SF, Tendon::SR, Tendon::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tendon::F => "F",
            Tendon::SF => "SF",
            Tendon::SR => "SR",
            Tendon::R => "R",
        }
    }
}

/// Timestamped tendon displacements `(S_F, S_SF, S_SR, S_R)` in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    pub s: [f64; CHANNELS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnchorFrame {
    Torso,
    UpperArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub xyz: Vec3,
    pub frame: AnchorFrame,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct TendonTable {
    F: Vec<Anchor>,
    SF: Vec<Anchor>,
    SR: Vec<Anchor>,
    R: Vec<Anchor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    version: u32,
    shoulder_center: Vec3,
    tendons: TendonTable,
}

/// Rotation of the upper arm about the shoulder center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmTransform {
    pub center: Vec3,
    pub rotation: Mat3,
}

impl ArmTransform {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let rel = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let r = orient::mat_vec(&self.rotation, rel);
        [r[0] + self.center[0], r[1] + self.center[1], r[2] + self.center[2]]
    }
}

/// The intrinsic Y-X'-Y'' rotation for `(theta, -phi, 0)` about `center`.
pub fn arm_transform(q: JointAngles, center: Vec3) -> Result<ArmTransform> {
    Ok(ArmTransform {
        center,
        rotation: orient::arm_rotation(q)?.to_matrix(),
    })
}

/// Validated, immutable tendon routing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingLayout {
    shoulder_center: Vec3,
    tendons: [Vec<Anchor>; CHANNELS],
    neutral_lengths: [f64; CHANNELS],
}

impl RoutingLayout {
    pub fn new(shoulder_center: Vec3, tendons: [Vec<Anchor>; CHANNELS]) -> Result<Self> {
        if !shoulder_center.iter().all(|v| v.is_finite()) {
            return Err(Error::Layout("shoulder center must be finite".into()));
        }
        for (tendon, anchors) in Tendon::ALL.iter().zip(&tendons) {
            let name = tendon.name();
            if anchors.len() < 3 {
                return Err(Error::Layout(format!(
                    "tendon {name} has {} anchors, needs at least 3",
                    anchors.len()
                )));
            }
            if anchors[0].frame != AnchorFrame::Torso {
                return Err(Error::Layout(format!("tendon {name} must start on the torso")));
            }
            if anchors[anchors.len() - 1].frame != AnchorFrame::UpperArm {
                return Err(Error::Layout(format!("tendon {name} must end on the upper arm")));
            }
        }
        let mut layout = Self {
            shoulder_center,
            tendons,
            neutral_lengths: [0.0; CHANNELS],
        };
        layout.neutral_lengths = layout.lengths(JointAngles::NEUTRAL)?;
        Ok(layout)
    }

    /// The calibrated layout shipped with the crate.
    pub fn default_layout() -> Self {
        Self::from_json(DEFAULT_LAYOUT).expect("bundled layout is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LayoutFile =
            serde_json::from_str(text).map_err(|e| Error::Layout(format!("malformed layout: {e}")))?;
        if file.version != LAYOUT_VERSION {
            return Err(Error::Layout(format!(
                "unsupported layout version {} (expected {LAYOUT_VERSION})",
                file.version
            )));
        }
        let t = file.tendons;
        Self::new(file.shoulder_center, [t.F, t.SF, t.SR, t.R])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let [f, sf, sr, r] = self.tendons.clone();
        let file = LayoutFile {
            version: LAYOUT_VERSION,
            shoulder_center: self.shoulder_center,
            tendons: TendonTable {
                F: f,
                SF: sf,
                SR: sr,
                R: r,
            },
        };
        serde_json::to_string_pretty(&file).expect("layout serializes")
    }

    pub fn shoulder_center(&self) -> Vec3 {
        self.shoulder_center
    }

    pub fn anchors(&self, tendon: Tendon) -> &[Anchor] {
        &self.tendons[tendon.index()]
    }

    /// Path lengths at the neutral pose, meters.
    pub fn neutral_lengths(&self) -> [f64; CHANNELS] {
        self.neutral_lengths
    }

    /// Anchor positions of one tendon at pose `q`.
    pub fn posed_anchors(&self, tendon: Tendon, transform: &ArmTransform) -> Vec<Vec3> {
        self.tendons[tendon.index()]
            .iter()
            .map(|a| match a.frame {
                AnchorFrame::Torso => a.xyz,
                AnchorFrame::UpperArm => transform.apply(a.xyz),
            })
            .collect()
    }

    /// Absolute path lengths at pose `q`, meters.
    pub fn lengths(&self, q: JointAngles) -> Result<[f64; CHANNELS]> {
        let transform = arm_transform(q, self.shoulder_center)?;
        let mut out = [0.0; CHANNELS];
        for tendon in Tendon::ALL {
            let pts = self.posed_anchors(tendon, &transform);
            out[tendon.index()] =
                path_length(&pts).map_err(|e| Error::Layout(format!("tendon {}: {e}", tendon.name())))?;
        }
        Ok(out)
    }
}

/// Ideal (nonlinearity-free) sensor reading at pose `q`; `t` is left at zero.
pub fn ideal_sensors(layout: &RoutingLayout, q: JointAngles) -> Result<SensorFrame> {
    let lengths = layout.lengths(q)?;
    let l0 = layout.neutral_lengths();
    Ok(SensorFrame {
        t: 0.0,
        s: std::array::from_fn(|i| (lengths[i] - l0[i]) * 1000.0),
    })
}

/// Ideal sensor stream for a timestamped pose sequence.
pub fn sweep(layout: &RoutingLayout, trajectory: &[(f64, JointAngles)]) -> Result<Vec<SensorFrame>> {
    for w in trajectory.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::InvalidArgument(format!(
                "timestamps must strictly increase ({} then {})",
                w[0].0, w[1].0
            )));
        }
    }
    trajectory
        .iter()
        .map(|&(t, q)| {
            let mut frame = ideal_sensors(layout, q)?;
            frame.t = t;
            Ok(frame)
        })
        .collect()
}

/// Pearson correlation of two equally long series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Sensor values along an elevation sweep `phi: 0 -> 90 deg` at fixed `theta`.
pub fn elevation_sweep(layout: &RoutingLayout, theta_deg: f64, samples: usize) -> Result<Vec<[f64; CHANNELS]>> {
    (0..samples)
        .map(|k| {
            let phi = 90.0 * k as f64 / (samples - 1) as f64;
            Ok(ideal_sensors(layout, JointAngles::from_degrees(theta_deg, phi))?.s)
        })
        .collect()
}

/// Number of steps along `values` that break strict monotonicity in the
/// requested direction.
pub fn monotonicity_violations(values: &[f64], increasing: bool) -> usize {
    values
        .windows(2)
        .filter(|w| if increasing { w[1] <= w[0] } else { w[1] >= w[0] })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn channel(frames: &[[f64; CHANNELS]], t: Tendon) -> Vec<f64> {
        frames.iter().map(|s| s[t.index()]).collect()
    }

    // Matrix oracle for the arm rotation.
    fn ry(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
    }
    fn rx(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
    }

    #[test]
    fn arm_transform_examples() {
        let c = [0.01, 0.02, -0.03];
        let t = arm_transform(JointAngles::NEUTRAL, c).unwrap();
        assert_eq!(t.rotation, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let p = [0.1, -0.2, 0.3];
        let got = t.apply(p);
        for k in 0..3 {
            assert!((got[k] - p[k]).abs() < 1e-16);
        }

        // Elevation 90 deg at theta 0: a -90 deg X' rotation.
        let t = arm_transform(JointAngles::new(0.0, FRAC_PI_2), [0.0; 3]).unwrap();
        let got = t.apply([0.0, -0.3, 0.0]);
        let want = orient::mat_vec(&rx(-FRAC_PI_2), [0.0, -0.3, 0.0]);
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-15);
        }
        assert!((got[2] - 0.3).abs() < 1e-15, "arm swings laterally: {got:?}");

        let t = arm_transform(JointAngles::new(FRAC_PI_2, 0.0), c).unwrap();
        let p = [0.05, -0.15, 0.02];
        let rel = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let r = orient::mat_vec(&ry(FRAC_PI_2), rel);
        let got = t.apply(p);
        for k in 0..3 {
            assert!((got[k] - (r[k] + c[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn neutral_pose_reads_zero() {
        let layout = RoutingLayout::default_layout();
        let f = ideal_sensors(&layout, JointAngles::NEUTRAL).unwrap();
        assert_eq!(f.s, [0.0; 4]);
        assert_eq!(layout.lengths(JointAngles::NEUTRAL).unwrap(), layout.neutral_lengths());
    }

    #[test]
    fn flexion_and_abduction_monotonicity() {
        let layout = RoutingLayout::default_layout();
        let flex = elevation_sweep(&layout, 90.0, 91).unwrap();
        assert_eq!(monotonicity_violations(&channel(&flex, Tendon::F), false), 0);
        assert_eq!(monotonicity_violations(&channel(&flex, Tendon::R), true), 0);
        let abd = elevation_sweep(&layout, 0.0, 91).unwrap();
        assert_eq!(monotonicity_violations(&channel(&abd, Tendon::SF), false), 0);
        assert_eq!(monotonicity_violations(&channel(&abd, Tendon::SR), false), 0);
        let r = pearson(&channel(&flex, Tendon::F), &channel(&flex, Tendon::R));
        assert!(r <= -0.95, "F/R correlation {r}");
    }

    #[test]
    fn sweep_contract() {
        let layout = RoutingLayout::default_layout();
        assert!(sweep(&layout, &[]).unwrap().is_empty());
        let one = sweep(&layout, &[(0.5, JointAngles::NEUTRAL)]).unwrap();
        assert_eq!(one, vec![SensorFrame { t: 0.5, s: [0.0; 4] }]);
        let bad = [(0.0, JointAngles::NEUTRAL), (0.0, JointAngles::NEUTRAL)];
        assert!(matches!(sweep(&layout, &bad), Err(Error::InvalidArgument(_))));

        // Flexion script: extremes sit at the sweep endpoints.
        let traj: Vec<_> = (0..=90)
            .map(|k| (k as f64 / 120.0, JointAngles::from_degrees(90.0, k as f64)))
            .collect();
        let frames = sweep(&layout, &traj).unwrap();
        assert_eq!(frames.len(), traj.len());
        let start = ideal_sensors(&layout, traj[0].1).unwrap().s;
        let end = ideal_sensors(&layout, traj[90].1).unwrap().s;
        let f: Vec<f64> = frames.iter().map(|fr| fr.s[0]).collect();
        let r: Vec<f64> = frames.iter().map(|fr| fr.s[3]).collect();
        assert_eq!(f.iter().cloned().fold(f64::MIN, f64::max), start[0]);
        assert_eq!(f.iter().cloned().fold(f64::MAX, f64::min), end[0]);
        assert_eq!(r.iter().cloned().fold(f64::MAX, f64::min), start[3]);
        assert_eq!(r.iter().cloned().fold(f64::MIN, f64::max), end[3]);
    }

    #[test]
    fn layout_validation() {
        let arm = Anchor {
            xyz: [0.0, -0.15, 0.0],
            frame: AnchorFrame::UpperArm,
        };
        let torso = Anchor {
            xyz: [0.1, 0.0, 0.0],
            frame: AnchorFrame::Torso,
        };
        let mid = Anchor {
            xyz: [0.05, -0.05, 0.0],
            frame: AnchorFrame::Torso,
        };
        let good = vec![torso, mid, arm];
        let tendons = || [good.clone(), good.clone(), good.clone(), good.clone()];
        assert!(RoutingLayout::new([0.0; 3], tendons()).is_ok());

        let mut t = tendons();
        t[1] = vec![torso, arm];
        assert!(matches!(RoutingLayout::new([0.0; 3], t), Err(Error::Layout(_))));
        let mut t = tendons();
        t[2] = vec![arm, mid, torso];
        assert!(RoutingLayout::new([0.0; 3], t).is_err());
        let mut t = tendons();
        t[3] = vec![torso, torso, arm];
        assert!(RoutingLayout::new([0.0; 3], t).is_err());
    }

    #[test]
    fn layout_json_round_trip_and_version_check() {
        let layout = RoutingLayout::default_layout();
        let again = RoutingLayout::from_json(&layout.to_json()).unwrap();
        assert_eq!(layout, again);
        let bumped = layout.to_json().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(RoutingLayout::from_json(&bumped), Err(Error::Layout(_))));
    }

    /// Largest sensor gradient norm (mm/rad) on a 1-degree grid, by central
    /// differences.
    fn max_gradient_norm(layout: &RoutingLayout) -> f64 {
        let h = 1e-4;
        let s = |th: f64, ph: f64| ideal_sensors(layout, JointAngles::new(th, ph)).unwrap().s;
        let mut k: f64 = 0.0;
        for th in -40..=90 {
            for ph in 0..=90 {
                let (th, ph) = ((th as f64).to_radians(), (ph as f64).to_radians());
                let (a, b, c, d) = (s(th + h, ph), s(th - h, ph), s(th, ph + h), s(th, ph - h));
                for i in 0..CHANNELS {
                    let g = ((a[i] - b[i]) / (2.0 * h)).hypot((c[i] - d[i]) / (2.0 * h));
                    k = k.max(g);
                }
            }
        }
        k
    }

    #[test]
    fn smooth_over_workspace() {
        let k = max_gradient_norm(&RoutingLayout::default_layout());
        assert!((k - LIPSCHITZ_MEASURED).abs() < 0.5, "K = {k} mm/rad");
    }

    /// Frozen from `max_gradient_norm` on the default layout.
    const LIPSCHITZ_MEASURED: f64 = 87.608;
    /// Headroom for gradients between grid points.
    const LIPSCHITZ_BOUND: f64 = 1.1 * LIPSCHITZ_MEASURED;

    proptest! {
        #[test]
        fn deterministic_and_lipschitz(
            th in -40.0f64..90.0, ph in 0.0f64..90.0, dth in -0.5f64..0.5, dph in -0.5f64..0.5,
        ) {
            let layout = RoutingLayout::default_layout();
            let q = JointAngles::from_degrees(th, ph);
            let a = ideal_sensors(&layout, q).unwrap();
            let b = ideal_sensors(&layout, q).unwrap();
            prop_assert_eq!(a.s.map(f64::to_bits), b.s.map(f64::to_bits));
            let q2 = JointAngles::from_degrees(th + dth, ph + dph);
            let c = ideal_sensors(&layout, q2).unwrap();
            let dq = (dth.hypot(dph)).to_radians();
            for i in 0..4 {
                prop_assert!((a.s[i] - c.s[i]).abs() <= LIPSCHITZ_BOUND * dq + 1e-9);
            }
        }
    }
}
