//! Centripetal Catmull-Rom arc length.

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Minimum distance between consecutive knots, meters.
pub const MIN_KNOT_SPACING: f64 = 1e-3;

const GAUSS_POINTS: usize = 16;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre() -> &'static [(f64, f64); GAUSS_POINTS] {
    static RULE: OnceLock<[(f64, f64); GAUSS_POINTS]> = OnceLock::new();
    RULE.get_or_init(legendre_rule::<GAUSS_POINTS>)
}

// Newton iteration on P_n starting from the Chebyshev-like guesses.
fn legendre_rule<const N: usize>() -> [(f64, f64); N] {
    let n = N as f64;
    let mut rule = [(0.0, 0.0); N];
    for (i, slot) in rule.iter_mut().enumerate() {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=N {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        *slot = (x, 2.0 / ((1.0 - x * x) * dp * dp));
    }
    rule
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// One spline segment between `p1` and `p2` as a cubic Hermite curve on
/// `u in [0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    p1: Vec3,
    p2: Vec3,
    m1: Vec3,
    m2: Vec3,
}

impl Segment {
    /// Centripetal (alpha = 1/2) tangents for the span `p1 -> p2`.
    fn centripetal(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3) -> Self {
        let d01 = distance(p0, p1).sqrt();
        let d12 = distance(p1, p2).sqrt();
        let d23 = distance(p2, p3).sqrt();
        let mut m1 = [0.0; 3];
        let mut m2 = [0.0; 3];
        for k in 0..3 {
            let t1 = (p1[k] - p0[k]) / d01 - (p2[k] - p0[k]) / (d01 + d12) + (p2[k] - p1[k]) / d12;
            let t2 = (p2[k] - p1[k]) / d12 - (p3[k] - p1[k]) / (d12 + d23) + (p3[k] - p2[k]) / d23;
            m1[k] = t1 * d12;
            m2[k] = t2 * d12;
        }
        Self { p1, p2, m1, m2 }
    }

    pub fn point(&self, u: f64) -> Vec3 {
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        std::array::from_fn(|k| h00 * self.p1[k] + h10 * self.m1[k] + h01 * self.p2[k] + h11 * self.m2[k])
    }

    pub fn derivative(&self, u: f64) -> Vec3 {
        let u2 = u * u;
        let d00 = 6.0 * u2 - 6.0 * u;
        let d10 = 3.0 * u2 - 4.0 * u + 1.0;
        let d01 = -6.0 * u2 + 6.0 * u;
        let d11 = 3.0 * u2 - 2.0 * u;
        std::array::from_fn(|k| d00 * self.p1[k] + d10 * self.m1[k] + d01 * self.p2[k] + d11 * self.m2[k])
    }

    pub fn arc_length(&self) -> f64 {
        gauss_legendre()
            .iter()
            .map(|&(x, w)| w * norm(self.derivative(0.5 * (x + 1.0))))
            .sum::<f64>()
            * 0.5
    }
}

/// Splits the curve through `points` into segments. The ends are clamped with
/// phantom knots reflected through the end points.
pub fn segments(points: &[Vec3]) -> Result<Vec<Segment>> {
    if points.len() < 3 {
        return Err(Error::Layout(format!(
            "spline needs at least 3 points, got {}",
            points.len()
        )));
    }
    for (i, w) in points.windows(2).enumerate() {
        if !w[0].iter().chain(w[1].iter()).all(|v| v.is_finite()) {
            return Err(Error::Layout("non-finite knot".into()));
        }
        let d = distance(w[0], w[1]);
        if d <= MIN_KNOT_SPACING {
            return Err(Error::Layout(format!(
                "knots {i} and {} are {:.3} mm apart (minimum {} mm)",
                i + 1,
                d * 1e3,
                MIN_KNOT_SPACING * 1e3
            )));
        }
    }
    let n = points.len();
    let reflect = |a: Vec3, b: Vec3| -> Vec3 { std::array::from_fn(|k| 2.0 * a[k] - b[k]) };
    let head = reflect(points[0], points[1]);
    let tail = reflect(points[n - 1], points[n - 2]);
    let at = |i: isize| -> Vec3 {
        if i < 0 {
            head
        } else if i as usize >= n {
            tail
        } else {
            points[i as usize]
        }
    };
    Ok((0..n - 1)
        .map(|i| {
            let i = i as isize;
            Segment::centripetal(at(i - 1), at(i), at(i + 1), at(i + 2))
        })
        .collect())
}

/// Arc length of the centripetal Catmull-Rom spline through `points`.
pub fn path_length(points: &[Vec3]) -> Result<f64> {
    Ok(segments(points)?.iter().map(Segment::arc_length).sum())
}
