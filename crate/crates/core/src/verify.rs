//! Self-checks behind the `verify` command: orientation round trips,
//! hysteresis and creep physics, and suit monotonicity.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nonlin::{loop_area, CorruptionParams, CreepState, PlayBankState};
use crate::orient::{
    euler_to_quat, max_abs_diff, ms_to_isb, quat_to_euler_zyx, EulerConvention, EulerTriple, Mat3, UnitQuaternion,
};
use crate::suitsim::{elevation_sweep, ideal_sensors, monotonicity_violations, pearson, RoutingLayout, Tendon};
use crate::JointAngles;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

fn rx(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn ry(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rz(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Composes elementary rotations for an intrinsic Euler triple.
pub fn euler_matrix(e: &EulerTriple) -> Mat3 {
    let [a, b, c] = e.angles();
    match e.convention {
        EulerConvention::YxyIntrinsic => mul(&mul(&ry(a), &rx(b)), &ry(c)),
        EulerConvention::ZyxIntrinsic => mul(&mul(&rz(a), &ry(b)), &rx(c)),
    }
}

/// Random YXY triples through quaternion and ZYX extraction, compared with
/// directly composed matrices.
pub fn orientation_round_trip(samples: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = Uniform::new(-40f64.to_radians(), 90f64.to_radians()).expect("bounds");
    let phi = Uniform::new(0.0, 90f64.to_radians()).expect("bounds");
    let angle = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI).expect("bounds");
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let e = if i % 2 == 0 {
            ms_to_isb(JointAngles::new(theta.sample(&mut rng), phi.sample(&mut rng)), 0.0)?
        } else {
            let b = -Uniform::new(1e-3, std::f64::consts::PI - 1e-3)
                .expect("bounds")
                .sample(&mut rng);
            EulerTriple::new(
                angle.sample(&mut rng),
                b,
                angle.sample(&mut rng),
                EulerConvention::YxyIntrinsic,
            )
        };
        let reference = euler_matrix(&e);
        let q = euler_to_quat(&e)?;
        let zyx = quat_to_euler_zyx(&q)?;
        worst = worst
            .max(max_abs_diff(&q.to_matrix(), &reference))
            .max(max_abs_diff(&euler_matrix(&zyx), &reference));
    }
    let id = euler_to_quat(&EulerTriple::new(0.0, 0.0, 0.0, EulerConvention::YxyIntrinsic))?;
    let id_zyx = quat_to_euler_zyx(&UnitQuaternion::IDENTITY)?;
    let identity_err = [id.w - 1.0, id.x, id.y, id.z]
        .into_iter()
        .chain(id_zyx.angles())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((worst, identity_err))
}

/// One flexion cycle (elevation 0 -> 90 -> 0 deg in the flexion plane) of
/// the F channel, `samples_per_half` samples each way.
pub fn flexion_cycle(layout: &RoutingLayout, samples_per_half: usize) -> Result<Vec<f64>> {
    let up = elevation_sweep(layout, 90.0, samples_per_half + 1)?;
    let mut xs: Vec<f64> = up.iter().map(|s| s[Tendon::F.index()]).collect();
    xs.extend(up.iter().rev().skip(1).map(|s| s[Tendon::F.index()]));
    Ok(xs)
}

/// Linear resampling with `factor - 1` points inserted between samples.
pub fn upsample(xs: &[f64], factor: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len() * factor);
    for w in xs.windows(2) {
        for j in 0..factor {
            let u = j as f64 / factor as f64;
            out.push(w[0] + (w[1] - w[0]) * u);
        }
    }
    out.extend(xs.last());
    out
}

/// Default bank for a channel spanning `range` mm.
pub fn default_bank(range: f64) -> Result<PlayBankState> {
    let p = CorruptionParams::default();
    PlayBankState::uniform(p.operators, p.width_fraction * range)
}

/// Largest difference between the bank output on `xs` and on its
/// `factor`-times resampled version, at the original instants.
pub fn rate_independence_error(bank: &PlayBankState, xs: &[f64], factor: usize) -> f64 {
    let mut a = bank.clone();
    let mut b = bank.clone();
    let base: Vec<f64> = xs.iter().map(|&x| a.step(x)).collect();
    let fine: Vec<f64> = upsample(xs, factor).iter().map(|&x| b.step(x)).collect();
    base.iter()
        .enumerate()
        .map(|(i, y)| (y - fine[i * factor]).abs())
        .fold(0.0, f64::max)
}

/// Area of the steady-state input/output loop over the last of `cycles`.
pub fn hysteresis_loop_area(bank: &PlayBankState, cycle: &[f64], cycles: usize) -> f64 {
    let mut b = bank.clone();
    let mut last = (Vec::new(), Vec::new());
    for c in 0..cycles {
        for &x in cycle {
            let y = b.step(x);
            if c + 1 == cycles {
                last.0.push(x);
                last.1.push(y);
            }
        }
    }
    loop_area(&last.0, &last.1)
}

/// Worst relative deviation of stepped creep from `c_inf (1 - exp(-t/tau))`.
pub fn creep_error(c_inf: f64, tau: f64, dt: f64, duration: f64) -> Result<f64> {
    let mut s = CreepState::new(c_inf, tau)?;
    let steps = (duration / dt).round() as usize;
    let mut worst: f64 = 0.0;
    for k in 1..=steps {
        let d = s.step(dt)?;
        let exact = c_inf * (1.0 - (-(k as f64) * dt / tau).exp());
        worst = worst.max((d - exact).abs() / exact);
    }
    Ok(worst)
}

pub fn run_all() -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let (round_trip, identity) = orientation_round_trip(10_000, 1)?;
    checks.push(Check::new(
        "orientation round trip",
        round_trip < 1e-9,
        format!("max matrix discrepancy {round_trip:.3e} over 10000 poses (< 1e-9)"),
    ));
    checks.push(Check::new(
        "orientation identity",
        identity <= 1e-12,
        format!("max deviation {identity:.3e} (<= 1e-12)"),
    ));

    let layout = RoutingLayout::default_layout();
    let cycle = flexion_cycle(&layout, 120)?;
    let range =
        cycle.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - cycle.iter().cloned().fold(f64::INFINITY, f64::min);
    let bank = default_bank(range)?;
    for factor in [2, 10] {
        let err = rate_independence_error(&bank, &cycle, factor);
        checks.push(Check::new(
            if factor == 2 {
                "hysteresis rate independence 2x"
            } else {
                "hysteresis rate independence 10x"
            },
            err <= 1e-12,
            format!("max output difference {err:.3e} mm (<= 1e-12)"),
        ));
    }
    let area = hysteresis_loop_area(&bank, &cycle, 3);
    checks.push(Check::new(
        "hysteresis loop area",
        area > 0.0,
        format!("{area:.4} mm^2 (> 0)"),
    ));
    let zero = PlayBankState::identity();
    let area0 = hysteresis_loop_area(&zero, &cycle, 3);
    checks.push(Check::new(
        "zero-width loop area",
        area0.abs() <= 1e-12,
        format!("{area0:.3e} mm^2 (|.| <= 1e-12)"),
    ));
    let p = CorruptionParams::default();
    let creep = creep_error(p.creep_c_inf, p.creep_tau, 1.0 / 120.0, 3.0 * p.creep_tau)?;
    checks.push(Check::new(
        "creep closed form",
        creep <= 0.01,
        format!("max relative error {:.4}% at dt = 1/120 s (<= 1%)", creep * 100.0),
    ));

    let flex = elevation_sweep(&layout, 90.0, 91)?;
    let abd = elevation_sweep(&layout, 0.0, 91)?;
    let ch = |v: &[[f64; 4]], t: Tendon| -> Vec<f64> { v.iter().map(|s| s[t.index()]).collect() };
    let (f, r) = (ch(&flex, Tendon::F), ch(&flex, Tendon::R));
    let flex_bad = monotonicity_violations(&f, false) + monotonicity_violations(&r, true);
    checks.push(Check::new(
        "suit flexion monotonicity",
        flex_bad == 0,
        format!("{flex_bad} violations (F decreasing, R increasing, 91 samples)"),
    ));
    let abd_bad =
        monotonicity_violations(&ch(&abd, Tendon::SF), false) + monotonicity_violations(&ch(&abd, Tendon::SR), false);
    checks.push(Check::new(
        "suit abduction monotonicity",
        abd_bad == 0,
        format!("{abd_bad} violations (SF, SR decreasing, 91 samples)"),
    ));
    let corr = pearson(&f, &r);
    checks.push(Check::new(
        "suit F/R flexion correlation",
        corr <= -0.95,
        format!("{corr:.4} (<= -0.95)"),
    ));
    let neutral = ideal_sensors(&layout, JointAngles::NEUTRAL)?.s;
    checks.push(Check::new(
        "suit neutral pose",
        neutral.iter().all(|v| v.abs() < 1e-9),
        format!("{neutral:?} mm"),
    ));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        for c in run_all().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn upsample_keeps_originals() {
        let xs = [0.0, 1.0, -2.0];
        let up = upsample(&xs, 4);
        assert_eq!(up.len(), 9);
        assert_eq!((up[0], up[4], up[8]), (0.0, 1.0, -2.0));
        assert_eq!(up[2], 0.5);
    }
}
