//! Sensor nonlinearities: Prandtl-Ishlinskii hysteresis, first-order creep
//! and Gaussian read noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::suitsim::{SensorFrame, CHANNELS};

/// Classical play (backlash) operator.
pub fn play_step(y_prev: f64, x: f64, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "play threshold must be non-negative, got {r}"
        )));
    }
    Ok(play(y_prev, x, r))
}

#[inline]
fn play(y_prev: f64, x: f64, r: f64) -> f64 {
    (x - r).max((x + r).min(y_prev))
}

/// Weighted bank of play operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayBankState {
    thresholds: Vec<f64>,
    weights: Vec<f64>,
    memory: Vec<f64>,
}

impl PlayBankState {
    /// Memory starts at zero, so the first step clamps 0 into `[x0 - r, x0 + r]`.
    pub fn new(thresholds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "play bank needs matching non-empty thresholds and weights ({} vs {})",
                thresholds.len(),
                weights.len()
            )));
        }
        if !(thresholds[0] >= 0.0) || thresholds.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument(
                "thresholds must be finite and non-negative".into(),
            ));
        }
        if thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("thresholds must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights must sum to 1, got {total}")));
        }
        let memory = vec![0.0; thresholds.len()];
        Ok(Self {
            thresholds,
            weights,
            memory,
        })
    }

    /// `count` evenly spaced thresholds `j * width / count`, `j = 1..=count`,
    /// with uniform weights.
    pub fn uniform(count: usize, width: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("play bank needs operators".into()));
        }
        let thresholds = (1..=count).map(|j| j as f64 * width / count as f64).collect();
        Self::new(thresholds, vec![1.0 / count as f64; count])
    }

    /// The zero-width single operator, an exact identity.
    pub fn identity() -> Self {
        Self::new(vec![0.0], vec![1.0]).expect("valid")
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn memory(&self) -> &[f64] {
        &self.memory
    }

    pub fn max_threshold(&self) -> f64 {
        *self.thresholds.last().expect("non-empty")
    }

    pub fn reset(&mut self) {
        self.memory.iter_mut().for_each(|y| *y = 0.0);
    }

    /// Advances every operator with input `x` and returns the weighted output.
    pub fn step(&mut self, x: f64) -> f64 {
        let mut out = None;
        for ((y, &r), &w) in self.memory.iter_mut().zip(&self.thresholds).zip(&self.weights) {
            *y = play(*y, x, r);
            debug_assert!((*y - x).abs() <= r * (1.0 + 1e-12) + 1e-12);
            let term = w * *y;
            out = Some(match out {
                None => term,
                Some(acc) => acc + term,
            });
        }
        out.expect("non-empty bank")
    }
}

/// Functional form of [`PlayBankState::step`].
pub fn pi_step(mut bank: PlayBankState, x: f64) -> (f64, PlayBankState) {
    let y = bank.step(x);
    (y, bank)
}

/// First-order saturating drift toward `c_inf` with time constant `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreepState {
    pub d: f64,
    pub c_inf: f64,
    pub tau: f64,
}

impl CreepState {
    pub fn new(c_inf: f64, tau: f64) -> Result<Self> {
        if !c_inf.is_finite() || !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "creep needs finite c_inf and tau > 0 (got {c_inf}, {tau})"
            )));
        }
        Ok(Self { d: 0.0, c_inf, tau })
    }

    /// Forward-Euler step. `dt` must lie in `(0, tau]` so the drift never
    /// overshoots its asymptote.
    pub fn step(&mut self, dt: f64) -> Result<f64> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if dt > self.tau {
            return Err(Error::InvalidArgument(format!(
                "dt {dt} exceeds the creep time constant {}",
                self.tau
            )));
        }
        self.d += (dt / self.tau) * (self.c_inf - self.d);
        Ok(self.d)
    }
}

pub fn creep_step(mut state: CreepState, dt: f64) -> Result<(f64, CreepState)> {
    let d = state.step(dt)?;
    Ok((d, state))
}

/// Resolved per-channel corruption parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelCorruption {
    pub thresholds: Vec<f64>,
    pub weights: Vec<f64>,
    pub creep_c_inf: f64,
    pub creep_tau: f64,
}

impl ChannelCorruption {
    pub fn identity() -> Self {
        Self {
            thresholds: vec![0.0],
            weights: vec![1.0],
            creep_c_inf: 0.0,
            creep_tau: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    pub channels: Vec<ChannelCorruption>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn identity() -> Self {
        Self {
            channels: vec![ChannelCorruption::identity(); CHANNELS],
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != CHANNELS {
            return Err(Error::Validation(format!(
                "corruption needs {CHANNELS} channels, got {}",
                self.channels.len()
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Validation("noise_sigma must be >= 0".into()));
        }
        for c in &self.channels {
            PlayBankState::new(c.thresholds.clone(), c.weights.clone())?;
            CreepState::new(c.creep_c_inf, c.creep_tau)?;
        }
        Ok(())
    }
}

/// Corruption settings as written in a run configuration; thresholds are
/// resolved against the per-channel sensor range of the clean corpus.
///
/// Defaults are engineering choices, not measured suit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionParams {
    pub enabled: bool,
    /// Play operators per channel.
    pub operators: usize,
    /// Largest threshold as a fraction of the channel's range.
    pub width_fraction: f64,
    /// Asymptotic creep drift, mm.
    pub creep_c_inf: f64,
    /// Creep time constant, s.
    pub creep_tau: f64,
    /// Read noise standard deviation, mm.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            enabled: true,
            operators: 10,
            width_fraction: 0.06,
            creep_c_inf: 2.0,
            creep_tau: 60.0,
            noise_sigma: 0.05,
            seed: 7,
        }
    }
}

impl CorruptionParams {
    pub fn resolve(&self, ranges: [f64; CHANNELS]) -> Result<CorruptionConfig> {
        if !self.enabled {
            return Ok(CorruptionConfig {
                seed: self.seed,
                ..CorruptionConfig::identity()
            });
        }
        let channels = ranges
            .iter()
            .map(|&range| {
                let bank = PlayBankState::uniform(self.operators, self.width_fraction * range)?;
                Ok(ChannelCorruption {
                    thresholds: bank.thresholds().to_vec(),
                    weights: bank.weights().to_vec(),
                    creep_c_inf: self.creep_c_inf,
                    creep_tau: self.creep_tau,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = CorruptionConfig {
            channels,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies hysteresis, creep and noise channel by channel.
pub fn corrupt_stream(frames: &[SensorFrame], cfg: &CorruptionConfig) -> Result<Vec<SensorFrame>> {
    cfg.validate()?;
    for w in frames.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::InvalidArgument("frame timestamps must strictly increase".into()));
        }
    }
    let mut banks: Vec<PlayBankState> = cfg
        .channels
        .iter()
        .map(|c| PlayBankState::new(c.thresholds.clone(), c.weights.clone()))
        .collect::<Result<_>>()?;
    let mut creeps: Vec<CreepState> = cfg
        .channels
        .iter()
        .map(|c| CreepState::new(c.creep_c_inf, c.creep_tau))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("sigma validated"));

    let mut out = Vec::with_capacity(frames.len());
    let mut prev_t = None;
    for frame in frames {
        let dt = prev_t.map(|p| frame.t - p);
        prev_t = Some(frame.t);
        let mut s = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let mut v = banks[c].step(frame.s[c]);
            if let Some(dt) = dt {
                let d = creeps[c].step(dt)?;
                if d != 0.0 {
                    v += d;
                }
            }
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            s[c] = v;
        }
        out.push(SensorFrame { t: frame.t, s });
    }
    Ok(out)
}

/// Absolute area enclosed by the closed polygon `(xs[i], ys[i])` (shoelace).
pub fn loop_area(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        twice += xs[i] * ys[j] - xs[j] * ys[i];
    }
    (twice / 2.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(from: f64, to: f64, steps: usize) -> Vec<f64> {
        (0..=steps)
            .map(|k| from + (to - from) * k as f64 / steps as f64)
            .collect()
    }

    #[test]
    fn play_step_examples() {
        assert_eq!(play_step(0.0, 0.0, 0.1).unwrap(), 0.0);
        let mut y = 0.0;
        for x in ramp(0.0, 1.0, 1000) {
            y = play_step(y, x, 0.1).unwrap();
        }
        assert!((y - 0.9).abs() < 1e-12);
        assert!((play_step(0.9, 0.5, 0.1).unwrap() - 0.6).abs() < 1e-12);
        assert!(play_step(0.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn zero_width_bank_is_identity() {
        let mut bank = PlayBankState::identity();
        for x in [0.3, -1.2, 5.0, 5.0, -0.25] {
            assert_eq!(bank.step(x), x);
        }
    }

    #[test]
    fn ramp_through_bank() {
        let r = vec![0.02, 0.05, 0.11];
        let w = vec![0.2, 0.3, 0.5];
        let mut bank = PlayBankState::new(r.clone(), w.clone()).unwrap();
        let a = 0.4;
        let mut out = 0.0;
        for x in ramp(0.0, a, 400) {
            out = bank.step(x);
        }
        let want: f64 = r.iter().zip(&w).map(|(r, w)| w * (a - r).max(0.0)).sum();
        assert!((out - want).abs() < 1e-12);
    }

    #[test]
    fn triangle_wave_final_value() {
        // Oracle: each play with 0 < r <= 0.1 ends a 0 -> 1 -> 0 triangle at
        // y = r (it descends with lag r); uniform weights give mean(r) = 0.06.
        let mut bank = PlayBankState::new(vec![0.02, 0.04, 0.06, 0.08, 0.10], vec![0.2; 5]).unwrap();
        let mut out = 0.0;
        for x in ramp(0.0, 1.0, 1000).into_iter().chain(ramp(1.0, 0.0, 1000)) {
            out = bank.step(x);
        }
        assert!((out - 0.06).abs() < 1e-12, "{out}");
    }

    #[test]
    fn bank_validation() {
        assert!(PlayBankState::new(vec![0.1, 0.1], vec![0.5, 0.5]).is_err());
        assert!(PlayBankState::new(vec![-0.1], vec![1.0]).is_err());
        assert!(PlayBankState::new(vec![0.1, 0.2], vec![0.5, 0.6]).is_err());
        assert!(PlayBankState::new(vec![0.1, 0.2], vec![1.5, -0.5]).is_err());
        assert!(PlayBankState::new(vec![], vec![]).is_err());
    }

    #[test]
    fn creep_examples() {
        let mut s = CreepState::new(0.0, 60.0).unwrap();
        for _ in 0..1000 {
            assert_eq!(s.step(0.1).unwrap(), 0.0);
        }
        let s = CreepState::new(2.0, 60.0).unwrap();
        let (d, _) = creep_step(s, 0.6).unwrap();
        assert!((d - 0.02).abs() < 1e-15);
        let (d, _) = creep_step(s, 60.0).unwrap();
        assert_eq!(d, 2.0);

        let mut s = CreepState::new(2.0, 60.0).unwrap();
        let mut d = 0.0;
        for _ in 0..10_000 {
            d = s.step(0.05).unwrap();
        }
        let exact = 2.0 * (1.0 - (-500.0f64 / 60.0).exp());
        assert!((d - exact).abs() / exact < 0.01);

        assert!(s.step(0.0).is_err());
        assert!(s.step(-1.0).is_err());
        assert!(s.step(61.0).is_err());
    }

    fn stream(values: &[f64], dt: f64) -> Vec<SensorFrame> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| SensorFrame {
                t: i as f64 * dt,
                s: [v, -v, 2.0 * v, 0.5 * v],
            })
            .collect()
    }

    #[test]
    fn identity_config_is_bit_exact() {
        let frames = stream(&[0.0, 1.5, -3.25, 7.0, 1e-9], 0.01);
        let out = corrupt_stream(&frames, &CorruptionConfig::identity()).unwrap();
        assert_eq!(out, frames);
    }

    #[test]
    fn seeded_corruption_is_deterministic() {
        let params = CorruptionParams::default();
        let cfg = params.resolve([40.0, 50.0, 30.0, 45.0]).unwrap();
        let frames = stream(&ramp(0.0, 20.0, 300), 1.0 / 120.0);
        let a = corrupt_stream(&frames, &cfg).unwrap();
        let b = corrupt_stream(&frames, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, frames);
    }

    #[test]
    fn corrupt_stream_rejects_bad_time() {
        let mut frames = stream(&[0.0, 1.0], 0.01);
        frames[1].t = 0.0;
        assert!(corrupt_stream(&frames, &CorruptionConfig::identity()).is_err());
    }

    #[test]
    fn loop_area_of_square() {
        let xs = [0.0, 1.0, 1.0, 0.0];
        let ys = [0.0, 0.0, 2.0, 2.0];
        assert_eq!(loop_area(&xs, &ys), 2.0);
    }

    fn periodic(amplitude: f64, samples_per_cycle: usize, cycles: usize) -> Vec<f64> {
        (0..samples_per_cycle * cycles)
            .map(|k| {
                let ph = 2.0 * std::f64::consts::PI * k as f64 / samples_per_cycle as f64;
                amplitude * (1.0 - ph.cos()) / 2.0
            })
            .collect()
    }

    fn steady_loop_area(bank: &mut PlayBankState, xs: &[f64], per: usize) -> f64 {
        let ys: Vec<f64> = xs.iter().map(|&x| bank.step(x)).collect();
        let n = xs.len();
        loop_area(&xs[n - per..], &ys[n - per..])
    }

    #[test]
    fn loop_area_positive_for_default_bank_and_zero_without_play() {
        let xs = periodic(10.0, 400, 3);
        let mut bank = PlayBankState::uniform(10, 0.06 * 10.0).unwrap();
        assert!(steady_loop_area(&mut bank, &xs, 400) > 0.0);
        let mut id = PlayBankState::identity();
        assert!(steady_loop_area(&mut id, &xs, 400) <= 1e-12);
    }

    proptest! {
        #[test]
        fn band_condition_holds(xs in proptest::collection::vec(-50.0f64..50.0, 1..200)) {
            let mut bank = PlayBankState::uniform(7, 3.0).unwrap();
            for x in xs {
                bank.step(x);
                for (y, r) in bank.memory().iter().zip(bank.thresholds()) {
                    prop_assert!((y - x).abs() <= r + 1e-12);
                }
            }
        }

        #[test]
        fn pi_is_rate_independent(
            xs in proptest::collection::vec(-20.0f64..20.0, 2..100),
            dt in 0.001f64..0.1, factor in 2usize..11,
        ) {
            // Same samples on a different clock: identical outputs.
            let params = CorruptionParams { creep_c_inf: 0.0, noise_sigma: 0.0, ..Default::default() };
            let cfg = params.resolve([30.0; 4]).unwrap();
            let a = corrupt_stream(&stream(&xs, dt), &cfg).unwrap();
            let b = corrupt_stream(&stream(&xs, dt * factor as f64), &cfg).unwrap();
            for (fa, fb) in a.iter().zip(&b) {
                prop_assert_eq!(fa.s, fb.s);
            }
        }

        #[test]
        fn creep_monotone_and_bounded(c_inf in 0.0f64..5.0, tau in 1.0f64..100.0, dts in proptest::collection::vec(0.001f64..1.0, 1..300)) {
            let mut s = CreepState::new(c_inf, tau).unwrap();
            let mut prev = 0.0;
            for dt in dts {
                let d = s.step(dt).unwrap();
                prop_assert!(d >= prev && d <= c_inf);
                prev = d;
            }
        }

        #[test]
        fn gain_neutral_on_slow_monotone_input(range in 5.0f64..100.0) {
            let mut bank = PlayBankState::uniform(10, 0.06 * 10.0).unwrap();
            let xs = ramp(0.0, range, 2000);
            let ys: Vec<f64> = xs.iter().map(|&x| bank.step(x)).collect();
            let out_range = ys.last().unwrap() - ys[0];
            let ratio = out_range / range;
            prop_assert!(ratio <= 1.0 + 1e-12);
            prop_assert!(ratio >= 1.0 - bank.max_threshold() / range - 1e-12);
        }
    }
}
