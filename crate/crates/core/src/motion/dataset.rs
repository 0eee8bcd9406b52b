//! Sliding windows over corpus trajectories, split by repetition and
//! z-score normalized with statistics from the training side only.

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use crate::error::{Error, Result};
use crate::suitsim::CHANNELS;

pub const OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 17,
        }
    }
}

/// Per-channel affine normalization for inputs and targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub input_mean: [f64; CHANNELS],
    pub input_std: [f64; CHANNELS],
    pub target_mean: [f64; OUTPUTS],
    pub target_std: [f64; OUTPUTS],
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            input_mean: [0.0; CHANNELS],
            input_std: [1.0; CHANNELS],
            target_mean: [0.0; OUTPUTS],
            target_std: [1.0; OUTPUTS],
        }
    }

    fn mean_std<const N: usize>(rows: impl Iterator<Item = [f64; N]>) -> ([f64; N], [f64; N]) {
        let mut sum = [0.0; N];
        let mut sq = [0.0; N];
        let mut n = 0.0;
        for r in rows {
            for k in 0..N {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
            n += 1.0;
        }
        let mean: [f64; N] = std::array::from_fn(|k| sum[k] / n);
        let std = std::array::from_fn(|k| {
            let v = (sq[k] / n - mean[k] * mean[k]).max(0.0).sqrt();
            if v > 1e-12 {
                v
            } else {
                1.0
            }
        });
        (mean, std)
    }

    pub fn normalize_input(&self, s: &[f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|k| (s[k] - self.input_mean[k]) / self.input_std[k])
    }

    pub fn normalize_target(&self, y: [f64; OUTPUTS]) -> [f64; OUTPUTS] {
        std::array::from_fn(|k| (y[k] - self.target_mean[k]) / self.target_std[k])
    }

    pub fn denormalize_target(&self, y: [f64; OUTPUTS]) -> [f64; OUTPUTS] {
        std::array::from_fn(|k| y[k] * self.target_std[k] + self.target_mean[k])
    }

    pub fn denormalize_input(&self, s: [f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|k| s[k] * self.input_std[k] + self.input_mean[k])
    }
}

/// Windows of `n_steps` frames with the joint angles at each window's end.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_steps: usize,
    pub split: Split,
    pub scaler: Scaler,
    /// Normalized windows, `(m, n_steps, 4)`.
    pub inputs: Array3<f64>,
    /// Normalized targets `(theta, phi)`, `(m, 2)`.
    pub targets: Array2<f64>,
    /// Corpus trajectory index of each window.
    pub trajectory: Vec<usize>,
    /// Timestamp of each window's last frame.
    pub end_time: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Targets in radians.
    pub fn raw_targets(&self) -> Array2<f64> {
        let mut out = self.targets.clone();
        for mut row in out.rows_mut() {
            let y = self.scaler.denormalize_target([row[0], row[1]]);
            row[0] = y[0];
            row[1] = y[1];
        }
        out
    }

    /// Same windows under a different scaler.
    pub fn rescaled(&self, scaler: Scaler) -> Dataset {
        let mut out = self.clone();
        for mut w in out.inputs.outer_iter_mut() {
            for mut row in w.rows_mut() {
                let raw = self.scaler.denormalize_input([row[0], row[1], row[2], row[3]]);
                let z = scaler.normalize_input(&raw);
                row.iter_mut().zip(z).for_each(|(d, s)| *d = s);
            }
        }
        for mut row in out.targets.rows_mut() {
            let raw = self.scaler.denormalize_target([row[0], row[1]]);
            let z = scaler.normalize_target(raw);
            row[0] = z[0];
            row[1] = z[1];
        }
        out.scaler = scaler;
        out
    }

    /// Subset of windows by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            n_steps: self.n_steps,
            split: self.split,
            scaler: self.scaler,
            inputs: self.inputs.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
            trajectory: idx.iter().map(|&i| self.trajectory[i]).collect(),
            end_time: idx.iter().map(|&i| self.end_time[i]).collect(),
        }
    }

    fn build(corpus: &Corpus, members: &[usize], n: usize, split: Split, scaler: Scaler) -> Dataset {
        let count: usize = members
            .iter()
            .map(|&i| corpus.trajectories[i].len().saturating_sub(n - 1))
            .sum();
        let mut inputs = Array3::zeros((count, n, CHANNELS));
        let mut targets = Array2::zeros((count, OUTPUTS));
        let mut trajectory = Vec::with_capacity(count);
        let mut end_time = Vec::with_capacity(count);
        let mut w = 0;
        for &i in members {
            let rec = &corpus.trajectories[i];
            if rec.len() < n {
                continue;
            }
            let normalized: Vec<[f64; CHANNELS]> = rec.frames.iter().map(|f| scaler.normalize_input(&f.s)).collect();
            for end in n - 1..rec.len() {
                for (k, row) in normalized[end + 1 - n..=end].iter().enumerate() {
                    for c in 0..CHANNELS {
                        inputs[[w, k, c]] = row[c];
                    }
                }
                let q = rec.angles[end];
                let y = scaler.normalize_target([q.theta, q.phi]);
                targets[[w, 0]] = y[0];
                targets[[w, 1]] = y[1];
                trajectory.push(i);
                end_time.push(rec.frames[end].t);
                w += 1;
            }
        }
        Dataset {
            n_steps: n,
            split,
            scaler,
            inputs,
            targets,
            trajectory,
            end_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Windowed {
    pub train: Dataset,
    pub test: Dataset,
    /// Trajectories shorter than the window, left out.
    pub skipped: usize,
}

/// Assigns whole trajectories (repetitions) to train or test. Trajectories are
/// visited in a seeded random order and moved to test while that keeps the
/// test frame share closest to `test_fraction`.
pub fn assign_split(corpus: &Corpus, spec: &SplitSpec) -> Result<Vec<Split>> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "test_fraction must be in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let n = corpus.trajectories.len();
    if n < 2 {
        return Err(Error::Validation("need at least 2 trajectories to split".into()));
    }
    let total = corpus.total_frames() as f64;
    let target = spec.test_fraction * total;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut splits = vec![Split::Train; n];
    let mut test_frames = 0.0;
    for &i in &order {
        let len = corpus.trajectories[i].len() as f64;
        if (test_frames + len - target).abs() < (test_frames - target).abs() {
            splits[i] = Split::Test;
            test_frames += len;
        }
    }
    if !splits.contains(&Split::Test) {
        splits[order[0]] = Split::Test;
    }
    if !splits.contains(&Split::Train) {
        splits[order[n - 1]] = Split::Train;
    }
    Ok(splits)
}

/// Builds train/test window sets (stride 1) with a scaler fitted on train.
pub fn window_and_normalize(corpus: &Corpus, n: usize, spec: &SplitSpec) -> Result<Windowed> {
    if n == 0 {
        return Err(Error::InvalidArgument("window length must be >= 1".into()));
    }
    if corpus.trajectories.is_empty() {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    let splits = assign_split(corpus, spec)?;
    let members = |want: Split| -> Vec<usize> { (0..splits.len()).filter(|&i| splits[i] == want).collect() };
    let (train_ids, test_ids) = (members(Split::Train), members(Split::Test));
    let skipped = corpus.trajectories.iter().filter(|r| r.len() < n).count();
    if skipped > 0 {
        log::warn!("{skipped} trajectories shorter than {n} frames were skipped");
    }

    let usable: Vec<usize> = train_ids
        .iter()
        .copied()
        .filter(|&i| corpus.trajectories[i].len() >= n)
        .collect();
    if usable.is_empty() {
        return Err(Error::Validation("no training trajectory is long enough".into()));
    }
    let (input_mean, input_std) = Scaler::mean_std(
        usable
            .iter()
            .flat_map(|&i| corpus.trajectories[i].frames.iter().map(|f| f.s)),
    );
    let (target_mean, target_std) = Scaler::mean_std(
        usable
            .iter()
            .flat_map(|&i| corpus.trajectories[i].angles[n - 1..].iter().map(|q| [q.theta, q.phi])),
    );
    let scaler = Scaler {
        input_mean,
        input_std,
        target_mean,
        target_std,
    };
    Ok(Windowed {
        train: Dataset::build(corpus, &train_ids, n, Split::Train, scaler),
        test: Dataset::build(corpus, &test_ids, n, Split::Test, scaler),
        skipped,
    })
}
