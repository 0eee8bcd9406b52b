//! Corpus generation and the on-disk corpus format.
//!
//! A corpus directory holds one CSV per repetition
//! (`t,S_F,S_SF,S_SR,S_R,theta,phi`, radians and millimeters) and a
//! `manifest.json` that echoes every input needed to rebuild it.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::script::{generate_script, MovementKind, MovementScript, RandomParams};
use crate::error::{Error, Result};
use crate::fsio::{self, derive_seed};
use crate::nonlin::{corrupt_stream, CorruptionConfig, CorruptionParams};
use crate::orient::JointAngles;
use crate::par::Exec;
use crate::suitsim::{sweep, RoutingLayout, SensorFrame, CHANNELS};

pub const CSV_HEADER: &str = "t,S_F,S_SF,S_SR,S_R,theta,phi";
pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "tendonsense-corpus";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Fraction of the motion-capture session frame counts to synthesize.
    pub scale: f64,
    /// Blocks the random-movement stream is cut into for splitting.
    pub random_blocks: usize,
    pub seed: u64,
    pub random: RandomParams,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            scale: 0.2,
            random_blocks: 10,
            seed: 2020,
            random: RandomParams::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 10.0) {
            return Err(Error::Validation(format!(
                "corpus scale must be in (0, 10], got {}",
                self.scale
            )));
        }
        if self.random_blocks == 0 {
            return Err(Error::Validation("random_blocks must be >= 1".into()));
        }
        Ok(())
    }

    pub fn scripts(&self) -> Vec<MovementScript> {
        MovementKind::ALL
            .iter()
            .map(|&kind| {
                let (reps, frames) = kind.session();
                let total = (frames as f64 * self.scale).round() as usize;
                let mut s = MovementScript::new(kind, reps.unwrap_or(self.random_blocks), total);
                s.random = self.random;
                s
            })
            .collect()
    }
}

/// One repetition: a contiguous stretch of one movement script.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub id: String,
    pub kind: MovementKind,
    pub rep: usize,
    pub frames: Vec<SensorFrame>,
    pub angles: Vec<JointAngles>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.frames.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (f, q) in self.frames.iter().zip(&self.angles) {
            // `{}` on f64 is the shortest representation that round-trips.
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.t, f.s[0], f.s[1], f.s[2], f.s[3], q.theta, q.phi
            )
            .expect("string write");
        }
        out
    }

    pub fn from_csv(id: &str, kind: MovementKind, rep: usize, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Validation(format!("{id}: unexpected CSV header")));
        }
        let mut frames = Vec::new();
        let mut angles = Vec::new();
        for (n, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Validation(format!("{id} line {}: {e}", n + 2)))?;
            if vals.len() != 7 {
                return Err(Error::Validation(format!(
                    "{id} line {}: expected 7 columns, got {}",
                    n + 2,
                    vals.len()
                )));
            }
            frames.push(SensorFrame {
                t: vals[0],
                s: [vals[1], vals[2], vals[3], vals[4]],
            });
            angles.push(JointAngles::new(vals[5], vals[6]));
        }
        Ok(Self {
            id: id.to_string(),
            kind,
            rep,
            frames,
            angles,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub kind: MovementKind,
    pub rep: usize,
    pub frames: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptSeeds {
    pub kind: MovementKind,
    pub trajectory: u64,
    pub corruption: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub config: CorpusConfig,
    pub corruption: CorruptionParams,
    pub resolved_corruption: CorruptionConfig,
    pub ideal_ranges_mm: [f64; CHANNELS],
    pub layout: serde_json::Value,
    pub layout_sha256: String,
    pub seeds: Vec<ScriptSeeds>,
    pub files: Vec<FileEntry>,
    pub total_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub trajectories: Vec<TrajectoryRecord>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn total_frames(&self) -> usize {
        self.trajectories.iter().map(TrajectoryRecord::len).sum()
    }

    fn file_name(r: &TrajectoryRecord) -> String {
        format!("{}.csv", r.id)
    }

    /// Writes all CSVs, then the manifest, each atomically.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for r in &self.trajectories {
            fsio::write_atomic(&dir.join(Self::file_name(r)), r.to_csv().as_bytes())?;
        }
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fsio::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Loads a corpus directory, checking every file against its manifest hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(dir)?;
        let mut trajectories = Vec::with_capacity(manifest.files.len());
        for entry in &manifest.files {
            let path = dir.join(&entry.name);
            let bytes = fsio::read(&path)?;
            if fsio::sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::Validation(format!(
                    "{} does not match its manifest hash",
                    path.display()
                )));
            }
            let text =
                String::from_utf8(bytes).map_err(|_| Error::Validation(format!("{} is not UTF-8", path.display())))?;
            let id = entry.name.trim_end_matches(".csv");
            trajectories.push(TrajectoryRecord::from_csv(id, entry.kind, entry.rep, &text)?);
        }
        Ok(Self { trajectories, manifest })
    }
}

pub fn load_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: CorpusManifest = serde_json::from_slice(&fsio::read(&path)?)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Validation(format!(
            "unsupported corpus manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

/// Synthesizes the full corpus in memory.
pub fn generate_corpus(
    config: &CorpusConfig,
    layout: &RoutingLayout,
    corruption: &CorruptionParams,
    exec: Exec,
) -> Result<Corpus> {
    config.validate()?;
    let scripts = config.scripts();
    for s in &scripts {
        s.validate()?;
    }
    let traj_seeds: Vec<u64> = (0..scripts.len()).map(|i| derive_seed(config.seed, i as u64)).collect();

    let ideal = exec.map_range(scripts.len(), |i| -> Result<_> {
        let traj = generate_script(&scripts[i], traj_seeds[i])?;
        let frames = sweep(layout, &traj.timed_poses())?;
        Ok((traj, frames))
    });
    let ideal = ideal.into_iter().collect::<Result<Vec<_>>>()?;

    let mut lo = [f64::INFINITY; CHANNELS];
    let mut hi = [f64::NEG_INFINITY; CHANNELS];
    for (_, frames) in &ideal {
        for f in frames {
            for c in 0..CHANNELS {
                lo[c] = lo[c].min(f.s[c]);
                hi[c] = hi[c].max(f.s[c]);
            }
        }
    }
    let ranges: [f64; CHANNELS] = std::array::from_fn(|c| hi[c] - lo[c]);
    let resolved = corruption.resolve(ranges)?;
    let corruption_seeds: Vec<u64> = (0..scripts.len())
        .map(|i| derive_seed(resolved.seed, 1000 + i as u64))
        .collect();

    let corrupted = exec.map_range(scripts.len(), |i| {
        let cfg = CorruptionConfig {
            seed: corruption_seeds[i],
            ..resolved.clone()
        };
        corrupt_stream(&ideal[i].1, &cfg)
    });

    let mut trajectories = Vec::new();
    for (i, frames) in corrupted.into_iter().enumerate() {
        let frames = frames?;
        let traj = &ideal[i].0;
        let kind = scripts[i].kind;
        let mut start = 0;
        for (rep, &n) in scripts[i].frames_per_rep.iter().enumerate() {
            let end = start + n;
            debug_assert!(traj.samples[start..end].iter().all(|s| s.rep == rep));
            trajectories.push(TrajectoryRecord {
                id: format!("{}_{rep:02}", kind.slug()),
                kind,
                rep,
                frames: frames[start..end].to_vec(),
                angles: traj.samples[start..end].iter().map(|s| s.q).collect(),
            });
            start = end;
        }
    }

    let layout_json = layout.to_json();
    let files = trajectories
        .iter()
        .map(|r| FileEntry {
            name: Corpus::file_name(r),
            kind: r.kind,
            rep: r.rep,
            frames: r.len(),
            sha256: fsio::sha256_hex(r.to_csv().as_bytes()),
        })
        .collect();
    let manifest = CorpusManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: config.clone(),
        corruption: corruption.clone(),
        resolved_corruption: resolved,
        ideal_ranges_mm: ranges,
        layout: serde_json::from_str(&layout_json)?,
        layout_sha256: fsio::sha256_hex(layout_json.as_bytes()),
        seeds: scripts
            .iter()
            .enumerate()
            .map(|(i, s)| ScriptSeeds {
                kind: s.kind,
                trajectory: traj_seeds[i],
                corruption: corruption_seeds[i],
            })
            .collect(),
        total_frames: trajectories.iter().map(TrajectoryRecord::len).sum(),
        files,
    };
    Ok(Corpus { trajectories, manifest })
}

/// Generates the corpus and writes it to `dir`.
pub fn build_corpus(
    config: &CorpusConfig,
    layout: &RoutingLayout,
    corruption: &CorruptionParams,
    dir: &Path,
) -> Result<Corpus> {
    let corpus = generate_corpus(config, layout, corruption, Exec::default())?;
    corpus.write(dir)?;
    Ok(corpus)
}

/// Regenerates a corpus from the inputs echoed in its manifest.
pub fn rebuild_from_manifest(manifest: &CorpusManifest) -> Result<Corpus> {
    let layout = RoutingLayout::from_json(&manifest.layout.to_string())?;
    generate_corpus(&manifest.config, &layout, &manifest.corruption, Exec::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suitsim::ideal_sensors;

    fn small() -> CorpusConfig {
        CorpusConfig {
            scale: 0.03,
            random_blocks: 3,
            ..Default::default()
        }
    }

    #[test]
    fn desk_scale_frame_total() {
        let cfg = CorpusConfig::default();
        let total: usize = cfg.scripts().iter().map(MovementScript::total_frames).sum();
        let target = 0.2 * 29_551.0;
        assert!((total as f64 - target).abs() / target <= 0.02, "{total}");
    }

    #[test]
    fn disabled_corruption_reproduces_ideal_sensors() {
        let layout = RoutingLayout::default_layout();
        let params = CorruptionParams {
            enabled: false,
            ..Default::default()
        };
        let corpus = generate_corpus(&small(), &layout, &params, Exec::default()).unwrap();
        for r in &corpus.trajectories {
            for (f, q) in r.frames.iter().zip(&r.angles) {
                assert_eq!(f.s, ideal_sensors(&layout, *q).unwrap().s);
            }
        }
    }

    #[test]
    fn write_load_and_rebuild_are_identical() {
        let layout = RoutingLayout::default_layout();
        let params = CorruptionParams::default();
        let dir = tempfile::tempdir().unwrap();
        let built = build_corpus(&small(), &layout, &params, dir.path()).unwrap();
        let loaded = Corpus::load(dir.path()).unwrap();
        assert_eq!(built, loaded);

        let rebuilt = rebuild_from_manifest(&loaded.manifest).unwrap();
        assert_eq!(rebuilt, built);

        let dir2 = tempfile::tempdir().unwrap();
        build_corpus(&small(), &layout, &params, dir2.path()).unwrap();
        for entry in &built.manifest.files {
            assert_eq!(
                std::fs::read(dir.path().join(&entry.name)).unwrap(),
                std::fs::read(dir2.path().join(&entry.name)).unwrap()
            );
        }
        assert_eq!(
            std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn tampered_file_is_rejected() {
        let layout = RoutingLayout::default_layout();
        let dir = tempfile::tempdir().unwrap();
        let built = build_corpus(&small(), &layout, &CorruptionParams::default(), dir.path()).unwrap();
        let victim = dir.path().join(&built.manifest.files[0].name);
        let mut text = std::fs::read_to_string(&victim).unwrap();
        text.push_str("9,0,0,0,0,0,0\n");
        std::fs::write(&victim, text).unwrap();
        assert!(matches!(Corpus::load(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn csv_is_lf_and_round_trips_exactly() {
        let r = TrajectoryRecord {
            id: "x".into(),
            kind: MovementKind::AbdAdd,
            rep: 0,
            frames: vec![SensorFrame {
                t: 0.1,
                s: [1.0 / 3.0, -2.5e-17, 0.0, 123456.789],
            }],
            angles: vec![JointAngles::new(std::f64::consts::PI, -0.0)],
        };
        let text = r.to_csv();
        assert!(!text.contains('\r'));
        assert!(text.starts_with("t,S_F,S_SF,S_SR,S_R,theta,phi\n"));
        let back = TrajectoryRecord::from_csv("x", MovementKind::AbdAdd, 0, &text).unwrap();
        assert_eq!(back.frames[0].s.map(f64::to_bits), r.frames[0].s.map(f64::to_bits));
        assert_eq!(back.angles, r.angles);
    }
}
