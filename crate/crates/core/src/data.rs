//! Simulated insertion datasets: generation with the ground-truth roll in
//! the loop, JSON Lines persistence, episode-level splits and conversion to
//! network training sequences.
//!
//! On disk a dataset is a directory holding `episodes.jsonl` (one episode
//! per line) and `manifest.json`; every path in the manifest is relative to
//! that directory.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::estimator::TruthEstimator;
use crate::eval::{run_trial, TrialSetup};
use crate::lstm::{scale_features, RollTarget, Sequence};
use crate::parallel::parallel_map;
use crate::plant::{sample_target, MediumParams, WorkspaceCone};
use crate::seed::derive_seed;
use crate::se3::Vec3;

pub const SCHEMA_VERSION: u32 = 1;
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// How a closed-loop insertion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Arrived,
    DepthCapReached,
}

/// One insertion, sampled at the controller rate. Vector quantities are
/// stored as flat `[x0, y0, z0, x1, ...]` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub estimator: String,
    pub medium_name: String,
    pub medium: MediumParams,
    pub controller: ControllerParams,
    pub target: [f64; 3],
    /// Time, s.
    pub t: Vec<f64>,
    /// Sensed tip position, mm.
    pub sensed_position: Vec<f64>,
    /// Sensed unit heading.
    pub sensed_heading: Vec<f64>,
    /// True tip position, mm.
    pub true_position: Vec<f64>,
    /// Commanded base angle α, rad (unwrapped).
    pub base_angle: Vec<f64>,
    /// Ground-truth tip roll, rad in `(-π, π]`.
    pub roll_true: Vec<f64>,
    /// Insertion speed commanded at this tick, mm/s.
    pub insertion_speed: Vec<f64>,
    /// Base rotation speed commanded at this tick, rad/s.
    pub rotation_speed: Vec<f64>,
    pub termination: Termination,
    pub final_error_mm: f64,
}

fn vec3_at(flat: &[f64], i: usize) -> Vec3 {
    Vec3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2])
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn sensed_position_at(&self, i: usize) -> Vec3 {
        vec3_at(&self.sensed_position, i)
    }

    pub fn sensed_heading_at(&self, i: usize) -> Vec3 {
        vec3_at(&self.sensed_heading, i)
    }

    pub fn true_position_at(&self, i: usize) -> Vec3 {
        vec3_at(&self.true_position, i)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        let lens_ok = self.sensed_position.len() == 3 * n
            && self.sensed_heading.len() == 3 * n
            && self.true_position.len() == 3 * n
            && self.base_angle.len() == n
            && self.roll_true.len() == n
            && self.insertion_speed.len() == n
            && self.rotation_speed.len() == n;
        if !lens_ok {
            return Err(Error::InvalidInput("episode arrays differ in length".into()));
        }
        let dt = 1.0 / self.controller.rate;
        for w in self.t.windows(2) {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > 1e-9 {
                return Err(Error::InvalidInput("episode time base is not uniform".into()));
            }
        }
        Ok(())
    }

    /// Deepest true tip `z` reached, mm.
    pub fn max_depth(&self) -> f64 {
        (0..self.len())
            .map(|i| self.true_position[3 * i + 2])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Unassigned,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Zero-based line in the episodes file.
    pub line: usize,
    pub seed: u64,
    pub target: [f64; 3],
    pub steps: usize,
    pub max_depth_mm: f64,
    pub final_error_mm: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Relative to the dataset root.
    pub episodes_file: String,
    pub medium_name: String,
    pub seed: u64,
    /// Isotropic position scale for the network inputs, mm.
    pub z_max: f64,
    pub config_hash: String,
    pub episodes: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.episodes.iter().filter(|e| e.split == split).count()
    }
}

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n: usize,
    pub medium_name: String,
    pub medium: MediumParams,
    pub workspace: WorkspaceCone,
    pub controller: ControllerParams,
    pub z_max: f64,
    /// Attempts per episode slot before giving up.
    pub retries: usize,
    /// Episodes above this final error are regenerated, mm.
    pub max_final_error_mm: f64,
    /// Insertion stops this far past the deepest target, mm.
    pub depth_margin: f64,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Runs `config.n` ground-truth-steered insertions to fresh random targets.
///
/// Slots whose final error exceeds the threshold are retried with a new
/// target; a slot that keeps failing aborts generation.
pub fn generate_episodes(config: &GenerationConfig, jobs: usize) -> Result<Vec<EpisodeRecord>> {
    if config.n == 0 {
        return Err(Error::InvalidInput("dataset must contain at least one episode".into()));
    }
    config.medium.validate()?;
    config.workspace.validate()?;
    config.controller.validate()?;
    let slots: Vec<usize> = (0..config.n).collect();
    let results = parallel_map(&slots, jobs, |_, &slot| -> Result<EpisodeRecord> {
        let mut last_error_mm = f64::NAN;
        for attempt in 0..config.retries.max(1) {
            let seed = derive_seed(derive_seed(config.seed, slot as u64), attempt as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target = sample_target(&config.workspace, &mut rng);
            let setup = TrialSetup {
                medium_name: &config.medium_name,
                medium: &config.medium,
                controller: &config.controller,
                target,
                depth_cap: config.workspace.max_depth + config.depth_margin,
                seed: derive_seed(seed, 1),
            };
            let (record, _, summary) = run_trial(&setup, &mut TruthEstimator)?;
            if summary.targeting_error_mm <= config.max_final_error_mm {
                return Ok(record);
            }
            last_error_mm = summary.targeting_error_mm;
        }
        Err(Error::GenerationStalled {
            slot,
            attempts: config.retries.max(1),
            last_error_mm,
        })
    });
    results.into_iter().collect()
}

pub fn build_manifest(config: &GenerationConfig, records: &[EpisodeRecord]) -> DatasetManifest {
    DatasetManifest {
        schema_version: SCHEMA_VERSION,
        episodes_file: EPISODES_FILE.into(),
        medium_name: config.medium_name.clone(),
        seed: config.seed,
        z_max: config.z_max,
        config_hash: config.hash(),
        episodes: records
            .iter()
            .enumerate()
            .map(|(line, r)| ManifestEntry {
                line,
                seed: r.seed,
                target: r.target,
                steps: r.len(),
                max_depth_mm: r.max_depth(),
                final_error_mm: r.final_error_mm,
                split: Split::Unassigned,
            })
            .collect(),
    }
}

/// Seeded episode-level split: `round(n · train_fraction)` episodes go to
/// training and the rest to validation.
pub fn split(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = manifest.episodes.len();
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5917)));
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.episodes[i].split = if rank < n_train { Split::Train } else { Split::Val };
    }
    Ok(out)
}

/// Network sequences for every episode assigned to `which`, in manifest order.
pub fn to_training_sequences(
    manifest: &DatasetManifest,
    records: &[EpisodeRecord],
    which: Split,
) -> Vec<Sequence> {
    manifest
        .indices(which)
        .into_iter()
        .map(|i| episode_sequence(&records[manifest.episodes[i].line], manifest.z_max))
        .collect()
}

pub fn episode_sequence(record: &EpisodeRecord, z_max: f64) -> Sequence {
    let inputs = (0..record.len())
        .map(|i| {
            scale_features(
                &record.sensed_position_at(i),
                &record.sensed_heading_at(i),
                record.base_angle[i],
                z_max,
            )
        })
        .collect();
    let targets = record.roll_true.iter().map(|&r| RollTarget::from_angle(r)).collect();
    Sequence { inputs, targets }
}

pub fn write_episodes(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("episode serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!("line {}: unsupported schema_version {}", i + 1, rec.schema_version),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::format(path, format!("unsupported schema_version {}", m.schema_version)));
    }
    Ok(m)
}

/// A dataset loaded from its root directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        write_episodes(&root.join(&self.manifest.episodes_file), &self.records)?;
        write_manifest(&root.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let manifest = read_manifest(&root.join(MANIFEST_FILE))?;
        let records = read_episodes(&root.join(&manifest.episodes_file))?;
        if manifest.episodes.iter().any(|e| e.line >= records.len()) {
            return Err(Error::format(root, "manifest refers to a missing episode line"));
        }
        Ok(Self { manifest, records })
    }

    pub fn sequences(&self, which: Split) -> Vec<Sequence> {
        to_training_sequences(&self.manifest, &self.records, which)
    }
}

/// Generates, splits and (when `root` is given) persists a dataset.
pub fn generate_dataset(
    config: &GenerationConfig,
    train_fraction: f64,
    jobs: usize,
    root: Option<&Path>,
) -> Result<Dataset> {
    let records = generate_episodes(config, jobs)?;
    let manifest = split(&build_manifest(config, &records), train_fraction, config.seed)?;
    let dataset = Dataset { manifest, records };
    if let Some(root) = root {
        dataset.save(root)?;
    }
    Ok(dataset)
}
