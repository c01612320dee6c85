//! On-disk scene datasets.
//!
//! ```text
//! <data_dir>/manifest.txt     header (`# key=value`) then `id snr_db split` rows
//! <data_dir>/config.txt       configuration that produced the dataset
//! <data_dir>/scenes/<id>.iq   .txt (labels)  .meta  .spec (normalised spectrogram)
//! ```

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hifi_core::detect::BBox;
use hifi_core::kv::KvMap;
use hifi_core::sigsynth::io::{format_labels, parse_labels, scene_metadata, write_iq};
use hifi_core::sigsynth::{compose_scene, ground_truth_boxes, ModScheme};
use hifi_core::tfr::{read_matrix, Spectrogram};
use hifi_core::{Error, Result};

use crate::config::{RunConfig, Split};
use crate::pool;

pub const MANIFEST: &str = "manifest.txt";
pub const SCENES: &str = "scenes";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: u64,
    pub snr_db: f64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: KvMap,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn classes(&self) -> Result<Vec<ModScheme>> {
        let list = self.header.get("classes").ok_or_else(|| Error::Format("manifest lacks classes".into()))?;
        list.split(',').map(str::parse).collect()
    }

    /// Whether scene files were written (false for plan-only datasets).
    pub fn materialized(&self) -> bool {
        self.header.get("materialized") != Some("false")
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.header.iter() {
            s.push_str(&format!("# {k}={v}\n"));
        }
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", scene_name(e.id), e.snr_db, e.split));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = KvMap::new();
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("manifest line {}: {line:?}", no + 1));
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.split_once('=') {
                    header.set(k.trim(), v.trim());
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                id: f[0].parse().map_err(|_| bad())?,
                snr_db: f[1].parse().map_err(|_| bad())?,
                split: f[2].parse().map_err(|_| bad())?,
            });
        }
        Ok(Manifest { header, entries })
    }

    pub fn read(data_dir: &Path) -> Result<Self> {
        let path = data_dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::InvalidInput(format!("no dataset manifest at {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn scene_name(id: u64) -> String {
    format!("{id:06}")
}

pub fn scene_path(data_dir: &Path, id: u64, ext: &str) -> PathBuf {
    data_dir.join(SCENES).join(format!("{}.{ext}", scene_name(id)))
}

/// SplitMix64 finaliser; decorrelates per-scene seeds from the base seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene `i` gets `grid[i mod len]`; each SNR stratum is shuffled and cut
/// by the split ratios so every stratum reaches train, val and test.
pub fn plan_split(num_scenes: usize, snr_grid: &[f64], ratios: [f64; 3], seed: u64) -> Vec<ManifestEntry> {
    let mut entries: Vec<ManifestEntry> = (0..num_scenes)
        .map(|i| ManifestEntry { id: i as u64, snr_db: snr_grid[i % snr_grid.len()], split: Split::Train })
        .collect();
    for stratum in 0..snr_grid.len() {
        let mut members: Vec<usize> = (stratum..num_scenes).step_by(snr_grid.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x5917, stratum as u64));
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = (n * ratios[0]).round() as usize;
        let n_val = ((n * (ratios[0] + ratios[1])).round() as usize).saturating_sub(n_train);
        for (rank, &i) in members.iter().enumerate() {
            entries[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    entries
}

fn ensure_empty_target(dir: &Path, overwrite: bool) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    if !dir.is_dir() {
        return Err(Error::InvalidInput(format!("{} exists and is not a directory", dir.display())));
    }
    let non_empty = fs::read_dir(dir)?.next().is_some();
    if non_empty {
        if !overwrite {
            return Err(Error::InvalidInput(format!(
                "output directory {} is not empty; pass --overwrite to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    Ok(())
}

/// Summary of a `generate` run.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateReport {
    pub manifest: Manifest,
    /// Scene counts per split for each SNR of the grid, in grid order.
    pub per_snr: Vec<(f64, [usize; 3])>,
    pub written: usize,
}

impl GenerateReport {
    pub fn table(&self) -> String {
        let mut s = String::from("snr_db  train  val  test\n");
        for (snr, c) in &self.per_snr {
            s.push_str(&format!("{snr:>6.1}  {:>5}  {:>3}  {:>4}\n", c[0], c[1], c[2]));
        }
        s
    }
}

/// Writes the dataset described by `cfg` into `cfg.data_dir`.
pub fn generate(cfg: &RunConfig) -> Result<GenerateReport> {
    let dir = &cfg.data_dir;
    ensure_empty_target(dir, cfg.overwrite)?;
    fs::create_dir_all(dir.join(SCENES))?;

    let entries = plan_split(cfg.num_scenes, &cfg.snr_grid, cfg.split_ratios, cfg.seed);
    let mut header = KvMap::new();
    header.set("scenes", cfg.num_scenes);
    header.set("seed", cfg.seed);
    header.set("preset", cfg.preset);
    header.set("classes", cfg.classes.iter().map(|c| c.name()).collect::<Vec<_>>().join(","));
    header.set("snr_grid", cfg.snr_grid.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
    header.set("n_t", cfg.stft.num_frames(cfg.scene.n_samples));
    header.set("n_f", cfg.stft.n_fft);
    header.set("materialized", !cfg.plan_only);
    let manifest = Manifest { header, entries };

    fs::write(dir.join("config.txt"), cfg.echo())?;

    let written = if cfg.plan_only {
        0
    } else {
        let results: Vec<Result<()>> =
            pool::map(cfg.workers, &manifest.entries, |e| write_scene(cfg, e));
        for r in results {
            r?;
        }
        manifest.entries.len()
    };
    // The manifest goes last so a partially written dataset has none.
    fs::write(dir.join(MANIFEST), manifest.to_text())?;

    let mut per_snr: Vec<(f64, [usize; 3])> = cfg.snr_grid.iter().map(|&s| (s, [0; 3])).collect();
    for e in &manifest.entries {
        if let Some(slot) = per_snr.iter_mut().find(|(s, _)| *s == e.snr_db) {
            slot.1[e.split as usize] += 1;
        }
    }
    Ok(GenerateReport { manifest, per_snr, written })
}

fn write_scene(cfg: &RunConfig, e: &ManifestEntry) -> Result<()> {
    let dir = &cfg.data_dir;
    let seed = mix_seed(cfg.seed, e.id);
    let rec = compose_scene(&cfg.scene_spec(seed), &cfg.channel_for(e.snr_db))?;
    let spec = Spectrogram::from_recording(&rec.samples, rec.f_s, &cfg.stft, cfg.floor_db)?;
    let labels = ground_truth_boxes(&rec, spec.n_t(), spec.n_f());
    let mut meta = scene_metadata(&rec);
    meta.set("id", e.id);
    meta.set("split", e.split);
    write_iq(BufWriter::new(fs::File::create(scene_path(dir, e.id, "iq"))?), &rec.samples)?;
    spec.write(BufWriter::new(fs::File::create(scene_path(dir, e.id, "spec"))?))?;
    fs::write(scene_path(dir, e.id, "txt"), format_labels(&labels))?;
    fs::write(scene_path(dir, e.id, "meta"), meta.to_text())?;
    Ok(())
}

/// A scene loaded for training or evaluation.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: u64,
    pub snr_db: f64,
    pub spectrogram: Array2<f32>,
    /// `(modulation class id, box)`.
    pub labels: Vec<(usize, BBox)>,
}

pub fn load_sample(data_dir: &Path, e: &ManifestEntry) -> Result<Sample> {
    let spec_path = scene_path(data_dir, e.id, "spec");
    let file = fs::File::open(&spec_path)
        .map_err(|err| Error::InvalidInput(format!("missing scene file {}: {err}", spec_path.display())))?;
    let spectrogram = read_matrix(BufReader::new(file))?;
    let labels = parse_labels(&fs::read_to_string(scene_path(data_dir, e.id, "txt"))?)?;
    Ok(Sample { id: e.id, snr_db: e.snr_db, spectrogram, labels })
}

/// Reads every scene of `split` (in manifest order) across the worker pool.
pub fn load_split(data_dir: &Path, manifest: &Manifest, split: Split, workers: usize) -> Result<Vec<Sample>> {
    if !manifest.materialized() {
        return Err(Error::InvalidInput(format!(
            "dataset at {} is plan-only; regenerate without plan_only to write scenes",
            data_dir.display()
        )));
    }
    let entries: Vec<ManifestEntry> = manifest.split(split).cloned().collect();
    pool::map(workers, &entries, |e| load_sample(data_dir, e)).into_iter().collect()
}
