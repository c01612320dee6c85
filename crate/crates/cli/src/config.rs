//! Resolved run configuration: presets, `key=value` files and overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hifi_core::detect::LossConfig;
use hifi_core::hifinet::ModelConfig;
use hifi_core::kv::KvMap;
use hifi_core::sigsynth::{ChannelConfig, FadingMode, ModScheme, SceneSpec};
use hifi_core::tfr::{StftConfig, WindowKind, DEFAULT_FLOOR_DB};
use hifi_core::{Error, Result};

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "HIFI_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Eval,
    Infer,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Infer => "infer",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset '{s}' (desk, paper)"))),
        }
    }
}

/// Dataset partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (train, val, test)"))),
        }
    }
}

/// Learning-rate schedule over the whole run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Linear warm-up over `warmup_steps`, then cosine decay to `lr · lr_final`.
    Cosine,
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(Error::Config(format!("unknown lr_schedule '{s}' (constant, cosine)"))),
        }
    }
}

/// Training-time augmentation of each drawn sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augment {
    None,
    /// Random time and/or frequency reversal, boxes mirrored to match.
    Flip,
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augment::None => "none",
            Augment::Flip => "flip",
        })
    }
}

impl FromStr for Augment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Augment::None),
            "flip" => Ok(Augment::Flip),
            _ => Err(Error::Config(format!("unknown augment '{s}' (none, flip)"))),
        }
    }
}

/// Every setting of a command, defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub preset: Preset,

    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    /// Weights for eval/infer; `run_dir/best.ckpt` when unset.
    pub checkpoint: Option<PathBuf>,
    /// Where eval/infer write; `run_dir/<command>` when unset.
    pub output_dir: Option<PathBuf>,
    /// Single I/Q file for infer; the `eval_split` of the dataset when unset.
    pub input: Option<PathBuf>,
    /// Precomputed `<id>.det` files scored by eval instead of running the model.
    pub predictions_dir: Option<PathBuf>,
    pub eval_split: Split,

    pub num_scenes: usize,
    pub snr_grid: Vec<f64>,
    pub classes: Vec<ModScheme>,
    pub scene: SceneSpec,
    pub channel: ChannelConfig,
    pub stft: StftConfig,
    pub floor_db: f64,

    pub model: ModelConfig,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: usize,
    pub lr_final: f64,
    pub augment: Augment,
    /// Loss gains; `None` picks [`LossConfig::scaled`] for the model.
    pub box_gain: Option<f64>,
    pub obj_gain: Option<f64>,
    pub cls_gain: Option<f64>,
    pub split_ratios: [f64; 3],
    pub seed: u64,
    pub overfit: bool,
    pub overfit_steps: usize,
    /// Stop after this many optimizer steps in total (counting resumed ones).
    pub max_steps: Option<usize>,
    pub resume: bool,

    /// Inference thresholds.
    pub conf: f64,
    pub iou: f64,
    /// Thresholds used when scoring val/test.
    pub eval_conf: f64,
    pub eval_iou: f64,

    pub plan_only: bool,
    pub overwrite: bool,
    pub workers: usize,
}

fn fmt_list<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!("{key}: expected two comma-separated numbers, got '{v}'"))),
    }
}

fn parse_gain(key: &str, v: &str) -> Result<Option<f64>> {
    if v.trim() == "auto" {
        return Ok(None);
    }
    let g: f64 = parse_one(key, v)?;
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::Config(format!("{key} must be a non-negative number or 'auto', got '{v}'")));
    }
    Ok(Some(g))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn fmt_fading(m: FadingMode) -> String {
    match m {
        FadingMode::BlockConstant => "block".into(),
        FadingMode::TimeVarying { coherence_samples } => format!("varying:{coherence_samples}"),
    }
}

fn parse_fading(v: &str) -> Result<FadingMode> {
    let v = v.trim();
    if v == "block" {
        return Ok(FadingMode::BlockConstant);
    }
    if let Some(c) = v.strip_prefix("varying:") {
        return Ok(FadingMode::TimeVarying { coherence_samples: parse_one("fading", c)? });
    }
    Err(Error::Config(format!("fading: expected 'block' or 'varying:<samples>', got '{v}'")))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Reads the worker count from [`WORKERS_ENV`], falling back to the number
/// of available cores.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(default_workers()),
    }
}

/// The nine-point grid −10, −7.5, …, 10 dB.
pub fn full_snr_grid() -> Vec<f64> {
    (0..9).map(|i| -10.0 + 2.5 * i as f64).collect()
}

impl RunConfig {
    pub fn preset(command: Command, preset: Preset) -> Self {
        let (num_scenes, scene, stft, model) = match preset {
            Preset::Desk => (600, SceneSpec::desk(0), StftConfig::desk(), ModelConfig::desk()),
            Preset::Paper => (36_000, SceneSpec::paper(0), StftConfig::paper(), ModelConfig::paper()),
        };
        RunConfig {
            command,
            preset,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
            checkpoint: None,
            output_dir: None,
            input: None,
            predictions_dir: None,
            eval_split: Split::Test,
            num_scenes,
            snr_grid: full_snr_grid(),
            classes: ModScheme::ALL.to_vec(),
            scene,
            channel: ChannelConfig::default(),
            stft,
            floor_db: DEFAULT_FLOOR_DB,
            model,
            epochs: 30,
            batch_size: 32,
            lr: 0.002,
            weight_decay: 0.01,
            lr_schedule: LrSchedule::Cosine,
            augment: Augment::Flip,
            warmup_steps: 50,
            lr_final: 0.05,
            box_gain: None,
            obj_gain: None,
            cls_gain: None,
            split_ratios: [0.6, 0.2, 0.2],
            seed: 0,
            overfit: false,
            overfit_steps: 300,
            max_steps: None,
            resume: false,
            conf: hifi_core::detect::DEFAULT_CONF,
            iou: hifi_core::detect::DEFAULT_IOU,
            eval_conf: 0.001,
            eval_iou: 0.6,
            plan_only: false,
            overwrite: false,
            workers: default_workers(),
        }
    }

    /// Preset defaults, then `file` (if any), then `overrides` in order.
    /// The preset is taken from the last `preset=` entry among them.
    pub fn resolve(command: Command, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut kv = KvMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
            kv.merge(&KvMap::parse(&text)?);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{o}'")))?;
            kv.set(k.trim(), v.trim());
        }
        let preset = kv.get("preset").map(str::parse).transpose()?.unwrap_or(Preset::Desk);
        let mut cfg = Self::preset(command, preset);
        cfg.workers = workers_from_env()?;
        cfg.apply(&kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every entry of `kv`; unknown keys are an error.
    pub fn apply(&mut self, kv: &KvMap) -> Result<()> {
        let mut model_kv = KvMap::new();
        for (k, v) in kv.iter() {
            if MODEL_KEYS.contains(&k) {
                model_kv.set(k, v);
                continue;
            }
            self.apply_one(k, v)?;
        }
        self.model = self.model.clone().apply_kv(&model_kv)?;
        if model_kv.contains("num_classes") && self.model.num_classes != self.classes.len() {
            return Err(Error::Config(format!(
                "num_classes={} disagrees with {} listed classes",
                self.model.num_classes,
                self.classes.len()
            )));
        }
        self.model.num_classes = self.classes.len();
        Ok(())
    }

    fn apply_one(&mut self, k: &str, v: &str) -> Result<()> {
        let path = || PathBuf::from(v.trim());
        let opt_path = || (!v.trim().is_empty()).then(path);
        match k {
            "preset" => self.preset = parse_one(k, v)?,
            "data_dir" => self.data_dir = path(),
            "run_dir" => self.run_dir = path(),
            "checkpoint" => self.checkpoint = opt_path(),
            "output_dir" => self.output_dir = opt_path(),
            "input" => self.input = opt_path(),
            "predictions_dir" => self.predictions_dir = opt_path(),
            "eval_split" => self.eval_split = parse_one(k, v)?,
            "num_scenes" => self.num_scenes = parse_one(k, v)?,
            "snr_grid" => self.snr_grid = parse_list(k, v)?,
            "classes" => self.classes = parse_list(k, v)?,
            "min_signals" => self.scene.min_signals = parse_one(k, v)?,
            "max_signals" => self.scene.max_signals = parse_one(k, v)?,
            "max_overlap" => self.scene.max_overlap = parse_one(k, v)?,
            "n_samples" => self.scene.n_samples = parse_one(k, v)?,
            "f_s" => self.scene.f_s = parse_one(k, v)?,
            "duration_frac" => self.scene.duration_frac = parse_pair(k, v)?,
            "bandwidth_frac" => self.scene.bandwidth_frac = parse_pair(k, v)?,
            "k_factor" => self.channel.k_factor = parse_one(k, v)?,
            "fading" => self.channel.fading_mode = parse_fading(v)?,
            "n_fft" => self.stft.n_fft = parse_one(k, v)?,
            "hop" => self.stft.hop = parse_one(k, v)?,
            "window" => self.stft.window = parse_one::<WindowKind>(k, v)?,
            "floor_db" => self.floor_db = parse_one(k, v)?,
            "epochs" => self.epochs = parse_one(k, v)?,
            "batch_size" => self.batch_size = parse_one(k, v)?,
            "lr" => self.lr = parse_one(k, v)?,
            "weight_decay" => self.weight_decay = parse_one(k, v)?,
            "lr_schedule" => self.lr_schedule = parse_one(k, v)?,
            "augment" => self.augment = parse_one(k, v)?,
            "warmup_steps" => self.warmup_steps = parse_one(k, v)?,
            "lr_final" => self.lr_final = parse_one(k, v)?,
            "box_gain" => self.box_gain = parse_gain(k, v)?,
            "obj_gain" => self.obj_gain = parse_gain(k, v)?,
            "cls_gain" => self.cls_gain = parse_gain(k, v)?,
            "split" => {
                self.split_ratios = match parse_list::<f64>(k, v)?[..] {
                    [a, b, c] => [a, b, c],
                    _ => return Err(Error::Config(format!("split: expected three ratios, got '{v}'"))),
                }
            }
            "seed" => self.seed = parse_one(k, v)?,
            "overfit" => self.overfit = parse_bool(k, v)?,
            "overfit_steps" => self.overfit_steps = parse_one(k, v)?,
            "max_steps" => self.max_steps = if v.trim() == "none" { None } else { Some(parse_one(k, v)?) },
            "resume" => self.resume = parse_bool(k, v)?,
            "conf" => self.conf = parse_one(k, v)?,
            "iou" => self.iou = parse_one(k, v)?,
            "eval_conf" => self.eval_conf = parse_one(k, v)?,
            "eval_iou" => self.eval_iou = parse_one(k, v)?,
            "plan_only" => self.plan_only = parse_bool(k, v)?,
            "overwrite" => self.overwrite = parse_bool(k, v)?,
            "workers" => {
                self.workers = parse_one(k, v)?;
            }
            _ => return Err(Error::Config(format!("unknown configuration key '{k}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return cfg_err(format!("split ratios {:?} must be non-negative and sum to 1", self.split_ratios));
        }
        if self.snr_grid.is_empty() || self.snr_grid.iter().any(|s| !s.is_finite()) {
            return cfg_err("snr_grid must list at least one finite SNR".into());
        }
        if self.classes.is_empty() {
            return cfg_err("classes must name at least one modulation".into());
        }
        let mut seen = self.classes.clone();
        seen.sort_by_key(|c| c.class_id());
        seen.dedup();
        if seen.len() != self.classes.len() {
            return cfg_err("classes lists a modulation twice".into());
        }
        self.scene_spec(0).validate()?;
        self.channel_for(self.snr_grid[0]).validate()?;
        if self.num_scenes == 0 {
            return cfg_err("num_scenes must be positive".into());
        }
        if !(self.floor_db < 0.0) {
            return cfg_err(format!("floor_db must be negative, got {}", self.floor_db));
        }
        let frames = self.stft.num_frames(self.scene.n_samples);
        if self.stft.n_fft != self.model.input_size || frames != self.model.input_size {
            return cfg_err(format!(
                "spectrogram is {frames} frames × {} bins but the model takes {1}×{1}; adjust n_samples, hop, n_fft or input_size",
                self.stft.n_fft, self.model.input_size
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.overfit_steps == 0 {
            return cfg_err("epochs, batch_size and overfit_steps must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(0.0..=1.0).contains(&self.lr_final) {
            return cfg_err("lr must be positive, weight_decay non-negative, lr_final in [0, 1]".into());
        }
        for (name, t) in [("conf", self.conf), ("iou", self.iou), ("eval_conf", self.eval_conf), ("eval_iou", self.eval_iou)] {
            if !(t > 0.0 && t < 1.0) {
                return cfg_err(format!("{name} must lie in (0, 1), got {t}"));
            }
        }
        if self.workers == 0 {
            return cfg_err("workers must be positive".into());
        }
        Ok(())
    }

    /// Scene parameters with this config's classes and the given seed.
    pub fn scene_spec(&self, rng_seed: u64) -> SceneSpec {
        SceneSpec { rng_seed, schemes: self.classes.clone(), ..self.scene.clone() }
    }

    pub fn channel_for(&self, snr_db: f64) -> ChannelConfig {
        ChannelConfig { snr_db, ..self.channel }
    }

    pub fn loss_config(&self) -> LossConfig {
        let mut l = LossConfig::scaled(self.model.num_classes, self.model.input_size, self.model.strides().len());
        if let Some(g) = self.box_gain {
            l.box_weight = g;
        }
        if let Some(g) = self.obj_gain {
            l.obj_weight = g;
        }
        if let Some(g) = self.cls_gain {
            l.cls_weight = g;
        }
        l
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.run_dir.join("best.ckpt"))
    }

    pub fn output_path(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| self.run_dir.join(self.command.to_string()))
    }

    /// Class index used by the network for a modulation.
    pub fn local_class(&self, scheme_id: usize) -> Option<usize> {
        self.classes.iter().position(|c| c.class_id() == scheme_id)
    }

    /// Every setting as `key=value` text, in a form [`RunConfig::resolve`]
    /// reads back.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.model.to_kv();
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        kv.set("command", self.command);
        kv.set("preset", self.preset);
        kv.set("data_dir", self.data_dir.display());
        kv.set("run_dir", self.run_dir.display());
        kv.set("checkpoint", opt(&self.checkpoint));
        kv.set("output_dir", opt(&self.output_dir));
        kv.set("input", opt(&self.input));
        kv.set("predictions_dir", opt(&self.predictions_dir));
        kv.set("eval_split", self.eval_split);
        kv.set("num_scenes", self.num_scenes);
        kv.set("snr_grid", fmt_list(&self.snr_grid));
        kv.set("classes", fmt_list(&self.classes));
        kv.set("min_signals", self.scene.min_signals);
        kv.set("max_signals", self.scene.max_signals);
        kv.set("max_overlap", self.scene.max_overlap);
        kv.set("n_samples", self.scene.n_samples);
        kv.set("f_s", self.scene.f_s);
        kv.set("duration_frac", format!("{},{}", self.scene.duration_frac.0, self.scene.duration_frac.1));
        kv.set("bandwidth_frac", format!("{},{}", self.scene.bandwidth_frac.0, self.scene.bandwidth_frac.1));
        kv.set("k_factor", self.channel.k_factor);
        kv.set("fading", fmt_fading(self.channel.fading_mode));
        kv.set("n_fft", self.stft.n_fft);
        kv.set("hop", self.stft.hop);
        kv.set("window", self.stft.window);
        kv.set("floor_db", self.floor_db);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("lr_schedule", self.lr_schedule);
        kv.set("augment", self.augment);
        kv.set("warmup_steps", self.warmup_steps);
        kv.set("lr_final", self.lr_final);
        let gain = |g: Option<f64>| g.map_or("auto".to_string(), |v| v.to_string());
        kv.set("box_gain", gain(self.box_gain));
        kv.set("obj_gain", gain(self.obj_gain));
        kv.set("cls_gain", gain(self.cls_gain));
        kv.set("split", fmt_list(&self.split_ratios));
        kv.set("seed", self.seed);
        kv.set("overfit", self.overfit);
        kv.set("overfit_steps", self.overfit_steps);
        kv.set("max_steps", self.max_steps.map_or("none".to_string(), |s| s.to_string()));
        kv.set("resume", self.resume);
        kv.set("conf", self.conf);
        kv.set("iou", self.iou);
        kv.set("eval_conf", self.eval_conf);
        kv.set("eval_iou", self.eval_iou);
        kv.set("plan_only", self.plan_only);
        kv.set("overwrite", self.overwrite);
        kv.set("workers", self.workers);
        kv
    }

    /// The echo printed before every command.
    pub fn echo(&self) -> String {
        format!("# resolved configuration\n{}", self.to_kv().to_text())
    }
}

/// Keys routed to [`ModelConfig::apply_kv`].
const MODEL_KEYS: [&str; 13] = [
    "input_size",
    "depth",
    "channels",
    "groups",
    "head_kernel",
    "lfe_mode",
    "resample_up",
    "resample_down",
    "head_mode",
    "num_classes",
    "num_anchors",
    "offset_scale",
    "attention",
];
