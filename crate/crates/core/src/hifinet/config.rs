use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Source of the image pyramid injected into the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfeMode {
    Off,
    Gaussian,
    Laplacian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpMode {
    Bilinear,
    Ca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DownMode {
    StridedConv,
    Ca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    Original,
    Recombination,
}

/// Key range of the resampler attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionSpan {
    Global,
    /// Each query attends to a `size × size` neighbourhood of keys.
    Window(usize),
}

macro_rules! text_enum {
    ($t:ty, $what:literal, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

text_enum!(LfeMode, "lfe_mode", LfeMode::Off => "off", LfeMode::Gaussian => "gaussian", LfeMode::Laplacian => "laplacian");
text_enum!(UpMode, "resample_up", UpMode::Bilinear => "bilinear", UpMode::Ca => "ca");
text_enum!(DownMode, "resample_down", DownMode::StridedConv => "strided-conv", DownMode::Ca => "ca");
text_enum!(HeadMode, "head_mode", HeadMode::Original => "original", HeadMode::Recombination => "recombination");

impl fmt::Display for AttentionSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionSpan::Global => f.write_str("global"),
            AttentionSpan::Window(n) => write!(f, "window{n}"),
        }
    }
}

impl FromStr for AttentionSpan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "global" {
            return Ok(AttentionSpan::Global);
        }
        match s.strip_prefix("window").map(str::parse::<usize>) {
            Some(Ok(n)) if n % 2 == 1 => Ok(AttentionSpan::Window(n)),
            _ => Err(Error::Config(format!("attention must be 'global' or 'window<odd n>', got '{s}'"))),
        }
    }
}

/// Number of backbone stages; the neck always reads the last three.
pub const STAGES: usize = 5;

/// Network hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Side of the square input spectrogram.
    pub input_size: usize,
    /// Pyramid depth: LFE is applied to the first `depth` stages.
    pub depth: usize,
    /// Output widths of the five backbone stages.
    pub channels: Vec<usize>,
    pub groups: usize,
    pub head_kernel: usize,
    pub lfe_mode: LfeMode,
    pub resample_up: UpMode,
    pub resample_down: DownMode,
    pub head_mode: HeadMode,
    pub num_classes: usize,
    pub num_anchors: usize,
    /// Resampler offsets are multiplied by this, in input pixels.
    pub offset_scale: f64,
    pub attention: AttentionSpan,
}

impl ModelConfig {
    /// 640 × 640 input, five-level pyramid.
    pub fn paper() -> Self {
        ModelConfig {
            input_size: 640,
            depth: 5,
            channels: vec![32, 64, 128, 256, 256],
            groups: 4,
            head_kernel: 1,
            lfe_mode: LfeMode::Gaussian,
            resample_up: UpMode::Ca,
            resample_down: DownMode::Ca,
            head_mode: HeadMode::Recombination,
            num_classes: 14,
            num_anchors: 3,
            offset_scale: 0.25,
            attention: AttentionSpan::Global,
        }
    }

    /// 160 × 160 input, L = 3, channels scaled down four times.
    pub fn desk() -> Self {
        ModelConfig {
            input_size: 160,
            depth: 3,
            channels: vec![8, 16, 32, 64, 64],
            ..Self::paper()
        }
    }

    /// Everything off: the plain detector.
    pub fn baseline(mut self) -> Self {
        self.lfe_mode = LfeMode::Off;
        self.resample_up = UpMode::Bilinear;
        self.resample_down = DownMode::StridedConv;
        self.head_mode = HeadMode::Original;
        self
    }

    /// Channels of the three neck levels (finest first).
    pub fn neck_channels(&self) -> [usize; 3] {
        [self.channels[STAGES - 3], self.channels[STAGES - 2], self.channels[STAGES - 1]]
    }

    /// Strides of the three output scales (finest first).
    pub fn strides(&self) -> [usize; 3] {
        [1 << (STAGES - 2), 1 << (STAGES - 1), 1 << STAGES]
    }

    pub fn grid_sizes(&self) -> [usize; 3] {
        self.strides().map(|s| self.input_size / s)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.channels.len() != STAGES {
            return cfg(format!("channels needs {STAGES} entries, got {}", self.channels.len()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return cfg("channel widths must be positive".into());
        }
        if !(1..=STAGES).contains(&self.depth) {
            return cfg(format!("depth must be in 1..={STAGES}, got {}", self.depth));
        }
        let align = 1usize << STAGES.max(self.depth);
        if self.input_size == 0 || self.input_size % align != 0 {
            return cfg(format!("input_size {} must be a positive multiple of {align}", self.input_size));
        }
        if self.groups == 0 {
            return cfg("groups must be positive".into());
        }
        for c in self.neck_channels() {
            if c % self.groups != 0 {
                return cfg(format!("groups {} does not divide neck width {c}", self.groups));
            }
            if c < 2 {
                return cfg(format!("neck width {c} is too small"));
            }
        }
        if self.head_kernel % 2 == 0 {
            return cfg(format!("head_kernel must be odd, got {}", self.head_kernel));
        }
        if self.num_classes == 0 || self.num_anchors == 0 {
            return cfg("num_classes and num_anchors must be positive".into());
        }
        if !(self.offset_scale.is_finite() && self.offset_scale >= 0.0) {
            return cfg(format!("offset_scale must be finite and non-negative, got {}", self.offset_scale));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("input_size", self.input_size);
        kv.set("depth", self.depth);
        kv.set("channels", self.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        kv.set("groups", self.groups);
        kv.set("head_kernel", self.head_kernel);
        kv.set("lfe_mode", self.lfe_mode);
        kv.set("resample_up", self.resample_up);
        kv.set("resample_down", self.resample_down);
        kv.set("head_mode", self.head_mode);
        kv.set("num_classes", self.num_classes);
        kv.set("num_anchors", self.num_anchors);
        kv.set("offset_scale", self.offset_scale);
        kv.set("attention", self.attention);
        kv
    }

    /// Overrides fields of `self` from `kv`; unknown keys are ignored.
    pub fn apply_kv(mut self, kv: &KvMap) -> Result<Self> {
        macro_rules! field {
            ($key:literal, $slot:expr) => {
                if let Some(v) = kv.parse_value($key)? {
                    $slot = v;
                }
            };
        }
        field!("input_size", self.input_size);
        field!("depth", self.depth);
        field!("groups", self.groups);
        field!("head_kernel", self.head_kernel);
        field!("lfe_mode", self.lfe_mode);
        field!("resample_up", self.resample_up);
        field!("resample_down", self.resample_down);
        field!("head_mode", self.head_mode);
        field!("num_classes", self.num_classes);
        field!("num_anchors", self.num_anchors);
        field!("offset_scale", self.offset_scale);
        field!("attention", self.attention);
        if let Some(list) = kv.get("channels") {
            self.channels = list
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("channels '{list}': {e}")))?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Parses a `key = value` file on top of the desk defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::desk().apply_kv(&KvMap::parse(text)?)
    }
}
