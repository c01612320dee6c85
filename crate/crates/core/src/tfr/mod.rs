//! Time-frequency representations.
//!
//! Rows of a spectrogram are STFT frames (time), columns are FFT-shifted
//! frequency bins, so column 0 is `-f_s/2` and column `n_fft/2` is DC.

mod pyramid;

use std::io::{Read, Write};

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub use pyramid::{collapse_laplacian, gaussian_pyramid, laplacian_pyramid, GaussianPyramid, LaplacianPyramid};

pub const DEFAULT_FLOOR_DB: f64 = -80.0;
/// Log offset, relative to the peak power.
pub const LOG_EPS_REL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn samples(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl std::fmt::Display for WindowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        })
    }
}

impl std::str::FromStr for WindowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hann" => Ok(WindowKind::Hann),
            "rectangular" | "rect" => Ok(WindowKind::Rectangular),
            _ => Err(Error::Config(format!("unknown window '{s}' (hann, rectangular)"))),
        }
    }
}

/// Frame/FFT geometry of a spectrogram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl StftConfig {
    /// 640 × 640 output from 204800 samples.
    pub fn paper() -> Self {
        StftConfig { n_fft: 640, hop: 320, window: WindowKind::Hann }
    }

    /// 160 × 160 output from 12800 samples.
    pub fn desk() -> Self {
        StftConfig { n_fft: 160, hop: 80, window: WindowKind::Hann }
    }

    pub fn num_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }
}

/// Short-time Fourier transform; returns `frames × n_fft`, DC centred.
///
/// Frame `m` starts at sample `m·hop`; samples past the end are zero.
/// The FFT size only needs to be even (so DC has a centre column); 640
/// is not a power of two.
pub fn stft(samples: &[Complex64], cfg: &StftConfig) -> Result<Array2<Complex64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("stft of an empty recording".into()));
    }
    if cfg.n_fft == 0 || cfg.n_fft % 2 != 0 {
        return Err(Error::Config(format!("n_fft must be even and positive, got {}", cfg.n_fft)));
    }
    if cfg.hop == 0 || cfg.hop > cfg.n_fft {
        return Err(Error::Config(format!("hop must be in 1..={}, got {}", cfg.n_fft, cfg.hop)));
    }
    let n = cfg.n_fft;
    let frames = cfg.num_frames(samples.len());
    let win = cfg.window.samples(n);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = Array2::zeros((frames, n));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for m in 0..frames {
        let start = m * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = samples.get(start + i).map_or(Complex64::new(0.0, 0.0), |s| s * win[i]);
        }
        fft.process(&mut buf);
        let mut row = out.row_mut(m);
        for k in 0..n {
            row[(k + half) % n] = buf[k];
        }
    }
    Ok(out)
}

/// Peak-normalised log power in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    /// `n_t × n_f`, 1 at the peak and 0 at or below the floor.
    pub values: Array2<f32>,
    pub floor_db: f64,
    pub hop: usize,
    pub n_fft: usize,
    pub window: WindowKind,
    pub f_s: f64,
}

impl Spectrogram {
    pub fn n_t(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_f(&self) -> usize {
        self.values.ncols()
    }

    /// Values relative to the peak, in dB (peak = 0).
    pub fn db(&self) -> Array2<f64> {
        let floor = self.floor_db;
        self.values.mapv(|v| floor * (1.0 - v as f64))
    }

    pub fn from_recording(samples: &[Complex64], f_s: f64, cfg: &StftConfig, floor_db: f64) -> Result<Self> {
        let x = stft(samples, cfg)?;
        Ok(Spectrogram {
            values: log_normalize(&x, floor_db),
            floor_db,
            hop: cfg.hop,
            n_fft: cfg.n_fft,
            window: cfg.window,
            f_s,
        })
    }

    /// 8-byte header (`n_t`, `n_f` as LE u32) then row-major LE f32.
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_matrix(w, &self.values)
    }

    /// Binary grayscale PGM.
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        write_pgm(w, &self.values)
    }
}

/// `10·log10(|X|² + ε)`, shifted so the peak is 0 dB, clipped at
/// `floor_db` and mapped affinely onto `[0, 1]`.
pub fn log_normalize(x: &Array2<Complex64>, floor_db: f64) -> Array2<f32> {
    assert!(floor_db < 0.0, "floor_db must be negative");
    let power = x.mapv(|v| v.norm_sqr());
    let peak = power.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 || !peak.is_finite() {
        return Array2::zeros(x.dim());
    }
    let eps = LOG_EPS_REL * peak;
    let peak_db = 10.0 * (peak + eps).log10();
    power.mapv(|p| {
        let db = (10.0 * (p + eps).log10() - peak_db).max(floor_db);
        ((db - floor_db) / -floor_db) as f32
    })
}

pub fn write_matrix<W: Write>(mut w: W, m: &Array2<f32>) -> Result<()> {
    let (r, c) = m.dim();
    let mut bytes = Vec::with_capacity(8 + 4 * r * c);
    bytes.extend_from_slice(&(r as u32).to_le_bytes());
    bytes.extend_from_slice(&(c as u32).to_le_bytes());
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Array2<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Format("spectrogram header truncated".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 4 * rows * cols {
        return Err(Error::Format(format!(
            "spectrogram payload is {} bytes, header says {rows}x{cols}",
            bytes.len() - 8
        )));
    }
    let data = bytes[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

/// Values are clamped to `[0, 1]` and scaled to 0..=255.
pub fn write_pgm<W: Write>(mut w: W, m: &Array2<f32>) -> Result<()> {
    let (r, c) = m.dim();
    let mut bytes = format!("P5\n{c} {r}\n255\n").into_bytes();
    bytes.extend(m.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    w.write_all(&bytes)?;
    Ok(())
}
