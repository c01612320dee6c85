//! Multi-signal RF scene synthesis with ground truth.
//!
//! A scene is the sum of `K` independently modulated bursts, each with its
//! own Rician gain and carrier offset, plus complex white Gaussian noise
//! calibrated to a target SNR over the whole recording. Carrier mixing uses
//! `exp(+j·2π·f_c·t)`, so a positive offset lands right of DC in the
//! (FFT-shifted) spectrogram.

mod channel;
pub mod io;
mod modulation;
mod scene;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::detect::BBox;
use crate::error::Error;

pub use channel::{apply_channel, rician_components, ChannelConfig, FadingMode};
pub use modulation::{
    constellation, modulate, rrc_pulse, shape_symbols, FSK_TONE_SPACING_PER_SYMBOL_RATE, RRC_ROLLOFF, RRC_SPAN,
};
pub use scene::{
    compose_scene, ground_truth_boxes, max_pairwise_overlap, render_scene, SceneParts, SceneSpec, PLACEMENT_BUDGET,
};

/// The fourteen modulation classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModScheme {
    Bpsk,
    Qpsk,
    Psk8,
    Psk16,
    Qam16,
    Qam64,
    Fsk2,
    Fsk4,
    Fsk8,
    Ook,
    Ask4,
    Ask8,
    AmDsb,
    AmSsb,
}

impl ModScheme {
    pub const ALL: [ModScheme; 14] = [
        ModScheme::Bpsk,
        ModScheme::Qpsk,
        ModScheme::Psk8,
        ModScheme::Psk16,
        ModScheme::Qam16,
        ModScheme::Qam64,
        ModScheme::Fsk2,
        ModScheme::Fsk4,
        ModScheme::Fsk8,
        ModScheme::Ook,
        ModScheme::Ask4,
        ModScheme::Ask8,
        ModScheme::AmDsb,
        ModScheme::AmSsb,
    ];

    pub const COUNT: usize = 14;

    pub fn class_id(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).expect("listed")
    }

    pub fn from_class_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModScheme::Bpsk => "BPSK",
            ModScheme::Qpsk => "QPSK",
            ModScheme::Psk8 => "8PSK",
            ModScheme::Psk16 => "16PSK",
            ModScheme::Qam16 => "16QAM",
            ModScheme::Qam64 => "64QAM",
            ModScheme::Fsk2 => "2FSK",
            ModScheme::Fsk4 => "4FSK",
            ModScheme::Fsk8 => "8FSK",
            ModScheme::Ook => "OOK",
            ModScheme::Ask4 => "4ASK",
            ModScheme::Ask8 => "8ASK",
            ModScheme::AmDsb => "AM-DSB",
            ModScheme::AmSsb => "AM-SSB",
        }
    }

    /// Alphabet size of the digital schemes; `None` for analog AM.
    pub fn order(self) -> Option<usize> {
        match self {
            ModScheme::Bpsk | ModScheme::Fsk2 | ModScheme::Ook => Some(2),
            ModScheme::Qpsk | ModScheme::Fsk4 | ModScheme::Ask4 => Some(4),
            ModScheme::Psk8 | ModScheme::Fsk8 | ModScheme::Ask8 => Some(8),
            ModScheme::Psk16 | ModScheme::Qam16 => Some(16),
            ModScheme::Qam64 => Some(64),
            ModScheme::AmDsb | ModScheme::AmSsb => None,
        }
    }

    pub fn is_fsk(self) -> bool {
        matches!(self, ModScheme::Fsk2 | ModScheme::Fsk4 | ModScheme::Fsk8)
    }

    pub fn is_am(self) -> bool {
        matches!(self, ModScheme::AmDsb | ModScheme::AmSsb)
    }
}

impl fmt::Display for ModScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Config(format!("unsupported modulation scheme {s:?}")))
    }
}

/// One modulated transmission placed in the time–frequency plane.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBurst {
    pub scheme: ModScheme,
    /// Carrier offset from DC in Hz.
    pub f_c: f64,
    pub t_start: f64,
    pub t_dur: f64,
    /// Occupied bandwidth in Hz.
    pub bw: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl SignalBurst {
    /// Footprint in normalised (time / T, frequency / f_s + 1/2) units, with
    /// frequency on the x axis.
    pub fn footprint(&self, duration: f64, f_s: f64) -> BBox {
        let x1 = (self.f_c - 0.5 * self.bw) / f_s + 0.5;
        let x2 = (self.f_c + 0.5 * self.bw) / f_s + 0.5;
        let y1 = self.t_start / duration;
        let y2 = (self.t_start + self.t_dur) / duration;
        BBox::from_corners(x1, y1, x2, y2)
    }
}

/// Complex baseband recording of a composed scene.
#[derive(Clone, Debug, PartialEq)]
pub struct IqRecording {
    pub samples: Vec<Complex64>,
    pub f_s: f64,
    pub bursts: Vec<SignalBurst>,
    pub channel: ChannelConfig,
    pub seed: u64,
}

impl IqRecording {
    pub fn num_signals(&self) -> usize {
        self.bursts.len()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.f_s
    }
}

pub(crate) fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}
