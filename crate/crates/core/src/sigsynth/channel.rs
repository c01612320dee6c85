use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// K-factors at or above this are treated as a pure line-of-sight path.
const PURE_LOS_K: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FadingMode {
    /// One complex gain per burst.
    BlockConstant,
    /// First-order Gauss–Markov diffuse component with the given coherence
    /// length in samples.
    TimeVarying { coherence_samples: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub k_factor: f64,
    pub snr_db: f64,
    pub fading_mode: FadingMode,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { k_factor: 4.0, snr_db: 10.0, fading_mode: FadingMode::BlockConstant }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_factor >= 0.0) {
            return Err(Error::InvalidSpec(format!("Rician K-factor must be ≥ 0, got {}", self.k_factor)));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidSpec("SNR must be finite".into()));
        }
        if let FadingMode::TimeVarying { coherence_samples } = self.fading_mode {
            if !(coherence_samples > 0.0) {
                return Err(Error::InvalidSpec("coherence length must be positive".into()));
            }
        }
        Ok(())
    }

    fn is_pure_los(&self) -> bool {
        self.k_factor >= PURE_LOS_K
    }
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    // CN(0, 1)
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One Rician draw split into its line-of-sight and diffuse parts, with
/// `E|los|² / E|diffuse|² = k` and `E|los + diffuse|² = 1`.
pub fn rician_components(k: f64, rng: &mut ChaCha8Rng) -> (Complex64, Complex64) {
    let theta = rng.random_range(0.0..2.0 * PI);
    if k >= PURE_LOS_K {
        return (Complex64::from_polar(1.0, theta), Complex64::new(0.0, 0.0));
    }
    let los = Complex64::from_polar((k / (k + 1.0)).sqrt(), theta);
    let diffuse = complex_normal(rng) * (1.0 / (k + 1.0)).sqrt();
    (los, diffuse)
}

/// Multiplies `x` by a Rician fading gain.
pub fn apply_channel(x: &[Complex64], cfg: &ChannelConfig, seed: u64) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::InvalidInput("cannot fade an empty signal".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (los, diffuse) = rician_components(cfg.k_factor, &mut rng);
    match cfg.fading_mode {
        FadingMode::BlockConstant => {
            let h = los + diffuse;
            Ok(x.iter().map(|v| v * h).collect())
        }
        FadingMode::TimeVarying { coherence_samples } => {
            if cfg.is_pure_los() {
                return Ok(x.iter().map(|v| v * los).collect());
            }
            let rho = (-1.0 / coherence_samples).exp();
            let innov = (1.0 - rho * rho).sqrt();
            let sigma = (1.0 / (cfg.k_factor + 1.0)).sqrt();
            let mut d = diffuse;
            Ok(x
                .iter()
                .map(|v| {
                    let out = v * (los + d);
                    d = d * rho + complex_normal(&mut rng) * (sigma * innov);
                    out
                })
                .collect())
        }
    }
}
