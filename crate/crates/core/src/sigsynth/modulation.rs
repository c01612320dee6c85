use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use super::{mean_power, ModScheme};
use crate::error::{Error, Result};

/// Root-raised-cosine excess bandwidth.
pub const RRC_ROLLOFF: f64 = 0.35;
/// Pulse support in symbols.
pub const RRC_SPAN: usize = 8;
/// FSK tone spacing as a multiple of the symbol rate.
pub const FSK_TONE_SPACING_PER_SYMBOL_RATE: f64 = 1.0;
const AM_MOD_INDEX: f64 = 0.5;

/// Unit-energy constellation of a linearly modulated scheme; `None` for FSK
/// and AM. Symbol index `i` maps to entry `i` (BPSK: 0 → +1, 1 → −1).
pub fn constellation(scheme: ModScheme) -> Option<Vec<Complex64>> {
    let psk = |m: usize, offset: f64| -> Vec<Complex64> {
        (0..m).map(|k| Complex64::from_polar(1.0, offset + 2.0 * PI * k as f64 / m as f64)).collect()
    };
    let qam = |side: usize| -> Vec<Complex64> {
        let levels: Vec<f64> = (0..side).map(|i| 2.0 * i as f64 - (side as f64 - 1.0)).collect();
        let pts: Vec<Complex64> =
            levels.iter().flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i, q))).collect();
        normalize(pts)
    };
    let pam = |m: usize| -> Vec<Complex64> {
        normalize((0..m).map(|i| Complex64::new(2.0 * i as f64 - (m as f64 - 1.0), 0.0)).collect())
    };
    let pts = match scheme {
        ModScheme::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
        ModScheme::Qpsk => psk(4, FRAC_PI_4),
        ModScheme::Psk8 => psk(8, 0.0),
        ModScheme::Psk16 => psk(16, 0.0),
        ModScheme::Qam16 => qam(4),
        ModScheme::Qam64 => qam(8),
        // on-off keying: symbol 1 carries energy 2 so the mean is 1
        ModScheme::Ook => vec![Complex64::new(0.0, 0.0), Complex64::new(2f64.sqrt(), 0.0)],
        ModScheme::Ask4 => pam(4),
        ModScheme::Ask8 => pam(8),
        _ => return None,
    };
    Some(pts)
}

fn normalize(pts: Vec<Complex64>) -> Vec<Complex64> {
    let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
    let s = e.sqrt();
    pts.into_iter().map(|p| p / s).collect()
}

/// Root-raised-cosine impulse response at `t` symbol periods.
pub fn rrc_pulse(t: f64, beta: f64) -> f64 {
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let edge = 1.0 / (4.0 * beta);
    if (t.abs() - edge).abs() < 1e-9 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Pulse-shapes `symbols` at `sps` (possibly fractional) samples per symbol
/// into `n` output samples. Symbol `k` is centred at sample `k·sps`.
pub fn shape_symbols(symbols: &[Complex64], sps: f64, n: usize) -> Vec<Complex64> {
    let half = RRC_SPAN as f64 / 2.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sps;
            let k0 = ((t - half).ceil() as i64).max(0);
            let k1 = ((t + half).floor() as i64).min(symbols.len() as i64 - 1);
            let mut acc = Complex64::new(0.0, 0.0);
            for k in k0..=k1 {
                acc += symbols[k as usize] * rrc_pulse(t - k as f64, RRC_ROLLOFF);
            }
            acc
        })
        .collect()
}

fn scale_to_unit_power(mut x: Vec<Complex64>) -> Vec<Complex64> {
    let p = mean_power(&x);
    if p > 0.0 {
        let s = p.sqrt();
        x.iter_mut().for_each(|v| *v /= s);
    }
    x
}

/// Samples per symbol for a scheme occupying `bw` Hz, `None` for AM.
pub(crate) fn samples_per_symbol(scheme: ModScheme, bw: f64, f_s: f64) -> Option<f64> {
    let rate = if scheme.is_fsk() {
        let m = scheme.order().expect("digital") as f64;
        // occupied band ≈ (M−1)·Δf + 2·R_s
        bw / ((m - 1.0) * FSK_TONE_SPACING_PER_SYMBOL_RATE + 2.0)
    } else if scheme.is_am() {
        return None;
    } else {
        bw / (1.0 + RRC_ROLLOFF)
    };
    Some(f_s / rate)
}

/// Unit-power complex baseband for `dur` seconds of `scheme` occupying `bw`
/// Hz, sampled at `f_s`. Deterministic in `seed`.
pub fn modulate(scheme: ModScheme, bw: f64, dur: f64, f_s: f64, seed: u64) -> Result<Vec<Complex64>> {
    if !(bw > 0.0 && dur > 0.0 && f_s > 0.0) {
        return Err(Error::InvalidSpec(format!("bw, dur and f_s must be positive (bw={bw}, dur={dur}, f_s={f_s})")));
    }
    if bw > 0.3 * f_s + 1e-9 {
        return Err(Error::InvalidSpec(format!("bandwidth {bw} Hz exceeds 0.3·f_s")));
    }
    let n = (dur * f_s).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(sps) = samples_per_symbol(scheme, bw, f_s) {
        if (n as f64) < sps {
            return Err(Error::InvalidSpec(format!(
                "{n} samples is shorter than one {scheme} symbol ({sps:.1} samples)"
            )));
        }
        let m = scheme.order().expect("digital");
        let n_sym = (n as f64 / sps).ceil() as usize + 1;
        let idx: Vec<usize> = (0..n_sym).map(|_| rng.random_range(0..m)).collect();
        if scheme.is_fsk() {
            return Ok(fsk(&idx, m, sps, n, f_s, bw));
        }
        let pts = constellation(scheme).ok_or_else(|| Error::Config(format!("no constellation for {scheme}")))?;
        let syms: Vec<Complex64> = idx.iter().map(|&i| pts[i]).collect();
        return Ok(scale_to_unit_power(shape_symbols(&syms, sps, n)));
    }
    match scheme {
        ModScheme::AmDsb => Ok(am_dsb(n, bw, f_s, &mut rng)),
        ModScheme::AmSsb => Ok(am_ssb(n, bw, f_s, &mut rng)),
        other => Err(Error::Config(format!("unsupported scheme {other}"))),
    }
}

/// Continuous-phase FSK: the phase accumulator runs across symbol edges.
fn fsk(idx: &[usize], m: usize, sps: f64, n: usize, f_s: f64, bw: f64) -> Vec<Complex64> {
    let rate = f_s / sps;
    let spacing = FSK_TONE_SPACING_PER_SYMBOL_RATE * rate;
    debug_assert!(spacing * (m as f64 - 1.0) < bw);
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let sym = idx[((i as f64 / sps) as usize).min(idx.len() - 1)];
            let f = (sym as f64 - (m as f64 - 1.0) / 2.0) * spacing;
            let out = Complex64::from_polar(1.0, phase);
            phase = (phase + 2.0 * PI * f / f_s).rem_euclid(2.0 * PI);
            out
        })
        .collect()
}

/// Zero-mean Gaussian noise band-limited to `[lo, hi]` Hz (two-sided
/// frequencies), via FFT masking. Real-valued when the band is symmetric.
fn band_limited_noise(n: usize, lo: f64, hi: f64, f_s: f64, rng: &mut ChaCha8Rng, real: bool) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = if real { 0.0 } else { rng.sample(StandardNormal) };
            Complex64::new(re, im)
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } * f_s / n as f64;
        if f < lo || f > hi {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= inv);
    buf
}

fn peak_normalized(mut x: Vec<Complex64>) -> Vec<Complex64> {
    let peak = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    x
}

/// Double-sideband AM with carrier: `1 + μ·m(t)` with `m` band-limited to
/// `bw/2` so both sidebands span `bw`.
fn am_dsb(n: usize, bw: f64, f_s: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let msg = peak_normalized(band_limited_noise(n, -bw / 2.0, bw / 2.0, f_s, rng, true));
    let x = msg.iter().map(|m| Complex64::new(1.0 + AM_MOD_INDEX * m.re, 0.0)).collect();
    scale_to_unit_power(x)
}

/// Upper-sideband AM with carrier, shifted down by `bw/2` so the occupied
/// band `[0, bw]` is centred on zero.
fn am_ssb(n: usize, bw: f64, f_s: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    // analytic message: positive frequencies only
    let msg = peak_normalized(band_limited_noise(n, f_s / n as f64, bw, f_s, rng, false));
    let x = msg
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let shift = Complex64::from_polar(1.0, -PI * bw * i as f64 / f_s);
            (Complex64::new(1.0, 0.0) + AM_MOD_INDEX * m) * shift
        })
        .collect();
    scale_to_unit_power(x)
}
