use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{apply_channel, mean_power, modulate, ChannelConfig, IqRecording, ModScheme, SignalBurst};
use crate::detect::BBox;
use crate::error::{Error, Result};

/// Rejection-sampling attempts allowed per scene before giving up.
pub const PLACEMENT_BUDGET: usize = 1000;

/// Scene generation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    /// Inclusive range the burst count is drawn from.
    pub min_signals: usize,
    pub max_signals: usize,
    /// Largest admissible intersection between two bursts, relative to the
    /// smaller burst's time–frequency area.
    pub max_overlap: f64,
    pub n_samples: usize,
    pub f_s: f64,
    pub rng_seed: u64,
    /// Modulations to draw from, uniformly.
    pub schemes: Vec<ModScheme>,
    /// Log-uniform range of burst duration as a fraction of the recording.
    pub duration_frac: (f64, f64),
    /// Log-uniform range of burst bandwidth as a fraction of `f_s`.
    pub bandwidth_frac: (f64, f64),
}

impl SceneSpec {
    /// 204 800 samples at 200 kHz with 3–5 coexisting bursts.
    pub fn paper(rng_seed: u64) -> Self {
        Self {
            min_signals: 3,
            max_signals: 5,
            max_overlap: 0.4,
            n_samples: 204_800,
            f_s: 200e3,
            rng_seed,
            schemes: ModScheme::ALL.to_vec(),
            duration_frac: (0.05, 1.0),
            bandwidth_frac: (0.05, 0.3),
        }
    }

    /// Same statistics on a 12 800-sample recording (a 160 × 160 spectrogram).
    pub fn desk(rng_seed: u64) -> Self {
        Self { n_samples: 12_800, ..Self::paper(rng_seed) }
    }

    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.f_s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.min_signals == 0 || self.min_signals > self.max_signals {
            return bad(format!("signal count range [{}, {}] is empty", self.min_signals, self.max_signals));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return bad(format!("max_overlap {} outside [0, 1]", self.max_overlap));
        }
        if self.n_samples == 0 || !(self.f_s > 0.0) {
            return bad("n_samples and f_s must be positive".into());
        }
        if self.schemes.is_empty() {
            return bad("no modulation schemes to draw from".into());
        }
        let (d0, d1) = self.duration_frac;
        if !(d0 > 0.0 && d0 <= d1 && d1 <= 1.0) {
            return bad(format!("duration fraction range ({d0}, {d1}) must lie in (0, 1]"));
        }
        let (b0, b1) = self.bandwidth_frac;
        if !(b0 > 0.0 && b0 <= b1 && b1 <= 0.3) {
            return bad(format!("bandwidth fraction range ({b0}, {b1}) must lie in (0, 0.3]"));
        }
        Ok(())
    }

    /// Whether `candidate` may join `placed` under the overlap bound.
    pub fn admits(&self, candidate: &SignalBurst, placed: &[SignalBurst]) -> bool {
        let t = self.duration();
        let a = candidate.footprint(t, self.f_s);
        placed.iter().all(|p| a.overlap_of_smaller(&p.footprint(t, self.f_s)) <= self.max_overlap)
    }

    fn draw_burst(&self, rng: &mut ChaCha8Rng) -> SignalBurst {
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..=hi.ln()).exp()
            }
        };
        let scheme = self.schemes[rng.random_range(0..self.schemes.len())];
        let n = self.n_samples;
        let len = ((log_uniform(rng, self.duration_frac) * n as f64).round() as usize).clamp(1, n);
        let start = rng.random_range(0..=n - len);
        let bw = log_uniform(rng, self.bandwidth_frac) * self.f_s;
        let reach = 0.5 * self.f_s - 0.5 * bw;
        let f_c = if reach > 0.0 { rng.random_range(-reach..=reach) } else { 0.0 };
        SignalBurst {
            scheme,
            f_c,
            t_start: start as f64 / self.f_s,
            t_dur: len as f64 / self.f_s,
            bw,
            amplitude: 1.0,
            seed: rng.next_u64(),
        }
    }
}

/// Noise-free composite, noise realisation and burst list of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParts {
    pub clean: Vec<Complex64>,
    pub noise: Vec<Complex64>,
    pub bursts: Vec<SignalBurst>,
}

/// Draws the bursts of a scene and renders signal and noise separately.
pub fn render_scene(spec: &SceneSpec, channel: &ChannelConfig) -> Result<SceneParts> {
    spec.validate()?;
    channel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let k = rng.random_range(spec.min_signals..=spec.max_signals);
    let mut bursts: Vec<SignalBurst> = Vec::with_capacity(k);
    let mut attempts = 0;
    while bursts.len() < k {
        if attempts == PLACEMENT_BUDGET {
            return Err(Error::Generation(format!(
                "placed {} of {k} bursts within the budget of {PLACEMENT_BUDGET} attempts",
                bursts.len()
            )));
        }
        attempts += 1;
        let cand = spec.draw_burst(&mut rng);
        if spec.admits(&cand, &bursts) {
            bursts.push(cand);
        }
    }

    let mut clean = vec![Complex64::new(0.0, 0.0); spec.n_samples];
    for b in &bursts {
        let start = (b.t_start * spec.f_s).round() as usize;
        let base = modulate(b.scheme, b.bw, b.t_dur, spec.f_s, b.seed)?;
        let faded = apply_channel(&base, channel, b.seed.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15)?;
        for (i, v) in faded.iter().enumerate() {
            let n = start + i;
            if n >= clean.len() {
                break;
            }
            let mix = Complex64::from_polar(b.amplitude, 2.0 * PI * b.f_c * n as f64 / spec.f_s);
            clean[n] += v * mix;
        }
    }

    let p_signal = mean_power(&clean);
    let sigma = (p_signal / 10f64.powf(channel.snr_db / 10.0) / 2.0).sqrt();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let noise = (0..spec.n_samples)
        .map(|_| {
            let re: f64 = noise_rng.sample(StandardNormal);
            let im: f64 = noise_rng.sample(StandardNormal);
            Complex64::new(re, im) * sigma
        })
        .collect();
    Ok(SceneParts { clean, noise, bursts })
}

/// Draws, renders and sums a scene: `K` faded, carrier-shifted bursts plus
/// white Gaussian noise scaled so total signal power over noise power
/// matches `channel.snr_db`. Deterministic in `spec.rng_seed`.
pub fn compose_scene(spec: &SceneSpec, channel: &ChannelConfig) -> Result<IqRecording> {
    let parts = render_scene(spec, channel)?;
    let samples = parts.clean.iter().zip(&parts.noise).map(|(s, w)| s + w).collect();
    Ok(IqRecording { samples, f_s: spec.f_s, bursts: parts.bursts, channel: *channel, seed: spec.rng_seed })
}

/// Ground-truth `(class_id, box)` pairs in normalised image coordinates for
/// an `n_t × n_f` spectrogram (x = frequency with DC centred, y = time).
/// Boxes are clipped to the image and grown to at least one pixel.
pub fn ground_truth_boxes(rec: &IqRecording, n_t: usize, n_f: usize) -> Vec<(usize, BBox)> {
    let t = rec.duration();
    let (min_w, min_h) = (1.0 / n_f.max(1) as f64, 1.0 / n_t.max(1) as f64);
    rec.bursts
        .iter()
        .map(|b| {
            let mut bx = b.footprint(t, rec.f_s).clipped();
            bx.w = bx.w.max(min_w);
            bx.h = bx.h.max(min_h);
            (b.scheme.class_id(), bx)
        })
        .collect()
}

/// Largest pairwise intersection-over-smaller-area among `bursts`.
pub fn max_pairwise_overlap(bursts: &[SignalBurst], duration: f64, f_s: f64) -> f64 {
    let boxes: Vec<BBox> = bursts.iter().map(|b| b.footprint(duration, f_s)).collect();
    let mut worst = 0.0f64;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            worst = worst.max(boxes[i].overlap_of_smaller(&boxes[j]));
        }
    }
    worst
}
