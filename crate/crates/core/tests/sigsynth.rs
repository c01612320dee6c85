use hifi_core::detect::BBox;
use hifi_core::sigsynth::{
    apply_channel, compose_scene, constellation, ground_truth_boxes, max_pairwise_overlap, modulate, render_scene,
    rician_components, shape_symbols, ChannelConfig, FadingMode, IqRecording, ModScheme, SceneSpec, SignalBurst,
};
use hifi_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 200e3;

fn power(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

#[test]
fn scheme_ids_are_distinct_and_dense() {
    assert_eq!(ModScheme::ALL.len(), 14);
    for (i, s) in ModScheme::ALL.iter().enumerate() {
        assert_eq!(s.class_id(), i);
        assert_eq!(ModScheme::from_class_id(i), Some(*s));
        assert_eq!(s.name().parse::<ModScheme>().unwrap(), *s);
    }
    assert!(ModScheme::from_class_id(14).is_none());
    assert!(matches!("GMSK".parse::<ModScheme>(), Err(Error::Config(_))));
}

#[test]
fn bpsk_maps_bits_antipodally() {
    let pts = constellation(ModScheme::Bpsk).unwrap();
    let mapped: Vec<f64> = [0usize, 1, 1, 0].iter().map(|&b| pts[b].re).collect();
    assert_eq!(mapped, vec![1.0, -1.0, -1.0, 1.0]);
}

#[test]
fn qam16_has_unit_mean_energy() {
    // oracle: raw levels ±1, ±3 on both axes
    let raw: Vec<(f64, f64)> = [-3.0, -1.0, 1.0, 3.0]
        .iter()
        .flat_map(|&i| [-3.0, -1.0, 1.0, 3.0].iter().map(move |&q| (i, q)))
        .collect();
    let raw_energy = raw.iter().map(|(i, q)| i * i + q * q).sum::<f64>() / 16.0;
    assert_eq!(raw_energy, 10.0);

    let pts = constellation(ModScheme::Qam16).unwrap();
    assert_eq!(pts.len(), 16);
    let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
    assert!((e - 1.0).abs() < 1e-12);
    let unit = 1.0 / 10f64.sqrt();
    for p in &pts {
        let li = p.re / unit;
        assert!((li - li.round()).abs() < 1e-9 && (li.round() as i64).abs() % 2 == 1);
    }
    for s in ModScheme::ALL {
        if let Some(c) = constellation(s) {
            let e = c.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.len() as f64;
            assert!((e - 1.0).abs() < 1e-12, "{s}");
        }
    }
}

#[test]
fn ook_all_ones_is_a_constant_envelope_at_dc() {
    let on = constellation(ModScheme::Ook).unwrap()[1];
    let sps = 13.7;
    let n = 4000;
    let syms = vec![on; (n as f64 / sps) as usize + 10];
    let x = shape_symbols(&syms, sps, n);
    // away from the ramp-in the shifted pulses sum to a near constant; the
    // residual ripple comes from truncating the pulse to a finite span
    let interior: Vec<f64> = x[200..3800].iter().map(|v| v.norm()).collect();
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    let ripple = interior.iter().map(|a| (a - mean).abs()).fold(0.0, f64::max) / mean;
    assert!(ripple < 0.03, "ripple {ripple}");
    assert!(x[200..3800].iter().all(|v| v.im.abs() < 1e-12));
}

#[test]
fn every_modulator_has_unit_power() {
    for (i, s) in ModScheme::ALL.iter().enumerate() {
        let x = modulate(*s, 0.1 * FS, 0.1, FS, 7 + i as u64).unwrap();
        assert_eq!(x.len(), 20_000);
        let p = power(&x);
        assert!((0.98..=1.02).contains(&p), "{s}: {p}");
    }
}

#[test]
fn modulator_rejects_bad_specs() {
    assert!(matches!(modulate(ModScheme::Qpsk, 0.5 * FS, 0.1, FS, 0), Err(Error::InvalidSpec(_))));
    assert!(matches!(modulate(ModScheme::Qpsk, 0.0, 0.1, FS, 0), Err(Error::InvalidSpec(_))));
    // 8FSK at 10 kHz: 180 samples per symbol
    assert!(matches!(modulate(ModScheme::Fsk8, 0.05 * FS, 100.0 / FS, FS, 0), Err(Error::InvalidSpec(_))));
    assert!(modulate(ModScheme::AmDsb, 0.05 * FS, 100.0 / FS, FS, 0).is_ok());
}

#[test]
fn modulated_energy_stays_in_band() {
    for s in ModScheme::ALL {
        let bw = 0.1 * FS;
        let x = modulate(s, bw, 0.2, FS, 11).unwrap();
        let n = x.len();
        let mut spec = x.clone();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut spec);
        let mut inside = 0.0;
        let mut total = 0.0;
        for (k, v) in spec.iter().enumerate() {
            let f = if k < n / 2 { k as f64 } else { k as f64 - n as f64 } * FS / n as f64;
            total += v.norm_sqr();
            if f.abs() <= 0.6 * bw {
                inside += v.norm_sqr();
            }
        }
        assert!(inside / total > 0.95, "{s}: in-band fraction {}", inside / total);
    }
}

#[test]
fn fsk_phase_is_continuous() {
    for s in [ModScheme::Fsk2, ModScheme::Fsk4, ModScheme::Fsk8] {
        let bw = 0.3 * FS;
        let x = modulate(s, bw, 0.05, FS, 3).unwrap();
        let max_step = std::f64::consts::PI * bw / FS;
        for w in x.windows(2) {
            let d = (w[1] * w[0].conj()).arg().abs();
            assert!(d <= std::f64::consts::PI);
            assert!(d <= max_step + 1e-9, "{s}: phase step {d}");
        }
    }
}

#[test]
fn rician_power_split_matches_k_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut los, mut diff) = (0.0, 0.0);
    for _ in 0..100_000 {
        let (l, d) = rician_components(4.0, &mut rng);
        los += l.norm_sqr();
        diff += d.norm_sqr();
    }
    let ratio = los / diff;
    assert!((ratio / 4.0 - 1.0).abs() < 0.03, "K ratio {ratio}");
    assert!(((los + diff) / 1e5 - 1.0).abs() < 0.03);

    let x = vec![Complex64::new(1.0, 0.0); 8];
    for seed in 0..50 {
        let cfg = ChannelConfig { k_factor: 1e6, ..Default::default() };
        let y = apply_channel(&x, &cfg, seed).unwrap();
        assert!((y[0].norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rayleigh_limit_has_unit_mean_power() {
    // Monte-Carlo over independent block gains
    let cfg = ChannelConfig { k_factor: 0.0, ..Default::default() };
    let x = [Complex64::new(1.0, 0.0)];
    let mean = (0..100_000u64).map(|s| apply_channel(&x, &cfg, s).unwrap()[0].norm_sqr()).sum::<f64>() / 1e5;
    assert!((mean - 1.0).abs() < 0.03, "{mean}");
}

#[test]
fn time_varying_fading_changes_within_a_burst() {
    let cfg = ChannelConfig { fading_mode: FadingMode::TimeVarying { coherence_samples: 50.0 }, ..Default::default() };
    let x = vec![Complex64::new(1.0, 0.0); 2000];
    let y = apply_channel(&x, &cfg, 5).unwrap();
    assert!((y[0] - y[1999]).norm() > 1e-3);
    let block = apply_channel(&x, &ChannelConfig::default(), 5).unwrap();
    assert_eq!(block[0], block[1999]);
    assert!(apply_channel(&[], &cfg, 0).is_err());
}

fn desk_spec(seed: u64) -> SceneSpec {
    SceneSpec::desk(seed)
}

#[test]
fn forced_signal_count_is_respected() {
    let mut spec = desk_spec(3);
    spec.min_signals = 3;
    spec.max_signals = 3;
    let rec = compose_scene(&spec, &ChannelConfig::default()).unwrap();
    assert_eq!(rec.bursts.len(), 3);
    assert_eq!(rec.num_signals(), 3);
    assert_eq!(rec.samples.len(), spec.n_samples);
}

#[test]
fn zero_db_scene_has_matched_noise_power() {
    let spec = SceneSpec::paper(17);
    let cfg = ChannelConfig { snr_db: 0.0, ..Default::default() };
    let parts = render_scene(&spec, &cfg).unwrap();
    let (ps, pn) = (power(&parts.clean), power(&parts.noise));
    assert!((pn / ps - 1.0).abs() < 0.05, "noise {pn} vs signal {ps}");
}

#[test]
fn measured_snr_tracks_request() {
    for (i, snr) in [-10.0, -2.5, 0.0, 7.5, 10.0].iter().enumerate() {
        let spec = SceneSpec::paper(100 + i as u64);
        let cfg = ChannelConfig { snr_db: *snr, ..Default::default() };
        let parts = render_scene(&spec, &cfg).unwrap();
        let measured = 10.0 * (power(&parts.clean) / power(&parts.noise)).log10();
        assert!((measured - snr).abs() < 0.3, "{snr} dB requested, {measured} measured");
        let rec = compose_scene(&spec, &cfg).unwrap();
        let sum: Vec<Complex64> = parts.clean.iter().zip(&parts.noise).map(|(a, b)| a + b).collect();
        assert_eq!(rec.samples, sum);
    }
}

#[test]
fn identical_boxes_are_rejected() {
    let spec = desk_spec(0);
    let b = SignalBurst {
        scheme: ModScheme::Qpsk,
        f_c: 0.0,
        t_start: 0.0,
        t_dur: spec.duration() / 2.0,
        bw: 0.1 * FS,
        amplitude: 1.0,
        seed: 1,
    };
    assert!(!spec.admits(&b, std::slice::from_ref(&b)));
    assert_eq!(max_pairwise_overlap(&[b.clone(), b.clone()], spec.duration(), FS), 1.0);
    let mut moved = b.clone();
    moved.f_c = 0.08 * FS;
    assert!(spec.admits(&moved, std::slice::from_ref(&b)));
}

#[test]
fn placement_budget_exhaustion_is_reported() {
    let mut spec = desk_spec(0);
    spec.min_signals = 60;
    spec.max_signals = 60;
    spec.max_overlap = 0.0;
    spec.duration_frac = (1.0, 1.0);
    match compose_scene(&spec, &ChannelConfig::default()) {
        Err(Error::Generation(msg)) => assert!(msg.contains("1000"), "{msg}"),
        other => panic!("expected a generation error, got {other:?}"),
    }
}

#[test]
fn scenes_are_bitwise_deterministic() {
    let spec = desk_spec(42);
    let cfg = ChannelConfig::default();
    assert_eq!(compose_scene(&spec, &cfg).unwrap(), compose_scene(&spec, &cfg).unwrap());
    let other = compose_scene(&desk_spec(43), &cfg).unwrap();
    assert_ne!(other.samples, compose_scene(&spec, &cfg).unwrap().samples);
}

#[test]
fn overlap_bound_holds_across_scenes() {
    for seed in 0..200 {
        let spec = desk_spec(seed);
        let rec = compose_scene(&spec, &ChannelConfig::default()).unwrap();
        assert!((3..=5).contains(&rec.bursts.len()));
        assert!(max_pairwise_overlap(&rec.bursts, spec.duration(), FS) <= 0.4 + 1e-9);
        for b in &rec.bursts {
            let t = spec.duration();
            assert!(b.t_start >= 0.0 && b.t_start + b.t_dur <= t + 1e-12);
            assert!(b.f_c.abs() + b.bw / 2.0 <= FS / 2.0 + 1e-9);
            assert!((0.05 - 1e-9..=1.0).contains(&(b.t_dur / t)));
            assert!((0.05 - 1e-9..=0.3 + 1e-9).contains(&(b.bw / FS)));
        }
    }
}

fn single_burst(b: SignalBurst, n: usize) -> IqRecording {
    IqRecording {
        samples: vec![Complex64::new(0.0, 0.0); n],
        f_s: FS,
        bursts: vec![b],
        channel: ChannelConfig::default(),
        seed: 0,
    }
}

#[test]
fn ground_truth_examples() {
    let n = 12_800;
    let t = n as f64 / FS;
    let full = single_burst(
        SignalBurst { scheme: ModScheme::Bpsk, f_c: 0.0, t_start: 0.0, t_dur: t, bw: FS, amplitude: 1.0, seed: 0 },
        n,
    );
    let (_, b) = ground_truth_boxes(&full, 160, 160)[0];
    assert_eq!(b, BBox::new(0.5, 0.5, 1.0, 1.0));

    let rec = single_burst(
        SignalBurst {
            scheme: ModScheme::AmSsb,
            f_c: 0.0,
            t_start: 0.25 * t,
            t_dur: 0.5 * t,
            bw: 0.1 * FS,
            amplitude: 1.0,
            seed: 0,
        },
        n,
    );
    let (class, b) = ground_truth_boxes(&rec, 160, 160)[0];
    assert_eq!(class, ModScheme::AmSsb.class_id());
    assert!((b.cx - 0.5).abs() < 1e-12 && (b.cy - 0.5).abs() < 1e-12);
    // frequency extent on x, time extent on y
    assert!((b.w - 0.1).abs() < 1e-12 && (b.h - 0.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boxes_survive_rasterisation(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nt, nf) = (160usize, 160usize);
        let t = 12_800.0 / FS;
        let bw = rng.random_range(0.05..0.3) * FS;
        let b = SignalBurst {
            scheme: ModScheme::Qam16,
            f_c: rng.random_range(-(FS - bw) / 2.0..(FS - bw) / 2.0),
            t_start: rng.random_range(0.0..0.5) * t,
            t_dur: rng.random_range(0.05..0.5) * t,
            bw,
            amplitude: 1.0,
            seed,
        };
        let (_, bx) = ground_truth_boxes(&single_burst(b, 12_800), nt, nf)[0];
        // rasterise into a mask, then measure the mask's extent
        let (r0, r1, c0, c1) = bx.pixel_span(nt, nf);
        let mut mask = vec![false; nt * nf];
        for r in r0..=r1 {
            for c in c0..=c1 {
                mask[r * nf + c] = true;
            }
        }
        let rows: Vec<usize> = (0..nt).filter(|r| (0..nf).any(|c| mask[r * nf + c])).collect();
        let cols: Vec<usize> = (0..nf).filter(|c| (0..nt).any(|r| mask[r * nf + c])).collect();
        let rec = BBox::from_corners(
            cols[0] as f64 / nf as f64,
            rows[0] as f64 / nt as f64,
            (cols[cols.len() - 1] + 1) as f64 / nf as f64,
            (rows[rows.len() - 1] + 1) as f64 / nt as f64,
        );
        let (a, b2) = (bx.corners(), rec.corners());
        prop_assert!((a.0 - b2.0).abs() <= 1.0 / nf as f64);
        prop_assert!((a.2 - b2.2).abs() <= 1.0 / nf as f64);
        prop_assert!((a.1 - b2.1).abs() <= 1.0 / nt as f64);
        prop_assert!((a.3 - b2.3).abs() <= 1.0 / nt as f64);
    }

    #[test]
    fn modulator_power_is_calibrated(class in 0usize..14, seed in 0u64..1000, bwf in 0.05f64..0.3) {
        let s = ModScheme::from_class_id(class).unwrap();
        let x = modulate(s, bwf * FS, 0.06, FS, seed).unwrap();
        prop_assert!(x.len() >= 10_000);
        let p = power(&x);
        prop_assert!((0.98..=1.02).contains(&p));
    }
}
