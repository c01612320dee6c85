use hifi_core::nncore::gradcheck::{grad_check, grad_check_inputs, GradCheckReport};
use hifi_core::nncore::{functional, CustomOp, Graph, ResizeMode, Scale, Tensor, Var};
use hifi_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum with fixed pseudo-random weights so the check sees a
/// non-uniform output gradient.
fn reduce(g: &mut Graph<'_, f64>, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    let w = Tensor::from_fn(g.shape(y), |i| ((i * 37 + 11) % 17) as f64 / 17.0 - 0.4);
    debug_assert_eq!(w.len(), n);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn assert_pass(name: &str, seed: u64, r: &GradCheckReport) {
    assert!(r.passed(), "{name} seed {seed}: {r}");
}

#[test]
fn conv2d_identity_and_window_sum() {
    let mut g = Graph::<f64>::new();
    let x = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
    let xv = g.constant(x.clone());
    let mut k = Tensor::zeros(&[2, 2, 1, 1]);
    k.data_mut()[0] = 1.0;
    k.data_mut()[3] = 1.0;
    let kv = g.constant(k);
    let y = g.conv2d(xv, kv, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);

    let c = g.constant(Tensor::full(&[1, 4, 4], 2.5));
    let ones = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(c, ones, None, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 2]);
    assert!(g.value(y).data().iter().all(|v| (*v - 22.5).abs() < 1e-12));
}

#[test]
fn conv2d_output_size_and_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[3, 9, 7]));
    let w = g.constant(Tensor::zeros(&[5, 3, 3, 3]));
    let y = g.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[5, 5, 4]);
    let bad = g.constant(Tensor::zeros(&[5, 2, 3, 3]));
    assert!(matches!(g.conv2d(x, bad, None, 1, 1), Err(hifi_core::Error::Shape(_))));
    let even = g.constant(Tensor::zeros(&[5, 3, 2, 2]));
    assert!(g.conv2d(x, even, None, 1, 0).is_err());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = 1 + (seed % 2) as usize;
        let k = if seed % 3 == 0 { 1 } else { 3 };
        let x = rand_tensor(&mut rng, &[2, 4, 4]);
        let w = rand_tensor(&mut rng, &[3, 2, k, k]);
        let b = rand_tensor(&mut rng, &[3]);
        let r = grad_check_inputs(
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, k / 2)?;
                reduce(g, y)
            },
            &[x, w, b],
            TOL,
        );
        assert_pass("conv2d", seed, &r);
    }
}

#[test]
fn nearest_doubling_replicates_pixels() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.resize(x, Scale::Up2, ResizeMode::Nearest).unwrap();
    assert_eq!(
        g.value(y).data(),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
}

#[test]
fn bilinear_round_trip_of_constant_is_constant() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[2, 3, 5], 0.75));
    let up = g.resize(x, Scale::Up2, ResizeMode::Bilinear).unwrap();
    let down = g.resize(up, Scale::Down2, ResizeMode::Bilinear).unwrap();
    let pooled = g.avg_pool2d(up, 2).unwrap();
    assert_eq!(g.value(down), g.value(x));
    assert_eq!(g.value(pooled), g.value(x));
    assert!(Scale::from_factor(3.0).is_err());
    let odd = g.constant(Tensor::zeros(&[1, 3, 4]));
    assert!(g.resize(odd, Scale::Down2, ResizeMode::Nearest).is_err());
}

#[test]
fn bilinear_halving_is_two_by_two_average() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_fn(&[1, 4, 4], |i| (i * i) as f64));
    let y = g.resize(x, Scale::Down2, ResizeMode::Bilinear).unwrap();
    let p = g.avg_pool2d(x, 2).unwrap();
    assert!(g.value(y).max_abs_diff(g.value(p)) < 1e-12);
}

#[test]
fn resize_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = rand_tensor(&mut rng, &[2, 4, 6]);
        for scale in [Scale::Up2, Scale::Down2] {
            for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
                let r = grad_check(
                    |g, v| {
                        let y = g.resize(v, scale, mode)?;
                        reduce(g, y)
                    },
                    &x,
                    TOL,
                );
                assert_pass("resize", seed, &r);
            }
        }
    }
}

#[test]
fn grid_sample_at_pixel_centres_is_identity() {
    let mut g = Graph::<f64>::new();
    let x = Tensor::from_fn(&[3, 4, 5], |i| (i as f64).sin());
    let xv = g.constant(x.clone());
    let grid = hifi_core::nncore::kernels::base_grid::<f64>(4, 5);
    let c = g.constant(Tensor::new(&[4, 5, 2], grid).unwrap());
    let y = g.grid_sample(xv, c).unwrap();
    assert!(g.value(y).max_abs_diff(&x) < 1e-12);

    // every coordinate on the centre of pixel (row 2, col 1)
    let (gx, gy) = (2.0 * 1.5 / 5.0 - 1.0, 2.0 * 2.5 / 4.0 - 1.0);
    let c = g.constant(Tensor::from_fn(&[3, 3, 2], |i| if i % 2 == 0 { gx } else { gy }));
    let y = g.grid_sample(xv, c).unwrap();
    for ch in 0..3 {
        let want = x.data()[ch * 20 + 2 * 5 + 1];
        for v in &g.value(y).data()[ch * 9..(ch + 1) * 9] {
            assert!((v - want).abs() < 1e-12);
        }
    }
}

/// Random coordinates kept away from pixel-grid kinks and the clamped border.
fn smooth_coords(rng: &mut ChaCha8Rng, ho: usize, wo: usize, h: usize, w: usize) -> Tensor<f64> {
    let pick = |rng: &mut ChaCha8Rng, size: usize| loop {
        let p: f64 = rng.random_range(0.05..(size as f64 - 1.05));
        let frac = p - p.floor();
        if frac > 0.02 && frac < 0.98 {
            return 2.0 * (p + 0.5) / size as f64 - 1.0;
        }
    };
    let mut data = Vec::new();
    for _ in 0..ho * wo {
        data.push(pick(rng, w));
        data.push(pick(rng, h));
    }
    Tensor::new(&[ho, wo, 2], data).unwrap()
}

#[test]
fn grid_sample_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = rand_tensor(&mut rng, &[2, 5, 6]);
        let c = smooth_coords(&mut rng, 3, 4, 5, 6);
        let r = grad_check_inputs(
            |g, v| {
                let y = g.grid_sample(v[0], v[1])?;
                reduce(g, y)
            },
            &[x, c],
            TOL,
        );
        assert_pass("grid_sample", seed, &r);
    }
}

#[test]
fn attention_single_key_and_zero_values() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(Tensor::from_fn(&[3, 4], |i| i as f64));
    let k = g.constant(Tensor::from_fn(&[1, 4], |i| -(i as f64)));
    let v = g.constant(Tensor::new(&[1, 2], vec![0.25, -7.0]).unwrap());
    let y = functional::scaled_dot_attention(&mut g, q, k, v, None).unwrap();
    assert_eq!(g.value(y).data(), &[0.25, -7.0, 0.25, -7.0, 0.25, -7.0]);

    let k = g.constant(Tensor::from_fn(&[5, 4], |i| (i as f64).cos()));
    let v = g.constant(Tensor::zeros(&[5, 3]));
    let y = functional::scaled_dot_attention(&mut g, q, k, v, None).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn attention_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let q = rand_tensor(&mut rng, &[5, 8]);
        let k = rand_tensor(&mut rng, &[5, 8]);
        let v = rand_tensor(&mut rng, &[5, 8]);
        let r = grad_check_inputs(
            |g, x| {
                let y = functional::scaled_dot_attention(g, x[0], x[1], x[2], None)?;
                reduce(g, y)
            },
            &[q, k, v],
            TOL,
        );
        assert_pass("attention", seed, &r);
    }
}

#[test]
fn softmax_rows_form_a_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_fn(&[6, 9], |_| rng.random_range(-30.0..30.0)));
    let y = g.softmax(x).unwrap();
    for row in g.value(y).data().chunks(9) {
        assert!(row.iter().all(|p| *p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

type UnaryCase = (&'static str, fn(&mut Graph<'_, f64>, Var) -> Result<Var>);

#[test]
fn elementwise_and_structural_gradients_match() {
    let cases: Vec<UnaryCase> = vec![
        ("silu", |g, x| Ok(g.silu(x))),
        ("sigmoid", |g, x| Ok(g.sigmoid(x))),
        ("exp", |g, x| Ok(g.exp(x))),
        ("atan", |g, x| Ok(g.atan(x))),
        ("square", |g, x| Ok(g.square(x))),
        ("affine", |g, x| Ok(g.affine(x, -1.5, 0.3))),
        ("softmax", |g, x| g.softmax(x)),
        ("max_pool", |g, x| g.max_pool2d(x, 3, 1, 1)),
        ("max_pool_s2", |g, x| g.max_pool2d(x, 2, 2, 0)),
        ("avg_pool", |g, x| g.avg_pool2d(x, 2)),
        ("concat", |g, x| {
            let s = g.square(x);
            g.concat(&[x, s])
        }),
        ("narrow", |g, x| g.narrow(x, 1, 2)),
        ("gather", |g, x| g.gather(x, vec![0, 5, 5, 17, 30])),
        ("transpose", |g, x| {
            let r = g.reshape(x, &[3, 16])?;
            g.transpose(r)
        }),
        ("mean", |g, x| Ok(g.mean(x))),
        ("bce", |g, x| {
            let n = g.value(x).len();
            g.bce_with_logits(x, (0..n).map(|i| (i % 3) as f64 / 2.0).collect())
        }),
        ("mul_div", |g, x| {
            let s = g.sigmoid(x);
            let d = g.affine(s, 1.0, 0.5);
            let m = g.mul(x, s)?;
            g.div(m, d)
        }),
        ("min_max_sub", |g, x| {
            let s = g.scale(x, 0.37);
            let s = g.affine(s, 1.0, 0.1);
            let lo = g.minimum(x, s)?;
            let hi = g.maximum(x, s)?;
            g.sub(hi, lo)
        }),
        ("clamp_min", |g, x| Ok(g.clamp_min(x, 0.05))),
    ];
    for (name, f) in cases {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            // keep entries off the kinks of max/min/clamp and max-pool ties
            let x = Tensor::from_fn(&[3, 4, 4], |_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            });
            let r = grad_check(
                |g, v| {
                    let y = f(g, v)?;
                    reduce(g, y)
                },
                &x,
                TOL,
            );
            assert_pass(name, seed, &r);
        }
    }
}

#[test]
fn grad_check_of_quadratic_is_exact() {
    let x = Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
    let r = grad_check(
        |g, v| {
            let s = g.square(v);
            Ok(g.sum(s))
        },
        &x,
        1e-9,
    );
    assert!(r.passed(), "{r}");
    let mut g = Graph::<f64>::new();
    let v = g.input(x.clone());
    let s = g.square(v);
    let out = g.sum(s);
    g.backward(out);
    let want: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.grad(v).unwrap(), &want[..]);
}

struct WrongBackward;

impl CustomOp<f64> for WrongBackward {
    fn name(&self) -> &str {
        "cube_with_bad_backward"
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
        Tensor::new(inputs[0].shape(), inputs[0].data().iter().map(|v| v * v * v).collect())
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _out: &Tensor<f64>, g: &[f64]) -> Vec<Vec<f64>> {
        // should be 3x²
        vec![inputs[0].data().iter().zip(g).map(|(x, g)| 2.0 * x * x * g).collect()]
    }
}

#[test]
fn grad_check_flags_a_wrong_backward() {
    let x = Tensor::new(&[3], vec![0.5, -1.0, 1.5]).unwrap();
    let r = grad_check(
        |g, v| {
            let y = g.custom(Box::new(WrongBackward), &[v])?;
            Ok(g.sum(y))
        },
        &x,
        TOL,
    );
    assert!(!r.passed());
    assert!(r.failure.is_none());
}

#[test]
fn grad_check_names_non_finite_node() {
    let x = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
    let r = grad_check(
        |g, v| {
            let z = g.constant(Tensor::zeros(&[2]));
            let y = g.div(v, z)?;
            Ok(g.sum(y))
        },
        &x,
        TOL,
    );
    assert!(!r.passed());
    assert!(r.failure.as_deref().unwrap().contains("div"), "{r}");
}

#[test]
fn backward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[2, 6, 6]);
    let w = rand_tensor(&mut rng, &[4, 2, 3, 3]);
    let run = || {
        let mut g = Graph::<f32>::new();
        let xv = g.input(x.cast());
        let wv = g.input(w.cast());
        let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
        let y = g.silu(y);
        let y = g.resize(y, Scale::Up2, ResizeMode::Bilinear).unwrap();
        let out = g.mean(y);
        g.backward(out);
        (g.grad_tensor(xv), g.grad_tensor(wv))
    };
    assert_eq!(run(), run());
}
