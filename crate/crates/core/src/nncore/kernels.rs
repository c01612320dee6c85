//! Raw forward/backward kernels on row-major slices. Shapes are validated by
//! the graph before these are called.

use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<F: Real>(x: &[F], g: &ConvGeom) -> Vec<F> {
    let (ho, wo) = g.out_hw();
    let kk = g.k * g.k;
    let mut cols = vec![F::zero(); g.c_in * kk * ho * wo];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * kk + ky * g.k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Real>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let (ho, wo) = g.out_hw();
    let kk = g.k * g.k;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * kk + ky * g.k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + *s;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<F: Real>(x: &[F], weight: &[F], bias: Option<&[F]>, g: &ConvGeom) -> Vec<F> {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let kdim = g.c_in * g.k * g.k;
    let mut out = vec![F::zero(); g.c_out * n];
    if let Some(b) = bias {
        for (o, bv) in b.iter().enumerate() {
            out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *bv);
        }
    }
    let acc = bias.is_some();
    if g.is_pointwise() {
        F::gemm(g.c_out, kdim, n, weight, false, x, false, &mut out, acc);
    } else {
        let cols = im2col(x, g);
        F::gemm(g.c_out, kdim, n, weight, false, &cols, false, &mut out, acc);
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward<F: Real>(
    x: &[F],
    weight: &[F],
    dout: &[F],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Vec<F>) {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let kdim = g.c_in * g.k * g.k;
    let db = (0..g.c_out)
        .map(|o| dout[o * n..(o + 1) * n].iter().copied().sum())
        .collect();
    let pointwise = g.is_pointwise();
    let dw = need_dw.then(|| {
        let mut dw = vec![F::zero(); g.c_out * kdim];
        if pointwise {
            F::gemm(g.c_out, n, kdim, dout, false, x, true, &mut dw, false);
        } else {
            let cols = im2col(x, g);
            F::gemm(g.c_out, n, kdim, dout, false, &cols, true, &mut dw, false);
        }
        dw
    });
    let dx = need_dx.then(|| {
        if pointwise {
            let mut dx = vec![F::zero(); kdim * n];
            F::gemm(kdim, g.c_out, n, weight, true, dout, false, &mut dx, false);
            dx
        } else {
            let mut dcols = vec![F::zero(); kdim * n];
            F::gemm(kdim, g.c_out, n, weight, true, dout, false, &mut dcols, false);
            let mut dx = vec![F::zero(); g.c_in * g.h * g.w];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    (dx, dw, db)
}

/// Normalised `[-1,1]` sampling grid hitting the pixel centres of an
/// `out_h × out_w` image (half-pixel convention). Layout `[out_h, out_w, 2]`
/// with `(x, y)` pairs.
pub fn base_grid<F: Real>(out_h: usize, out_w: usize) -> Vec<F> {
    let two = F::of(2.0);
    let one = F::one();
    let half = F::of(0.5);
    let mut grid = Vec::with_capacity(out_h * out_w * 2);
    for i in 0..out_h {
        let gy = two * (F::of(i as f64) + half) / F::of(out_h as f64) - one;
        for j in 0..out_w {
            let gx = two * (F::of(j as f64) + half) / F::of(out_w as f64) - one;
            grid.push(gx);
            grid.push(gy);
        }
    }
    grid
}

/// Maps a normalised coordinate to a clamped pixel coordinate; the second
/// value is d(pixel)/d(normalised), zero when clamped.
#[inline]
fn unnormalize<F: Real>(g: F, size: usize) -> (F, F) {
    let s = F::of(size as f64);
    let two = F::of(2.0);
    let p = ((g + F::one()) * s - F::one()) / two;
    let hi = s - F::one();
    if p < F::zero() {
        (F::zero(), F::zero())
    } else if p > hi {
        (hi, F::zero())
    } else {
        (p, s / two)
    }
}

#[derive(Clone, Copy)]
struct Taps<F> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: F,
    wy: F,
    dpx: F,
    dpy: F,
}

#[inline]
fn taps<F: Real>(gx: F, gy: F, h: usize, w: usize) -> Taps<F> {
    let (px, dpx) = unnormalize(gx, w);
    let (py, dpy) = unnormalize(gy, h);
    let fx = px.floor();
    let fy = py.floor();
    let x0 = fx.to_usize().unwrap_or(0).min(w - 1);
    let y0 = fy.to_usize().unwrap_or(0).min(h - 1);
    Taps {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        wx: px - fx,
        wy: py - fy,
        dpx,
        dpy,
    }
}

/// Bilinear sampling with border clamping. `x: [C,H,W]`, `grid: [Ho,Wo,2]`.
pub fn grid_sample_forward<F: Real>(x: &[F], c: usize, h: usize, w: usize, grid: &[F]) -> Vec<F> {
    let npos = grid.len() / 2;
    let mut out = vec![F::zero(); c * npos];
    let one = F::one();
    for p in 0..npos {
        let t = taps(grid[2 * p], grid[2 * p + 1], h, w);
        let w00 = (one - t.wx) * (one - t.wy);
        let w01 = t.wx * (one - t.wy);
        let w10 = (one - t.wx) * t.wy;
        let w11 = t.wx * t.wy;
        for ch in 0..c {
            let plane = &x[ch * h * w..];
            out[ch * npos + p] = w00 * plane[t.y0 * w + t.x0]
                + w01 * plane[t.y0 * w + t.x1]
                + w10 * plane[t.y1 * w + t.x0]
                + w11 * plane[t.y1 * w + t.x1];
        }
    }
    out
}

/// Returns `(dx, dgrid)`.
pub fn grid_sample_backward<F: Real>(
    x: &[F],
    c: usize,
    h: usize,
    w: usize,
    grid: &[F],
    dout: &[F],
    need_dgrid: bool,
) -> (Vec<F>, Option<Vec<F>>) {
    let npos = grid.len() / 2;
    let mut dx = vec![F::zero(); c * h * w];
    let mut dgrid = need_dgrid.then(|| vec![F::zero(); grid.len()]);
    let one = F::one();
    for p in 0..npos {
        let t = taps(grid[2 * p], grid[2 * p + 1], h, w);
        let w00 = (one - t.wx) * (one - t.wy);
        let w01 = t.wx * (one - t.wy);
        let w10 = (one - t.wx) * t.wy;
        let w11 = t.wx * t.wy;
        let mut gx = F::zero();
        let mut gy = F::zero();
        for ch in 0..c {
            let go = dout[ch * npos + p];
            let base = ch * h * w;
            let i00 = base + t.y0 * w + t.x0;
            let i01 = base + t.y0 * w + t.x1;
            let i10 = base + t.y1 * w + t.x0;
            let i11 = base + t.y1 * w + t.x1;
            dx[i00] = dx[i00] + w00 * go;
            dx[i01] = dx[i01] + w01 * go;
            dx[i10] = dx[i10] + w10 * go;
            dx[i11] = dx[i11] + w11 * go;
            if dgrid.is_some() {
                let (v00, v01, v10, v11) = (x[i00], x[i01], x[i10], x[i11]);
                gx = gx + go * ((one - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                gy = gy + go * ((one - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
            }
        }
        if let Some(dg) = dgrid.as_mut() {
            dg[2 * p] = gx * t.dpx;
            dg[2 * p + 1] = gy * t.dpy;
        }
    }
    (dx, dgrid)
}

/// Source index of nearest-neighbour resampling (floor convention).
pub fn nearest_src(dst: usize, in_size: usize, out_size: usize) -> usize {
    ((dst * in_size) / out_size).min(in_size - 1)
}

pub fn nearest_forward<F: Real>(x: &[F], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for i in 0..ho {
            let si = nearest_src(i, h, ho);
            for j in 0..wo {
                out.push(x[ch * h * w + si * w + nearest_src(j, w, wo)]);
            }
        }
    }
    out
}

pub fn nearest_backward<F: Real>(dout: &[F], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..ho {
            let si = nearest_src(i, h, ho);
            for j in 0..wo {
                let idx = ch * h * w + si * w + nearest_src(j, w, wo);
                dx[idx] = dx[idx] + dout[ch * ho * wo + i * wo + j];
            }
        }
    }
    dx
}

/// Max pooling with implicit `-inf` padding; returns values and argmax
/// indices into the input.
pub fn max_pool_forward<F: Real>(
    x: &[F],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<F>, Vec<usize>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = F::neg_infinity();
                let mut best_i = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = ch * h * w + iy as usize * w + ix as usize;
                        if best_i == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg, ho, wo)
}

/// Non-overlapping `k × k` average pooling.
pub fn avg_pool_forward<F: Real>(x: &[F], c: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let (ho, wo) = (h / k, w / k);
    let norm = F::of((k * k) as f64);
    let mut out = vec![F::zero(); c * ho * wo];
    for ch in 0..c {
        for iy in 0..ho * k {
            for ix in 0..wo * k {
                let o = ch * ho * wo + (iy / k) * wo + ix / k;
                out[o] = out[o] + x[ch * h * w + iy * w + ix];
            }
        }
    }
    out.iter_mut().for_each(|v| *v = *v / norm);
    out
}

pub fn avg_pool_backward<F: Real>(dout: &[F], c: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let (ho, wo) = (h / k, w / k);
    let norm = F::of((k * k) as f64);
    let mut dx = vec![F::zero(); c * h * w];
    for ch in 0..c {
        for iy in 0..ho * k {
            for ix in 0..wo * k {
                dx[ch * h * w + iy * w + ix] = dout[ch * ho * wo + (iy / k) * wo + ix / k] / norm;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_naive(x: &[f64], wt: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (ho, wo) = g.out_hw();
        let mut out = vec![0.0; g.c_out * ho * wo];
        for o in 0..g.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    s += x[c * g.h * g.w + iy as usize * g.w + ix as usize]
                                        * wt[((o * g.c_in + c) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (3, 1, 0), (5, 2, 2)] {
            let g = ConvGeom { c_in: 3, h: 7, w: 6, c_out: 4, k, stride, pad };
            let x: Vec<f64> = (0..3 * 7 * 6).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 31) % 7) as f64 * 0.25 - 0.7).collect();
            let got = conv2d_forward(&x, &wt, None, &g);
            let want = conv_naive(&x, &wt, &g);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride} p={pad}");
            }
        }
    }

    #[test]
    fn base_grid_hits_pixel_centres() {
        let grid: Vec<f64> = base_grid(3, 4);
        let t = taps(grid[2 * 5], grid[2 * 5 + 1], 3, 4);
        // position (1, 1)
        assert_eq!((t.x0, t.y0), (1, 1));
        assert!(t.wx.abs() < 1e-12 && t.wy.abs() < 1e-12);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let x: Vec<f64> = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 9.0, 8.0];
        let (out, arg, ho, wo) = max_pool_forward(&x, 1, 3, 3, 3, 1, 1);
        assert_eq!((ho, wo), (3, 3));
        assert_eq!(out[0], 5.0);
        assert_eq!(out[4], 9.0);
        assert_eq!(arg[4], 7);
    }
}
