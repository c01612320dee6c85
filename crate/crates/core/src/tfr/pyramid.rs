use ndarray::Array2;

use crate::error::{Error, Result};

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Clone, Debug)]
pub struct GaussianPyramid {
    /// `levels[0]` is the input; `levels.len() == depth + 1`.
    pub levels: Vec<Array2<f64>>,
}

impl GaussianPyramid {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct LaplacianPyramid {
    /// Band-pass levels, with the coarsest Gaussian level last.
    pub levels: Vec<Array2<f64>>,
}

fn check(x: &Array2<f64>, depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(Error::Shape("pyramid depth must be at least 1".into()));
    }
    let d = 1usize << depth;
    let (h, w) = x.dim();
    if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not divisible by 2^{depth}")));
    }
    Ok(())
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable 5-tap blur with reflect-101 borders, gain `gain` per axis.
fn blur(x: &Array2<f64>, gain: f64) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            tmp[[r, c]] = (0..5).map(|t| BINOMIAL[t] * x[[r, reflect(c as isize + t as isize - 2, w)]]).sum::<f64>() * gain;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            out[[r, c]] = (0..5).map(|t| BINOMIAL[t] * tmp[[reflect(r as isize + t as isize - 2, h), c]]).sum::<f64>() * gain;
        }
    }
    out
}

fn reduce(x: &Array2<f64>) -> Array2<f64> {
    let b = blur(x, 1.0);
    let (h, w) = x.dim();
    Array2::from_shape_fn((h.div_ceil(2), w.div_ceil(2)), |(r, c)| b[[2 * r, 2 * c]])
}

/// Zero insertion followed by a blur with 4× the kernel mass.
pub(crate) fn expand(x: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let mut up = Array2::zeros((h, w));
    for ((r, c), v) in x.indexed_iter() {
        if 2 * r < h && 2 * c < w {
            up[[2 * r, 2 * c]] = *v;
        }
    }
    blur(&up, 2.0)
}

pub fn gaussian_pyramid(x: &Array2<f64>, depth: usize) -> Result<GaussianPyramid> {
    check(x, depth)?;
    let mut levels = vec![x.clone()];
    for _ in 0..depth {
        let next = reduce(levels.last().unwrap());
        levels.push(next);
    }
    Ok(GaussianPyramid { levels })
}

pub fn laplacian_pyramid(x: &Array2<f64>, depth: usize) -> Result<LaplacianPyramid> {
    let g = gaussian_pyramid(x, depth)?;
    let mut levels = Vec::with_capacity(depth + 1);
    for l in 0..depth {
        let (h, w) = g.levels[l].dim();
        levels.push(&g.levels[l] - &expand(&g.levels[l + 1], h, w));
    }
    levels.push(g.levels[depth].clone());
    Ok(LaplacianPyramid { levels })
}

/// Inverse of [`laplacian_pyramid`].
pub fn collapse_laplacian(p: &LaplacianPyramid) -> Array2<f64> {
    let mut acc = p.levels.last().unwrap().clone();
    for band in p.levels.iter().rev().skip(1) {
        let (h, w) = band.dim();
        acc = band + &expand(&acc, h, w);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_101() {
        let idx: Vec<usize> = (-2..7).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![2, 1, 0, 1, 2, 3, 4, 3, 2]);
    }
}
