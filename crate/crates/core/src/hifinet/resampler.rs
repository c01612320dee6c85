use crate::error::{shape_err, Result};
use crate::nncore::functional::{positions_as_rows, scaled_dot_attention};
use crate::nncore::kernels::base_grid;
use crate::nncore::{Graph, Init, ParamId, Real, Scale, Tensor, Var};

use super::config::AttentionSpan;
use super::layers::{Conv, ParamBuilder};

const MASKED: f64 = -1e9;

/// Content-adaptive resampler: attention between the guide map and the
/// input predicts per-group offsets added to the bilinear sampling grid.
#[derive(Clone, Debug)]
pub struct CaResampler {
    pub align: Conv,
    /// `[C_guide, 2·groups]`, zero at initialisation.
    pub offsets: ParamId,
    pub groups: usize,
    pub scale: Scale,
    pub offset_scale: f64,
    pub attention: AttentionSpan,
}

impl CaResampler {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        pb: &mut ParamBuilder<'_, F>,
        name: &str,
        c_in: usize,
        c_guide: usize,
        groups: usize,
        scale: Scale,
        offset_scale: f64,
        attention: AttentionSpan,
    ) -> Self {
        CaResampler {
            align: pb.conv(&format!("{name}.align"), c_in, c_guide, 1, 1, false),
            offsets: pb.param(&format!("{name}.wv"), &[c_guide, 2 * groups], Init::Zeros),
            groups,
            scale,
            offset_scale,
            attention,
        }
    }

    /// Resamples `x: [C,H,W]` to the spatial size of `guide`.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, guide: Var) -> Result<Var> {
        let (c, h, w) = g.value(x).chw()?;
        let (cg, ho, wo) = g.value(guide).chw()?;
        if ho != self.scale.apply(h) || wo != self.scale.apply(w) {
            return Err(shape_err!("guide {ho}x{wo} is not the {:?} size of {h}x{w}", self.scale));
        }
        if c % self.groups != 0 {
            return Err(crate::Error::Config(format!("{} groups do not divide {c} channels", self.groups)));
        }
        let aligned = self.align.forward(g, x)?;
        let q = positions_as_rows(g, guide)?;
        let k = positions_as_rows(g, aligned)?;
        let wv = g.param(self.offsets);
        if g.shape(wv) != [cg, 2 * self.groups] {
            return Err(shape_err!("offset projection {:?} does not match guide width {cg}", g.shape(wv)));
        }
        let v = g.matmul(k, wv)?;
        let mask = match self.attention {
            AttentionSpan::Global => None,
            AttentionSpan::Window(n) => Some(g.constant(window_mask(h, w, ho, wo, n))),
        };
        let s = scaled_dot_attention(g, q, k, v, mask)?;

        // pixel offsets to normalised units, x then y
        let (fx, fy) = (self.offset_scale * 2.0 / w as f64, self.offset_scale * 2.0 / h as f64);
        let unit = g.constant(Tensor::from_fn(&[ho, wo, 2], |i| F::of(if i % 2 == 0 { fx } else { fy })));
        let grid = g.constant(Tensor::new(&[ho, wo, 2], base_grid::<F>(ho, wo))?);
        let n = ho * wo;
        let cpg = c / self.groups;
        let mut parts = Vec::with_capacity(self.groups);
        for gi in 0..self.groups {
            let idx = (0..n).flat_map(|p| [p * 2 * self.groups + 2 * gi, p * 2 * self.groups + 2 * gi + 1]).collect();
            let pair = g.gather(s, idx)?;
            let pair = g.reshape(pair, &[ho, wo, 2])?;
            let pair = g.mul(pair, unit)?;
            let coords = g.add(grid, pair)?;
            let xs = if self.groups == 1 { x } else { g.narrow(x, gi * cpg, cpg)? };
            parts.push(g.grid_sample(xs, coords)?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat(&parts)
        }
    }
}

/// Additive mask letting each output position attend to an `n × n` window
/// of input positions around its source location.
fn window_mask<F: Real>(h: usize, w: usize, ho: usize, wo: usize, n: usize) -> Tensor<F> {
    let r = (n / 2) as isize;
    let centre = |o: usize, size_in: usize, size_out: usize| {
        (((o as f64 + 0.5) * size_in as f64 / size_out as f64) - 0.5).round() as isize
    };
    let mut data = vec![F::of(MASKED); ho * wo * h * w];
    for oy in 0..ho {
        let cy = centre(oy, h, ho);
        for ox in 0..wo {
            let cx = centre(ox, w, wo);
            let row = (oy * wo + ox) * h * w;
            for iy in (cy - r).max(0)..=(cy + r).min(h as isize - 1) {
                for ix in (cx - r).max(0)..=(cx + r).min(w as isize - 1) {
                    data[row + iy as usize * w + ix as usize] = F::zero();
                }
            }
        }
    }
    Tensor::new(&[ho * wo, h * w], data).expect("sized above")
}
