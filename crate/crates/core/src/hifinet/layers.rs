use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::nncore::{Graph, Init, ParamId, ParamStore, Real, Var};

/// Registers named parameters in a store with a seeded generator.
pub struct ParamBuilder<'a, F: Real> {
    pub store: &'a mut ParamStore<F>,
    rng: ChaCha8Rng,
}

impl<'a, F: Real> ParamBuilder<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, seed: u64) -> Self {
        ParamBuilder { store, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        self.store.init(name, shape, init, &mut self.rng)
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, act: bool) -> Conv {
        let w = self.param(&format!("{name}.w"), &[c_out, c_in, k, k], Init::KaimingUniform { fan_in: c_in * k * k });
        let b = self.param(&format!("{name}.b"), &[c_out], Init::Zeros);
        Conv { w, b, stride, pad: k / 2, act }
    }
}

/// Convolution with bias and an optional SiLU.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub act: bool,
}

impl Conv {
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.conv2d(x, w, Some(b), self.stride, self.pad)?;
        Ok(if self.act { g.silu(y) } else { y })
    }
}

/// Cross-stage partial block with one residual bottleneck.
#[derive(Clone, Debug)]
pub struct CspBlock {
    split_a: Conv,
    split_b: Conv,
    bottleneck: [Conv; 2],
    fuse: Conv,
}

impl CspBlock {
    pub fn new<F: Real>(pb: &mut ParamBuilder<'_, F>, name: &str, c_in: usize, c_out: usize) -> Self {
        let h = (c_out / 2).max(1);
        CspBlock {
            split_a: pb.conv(&format!("{name}.a"), c_in, h, 1, 1, true),
            split_b: pb.conv(&format!("{name}.b"), c_in, h, 1, 1, true),
            bottleneck: [
                pb.conv(&format!("{name}.m1"), h, h, 1, 1, true),
                pb.conv(&format!("{name}.m2"), h, h, 3, 1, true),
            ],
            fuse: pb.conv(&format!("{name}.fuse"), 2 * h, c_out, 1, 1, true),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let a = self.split_a.forward(g, x)?;
        let m = self.bottleneck[0].forward(g, a)?;
        let m = self.bottleneck[1].forward(g, m)?;
        let a = g.add(a, m)?;
        let b = self.split_b.forward(g, x)?;
        let cat = g.concat(&[a, b])?;
        self.fuse.forward(g, cat)
    }
}

/// Spatial pyramid pooling with three chained 5×5 max pools.
#[derive(Clone, Debug)]
pub struct Sppf {
    reduce: Conv,
    fuse: Conv,
}

impl Sppf {
    pub fn new<F: Real>(pb: &mut ParamBuilder<'_, F>, name: &str, c: usize) -> Self {
        let h = (c / 2).max(1);
        Sppf {
            reduce: pb.conv(&format!("{name}.reduce"), c, h, 1, 1, true),
            fuse: pb.conv(&format!("{name}.fuse"), 4 * h, c, 1, 1, true),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let x = self.reduce.forward(g, x)?;
        let p1 = g.max_pool2d(x, 5, 1, 2)?;
        let p2 = g.max_pool2d(p1, 5, 1, 2)?;
        let p3 = g.max_pool2d(p2, 5, 1, 2)?;
        let cat = g.concat(&[x, p1, p2, p3])?;
        self.fuse.forward(g, cat)
    }
}

/// Downsampling stage with an optional residual pyramid injection:
/// `silu(conv_s2(x + conv1x1(level)))`.
#[derive(Clone, Debug)]
pub struct LfeBlock {
    pub inner: Option<Conv>,
    pub outer: Conv,
}

impl LfeBlock {
    pub fn new<F: Real>(pb: &mut ParamBuilder<'_, F>, name: &str, c_prev: usize, c_out: usize, enhance: bool) -> Self {
        LfeBlock {
            inner: enhance.then(|| pb.conv(&format!("{name}.inner"), 1, c_prev, 1, 1, false)),
            outer: pb.conv(&format!("{name}.outer"), c_prev, c_out, 3, 2, true),
        }
    }

    /// `level` is a `[1,H,W]` pyramid level matching `x`'s spatial size.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, level: Option<Var>) -> Result<Var> {
        let x = match (&self.inner, level) {
            (Some(inner), Some(level)) => {
                let (xs, ls) = (g.shape(x).to_vec(), g.shape(level).to_vec());
                if xs.len() != 3 || ls.len() != 3 || xs[1..] != ls[1..] {
                    return Err(shape_err!("pyramid level {ls:?} does not match feature map {xs:?}"));
                }
                let lifted = inner.forward(g, level)?;
                g.add(x, lifted)?
            }
            (Some(_), None) => return Err(shape_err!("enhanced stage called without a pyramid level")),
            (None, _) => x,
        };
        self.outer.forward(g, x)
    }
}
