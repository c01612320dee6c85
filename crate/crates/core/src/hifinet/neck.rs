use crate::error::Result;
use crate::nncore::{Graph, Real, ResizeMode, Scale, Var};

use super::config::{DownMode, ModelConfig, UpMode};
use super::layers::{Conv, CspBlock, ParamBuilder};
use super::resampler::CaResampler;

#[derive(Clone, Debug)]
enum Up {
    Bilinear,
    Ca(CaResampler),
}

#[derive(Clone, Debug)]
enum Down {
    Conv(Conv),
    Ca(CaResampler),
}

impl Up {
    fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, guide: Var) -> Result<Var> {
        match self {
            Up::Bilinear => g.resize(x, Scale::Up2, ResizeMode::Bilinear),
            Up::Ca(r) => r.forward(g, x, guide),
        }
    }
}

impl Down {
    fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, guide: Var) -> Result<Var> {
        match self {
            Down::Conv(c) => c.forward(g, x),
            Down::Ca(r) => r.forward(g, x, guide),
        }
    }
}

/// Top-down then bottom-up fusion of the last three backbone maps.
#[derive(Clone, Debug)]
pub struct Neck {
    lat5: Conv,
    up5: Up,
    fuse4: CspBlock,
    lat4: Conv,
    up4: Up,
    fuse3: CspBlock,
    down3: Down,
    fuse4b: CspBlock,
    down4: Down,
    fuse5: CspBlock,
}

impl Neck {
    pub fn new<F: Real>(pb: &mut ParamBuilder<'_, F>, cfg: &ModelConfig) -> Self {
        let [c3, c4, c5] = cfg.neck_channels();
        let up = |pb: &mut ParamBuilder<'_, F>, name: &str, c: usize| match cfg.resample_up {
            UpMode::Bilinear => Up::Bilinear,
            UpMode::Ca => Up::Ca(CaResampler::new(pb, name, c, c, cfg.groups, Scale::Up2, cfg.offset_scale, cfg.attention)),
        };
        let down = |pb: &mut ParamBuilder<'_, F>, name: &str, c: usize| match cfg.resample_down {
            DownMode::StridedConv => Down::Conv(pb.conv(name, c, c, 3, 2, true)),
            DownMode::Ca => {
                Down::Ca(CaResampler::new(pb, name, c, c, cfg.groups, Scale::Down2, cfg.offset_scale, cfg.attention))
            }
        };
        let lat5 = pb.conv("neck.lat5", c5, c4, 1, 1, true);
        let up5 = up(pb, "neck.up5", c4);
        let fuse4 = CspBlock::new(pb, "neck.fuse4", 2 * c4, c4);
        let lat4 = pb.conv("neck.lat4", c4, c3, 1, 1, true);
        let up4 = up(pb, "neck.up4", c3);
        let fuse3 = CspBlock::new(pb, "neck.fuse3", 2 * c3, c3);
        let down3 = down(pb, "neck.down3", c3);
        let fuse4b = CspBlock::new(pb, "neck.fuse4b", 2 * c3, c4);
        let down4 = down(pb, "neck.down4", c4);
        let fuse5 = CspBlock::new(pb, "neck.fuse5", 2 * c4, c5);
        Neck { lat5, up5, fuse4, lat4, up4, fuse3, down3, fuse4b, down4, fuse5 }
    }

    /// `feats` are the backbone maps at strides 8/16/32; returns the fused
    /// maps in the same order.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, feats: [Var; 3]) -> Result<[Var; 3]> {
        let [p3, p4, p5] = feats;
        let l5 = self.lat5.forward(g, p5)?;
        let u5 = self.up5.forward(g, l5, p4)?;
        let cat = g.concat(&[u5, p4])?;
        let f4 = self.fuse4.forward(g, cat)?;
        let l4 = self.lat4.forward(g, f4)?;
        let u4 = self.up4.forward(g, l4, p3)?;
        let cat = g.concat(&[u4, p3])?;
        let out3 = self.fuse3.forward(g, cat)?;
        let d3 = self.down3.forward(g, out3, l4)?;
        let cat = g.concat(&[d3, l4])?;
        let out4 = self.fuse4b.forward(g, cat)?;
        let d4 = self.down4.forward(g, out4, l5)?;
        let cat = g.concat(&[d4, l5])?;
        let out5 = self.fuse5.forward(g, cat)?;
        Ok([out3, out4, out5])
    }
}
