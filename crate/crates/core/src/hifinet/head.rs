use crate::detect::ScaleOutput;
use crate::error::Result;
use crate::nncore::{Graph, Real, ResizeMode, Scale, Tensor, Var};

use super::config::{HeadMode, ModelConfig};
use super::layers::{Conv, ParamBuilder};

#[derive(Clone, Debug)]
enum Heads {
    /// One coupled convolution per scale, `A·(5 + classes)` channels.
    Original(Vec<Conv>),
    /// Separate regression and classification convolutions per scale
    /// over the recombined map.
    Recombination(Vec<(Conv, Conv)>),
}

#[derive(Clone, Debug)]
pub struct Head {
    heads: Heads,
    anchors: usize,
    classes: usize,
}

impl Head {
    pub fn new<F: Real>(pb: &mut ParamBuilder<'_, F>, cfg: &ModelConfig) -> Self {
        let (a, nc, k) = (cfg.num_anchors, cfg.num_classes, cfg.head_kernel);
        let chans = cfg.neck_channels();
        let strides = cfg.strides();
        let heads = match cfg.head_mode {
            HeadMode::Original => Heads::Original(
                chans
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let conv = pb.conv(&format!("head.{i}"), c, a * (5 + nc), k, 1, false);
                        let mut bias = vec![0.0; a * (5 + nc)];
                        for ai in 0..a {
                            bias[ai * 5 + 4] = obj_prior(cfg.input_size, strides[i]);
                        }
                        bias[a * 5..].iter_mut().for_each(|b| *b = cls_prior(nc));
                        set_bias(pb, &conv, &bias);
                        conv
                    })
                    .collect(),
            ),
            HeadMode::Recombination => {
                let total: usize = chans.iter().sum();
                Heads::Recombination(
                    (0..3)
                        .map(|i| {
                            let reg = pb.conv(&format!("head.{i}.reg"), total, a * 5, k, 1, false);
                            let cls = pb.conv(&format!("head.{i}.cls"), total, a * nc, k, 1, false);
                            let mut rb = vec![0.0; a * 5];
                            for ai in 0..a {
                                rb[ai * 5 + 4] = obj_prior(cfg.input_size, strides[i]);
                            }
                            set_bias(pb, &reg, &rb);
                            set_bias(pb, &cls, &vec![cls_prior(nc); a * nc]);
                            (reg, cls)
                        })
                        .collect(),
                )
            }
        };
        Head { heads, anchors: a, classes: nc }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, neck: [Var; 3]) -> Result<Vec<ScaleOutput>> {
        match &self.heads {
            Heads::Original(convs) => {
                let mut out = Vec::with_capacity(3);
                for (conv, x) in convs.iter().zip(neck) {
                    let y = conv.forward(g, x)?;
                    let reg = g.narrow(y, 0, self.anchors * 5)?;
                    let cls = g.narrow(y, self.anchors * 5, self.anchors * self.classes)?;
                    out.push(ScaleOutput { reg, cls });
                }
                Ok(out)
            }
            Heads::Recombination(convs) => {
                let merged = recombine(g, neck)?;
                let mut out = Vec::with_capacity(3);
                for (i, (reg_conv, cls_conv)) in convs.iter().enumerate() {
                    let x = if i == 0 { merged } else { g.avg_pool2d(merged, 1 << i)? };
                    let reg = reg_conv.forward(g, x)?;
                    let cls = cls_conv.forward(g, x)?;
                    out.push(ScaleOutput { reg, cls });
                }
                Ok(out)
            }
        }
    }
}

/// Bilinearly upsamples every neck map to the finest one and stacks them.
pub fn recombine<F: Real>(g: &mut Graph<'_, F>, neck: [Var; 3]) -> Result<Var> {
    let mut parts = vec![neck[0]];
    for (i, &x) in neck.iter().enumerate().skip(1) {
        let mut y = x;
        for _ in 0..i {
            y = g.resize(y, Scale::Up2, ResizeMode::Bilinear)?;
        }
        parts.push(y);
    }
    g.concat(&parts)
}

/// About eight objects per image, spread over the cells of a scale.
fn obj_prior(input: usize, stride: usize) -> f64 {
    let cells = (input as f64 / stride as f64).powi(2);
    (8.0 / cells).min(0.5).ln()
}

fn cls_prior(nc: usize) -> f64 {
    (0.6 / (nc as f64 - 0.99).max(0.01)).ln()
}

fn set_bias<F: Real>(pb: &mut ParamBuilder<'_, F>, conv: &Conv, values: &[f64]) {
    let t = pb.store.get_mut(conv.b);
    *t = Tensor::new(t.shape(), values.iter().map(|&v| F::of(v)).collect()).expect("bias length");
}
