//! The detector network: a low-frequency enhanced backbone, an FPN/PAN neck
//! with optional content-adaptive resampling, and either coupled per-scale
//! heads or a recombination head over all scales.
//!
//! Every ablation variant is a [`ModelConfig`]; nothing else changes.

mod config;
mod head;
mod layers;
mod neck;
mod resampler;

use ndarray::Array2;

use crate::error::{shape_err, Result};
use crate::nncore::{Graph, ParamStore, Real, Tensor, Var};
use crate::tfr::{gaussian_pyramid, laplacian_pyramid};

pub use config::{AttentionSpan, DownMode, HeadMode, LfeMode, ModelConfig, UpMode, STAGES};
pub use crate::detect::ScaleOutput;
pub use head::{recombine, Head};
pub use layers::{Conv, CspBlock, LfeBlock, ParamBuilder, Sppf};
pub use neck::Neck;
pub use resampler::CaResampler;

/// Network input: the spectrogram and the pyramid levels fed to the
/// enhanced stages (`pyramid[l]` has the size of the stage-`l` input).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<F> {
    /// `[1, H, W]`.
    pub image: Tensor<F>,
    /// `[1, H/2^l, W/2^l]` for `l < depth`; empty when LFE is off.
    pub pyramid: Vec<Tensor<F>>,
}

impl ModelInput<f64> {
    pub fn from_image(values: &Array2<f64>, cfg: &ModelConfig) -> Result<Self> {
        let (h, w) = values.dim();
        if h != cfg.input_size || w != cfg.input_size {
            return Err(shape_err!("input is {h}x{w}, model expects {0}x{0}", cfg.input_size));
        }
        let to_tensor = |m: &Array2<f64>| Tensor::new(&[1, m.nrows(), m.ncols()], m.iter().copied().collect());
        let levels = match cfg.lfe_mode {
            LfeMode::Off => Vec::new(),
            LfeMode::Gaussian => gaussian_pyramid(values, cfg.depth)?.levels,
            LfeMode::Laplacian => laplacian_pyramid(values, cfg.depth)?.levels,
        };
        Ok(ModelInput {
            image: to_tensor(values)?,
            pyramid: levels.iter().take(cfg.depth).map(to_tensor).collect::<Result<_>>()?,
        })
    }

    pub fn from_spectrogram(values: &Array2<f32>, cfg: &ModelConfig) -> Result<Self> {
        Self::from_image(&values.mapv(f64::from), cfg)
    }
}

impl<F: Real> ModelInput<F> {
    pub fn cast<G: Real>(&self) -> ModelInput<G> {
        ModelInput { image: self.image.cast(), pyramid: self.pyramid.iter().map(Tensor::cast).collect() }
    }
}

/// Five downsampling stages; the first `depth` take a pyramid level.
#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<(LfeBlock, CspBlock)>,
    sppf: Sppf,
}

impl Backbone {
    pub fn new<F: Real>(pb: &mut ParamBuilder<'_, F>, cfg: &ModelConfig) -> Self {
        let mut c_prev = 1;
        let stages = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let enhance = cfg.lfe_mode != LfeMode::Off && i < cfg.depth;
                let down = LfeBlock::new(pb, &format!("backbone.{i}.down"), c_prev, c, enhance);
                let block = CspBlock::new(pb, &format!("backbone.{i}.csp"), c, c);
                c_prev = c;
                (down, block)
            })
            .collect();
        let sppf = Sppf::new(pb, "backbone.sppf", c_prev);
        Backbone { stages, sppf }
    }

    /// Returns the stride-8/16/32 maps.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, image: Var, pyramid: &[Var]) -> Result<[Var; 3]> {
        let mut x = image;
        let mut outs = Vec::with_capacity(STAGES);
        for (i, (down, block)) in self.stages.iter().enumerate() {
            let level = if down.inner.is_some() {
                Some(*pyramid.get(i).ok_or_else(|| shape_err!("missing pyramid level {i}"))?)
            } else {
                None
            };
            x = down.forward(g, x, level)?;
            x = block.forward(g, x)?;
            if i == STAGES - 1 {
                x = self.sppf.forward(g, x)?;
            }
            outs.push(x);
        }
        Ok([outs[STAGES - 3], outs[STAGES - 2], outs[STAGES - 1]])
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct NetOutput {
    pub neck: [Var; 3],
    pub scales: Vec<ScaleOutput>,
}

#[derive(Clone, Debug)]
pub struct HifiNet {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub neck: Neck,
    pub head: Head,
}

impl HifiNet {
    /// Registers all parameters in `store`, initialised from `seed`.
    pub fn new<F: Real>(cfg: ModelConfig, store: &mut ParamStore<F>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut pb = ParamBuilder::new(store, seed);
        let backbone = Backbone::new(&mut pb, &cfg);
        let neck = Neck::new(&mut pb, &cfg);
        let head = Head::new(&mut pb, &cfg);
        Ok(HifiNet { cfg, backbone, neck, head })
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, input: &ModelInput<F>) -> Result<NetOutput> {
        let n = self.cfg.input_size;
        if input.image.shape() != [1, n, n] {
            return Err(shape_err!("input {:?}, model expects [1, {n}, {n}]", input.image.shape()));
        }
        let image = g.constant(input.image.clone());
        let pyramid: Vec<Var> = input.pyramid.iter().map(|t| g.constant(t.clone())).collect();
        let feats = self.backbone.forward(g, image, &pyramid)?;
        let neck = self.neck.forward(g, feats)?;
        let scales = self.head.forward(g, neck)?;
        Ok(NetOutput { neck, scales })
    }
}
