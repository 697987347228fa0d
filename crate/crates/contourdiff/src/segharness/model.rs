//! Segmentation U-Net: a compact encoder-decoder with skip connections,
//! single-channel input and single-channel sigmoid output.

use candle_core::{DType, Device, Result, Tensor};
use candle_nn::{conv2d, group_norm, Conv2d, Conv2dConfig, GroupNorm, Module, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

const GN_GROUPS: usize = 8;
const GN_EPS: f64 = 1e-5;

fn pad1() -> Conv2dConfig {
    Conv2dConfig {
        padding: 1,
        ..Default::default()
    }
}

/// Structural description of the segmentation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegArch {
    /// Channel width of the first stage; stage i has `base_width << i`.
    pub base_width: usize,
    pub stages: usize,
}

impl SegArch {
    pub fn desk_scale() -> SegArch {
        SegArch {
            base_width: 32,
            stages: 4,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.stages).map(|i| self.base_width << i).collect()
    }

    pub fn validate(&self, resolution: usize) -> crate::Result<()> {
        if self.stages == 0 {
            return Err(crate::Error::Config("seg net needs >= 1 stage".into()));
        }
        if self.base_width % GN_GROUPS != 0 {
            return Err(crate::Error::Config(format!(
                "seg base width {} must be a multiple of {GN_GROUPS}",
                self.base_width
            )));
        }
        if resolution % (1 << (self.stages - 1)) != 0 {
            return Err(crate::Error::Config(format!(
                "resolution {resolution} not divisible by {} for {} stages",
                1 << (self.stages - 1),
                self.stages
            )));
        }
        Ok(())
    }
}

/// Two 3x3 convolutions, each followed by group norm and SiLU.
struct DoubleConv {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
}

impl DoubleConv {
    fn new(in_ch: usize, out_ch: usize, vb: VarBuilder) -> Result<DoubleConv> {
        Ok(DoubleConv {
            conv1: conv2d(in_ch, out_ch, 3, pad1(), vb.pp("conv1"))?,
            norm1: group_norm(GN_GROUPS, out_ch, GN_EPS, vb.pp("norm1"))?,
            conv2: conv2d(out_ch, out_ch, 3, pad1(), vb.pp("conv2"))?,
            norm2: group_norm(GN_GROUPS, out_ch, GN_EPS, vb.pp("norm2"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.norm1.forward(&self.conv1.forward(x)?)?.silu()?;
        self.norm2.forward(&self.conv2.forward(&x)?)?.silu()
    }
}

/// Encoder-decoder segmentation network; `forward` returns per-pixel
/// foreground probabilities in (0, 1).
pub struct SegUNet {
    encoder: Vec<DoubleConv>,
    downs: Vec<Conv2d>,
    up_convs: Vec<Conv2d>,
    decoder: Vec<DoubleConv>,
    head: Conv2d,
}

impl SegUNet {
    fn new(arch: &SegArch, vb: VarBuilder) -> Result<SegUNet> {
        let widths = arch.widths();
        let stages = widths.len();
        let mut encoder = Vec::with_capacity(stages);
        let mut downs = Vec::with_capacity(stages - 1);
        let mut in_ch = 1;
        for (i, &w) in widths.iter().enumerate() {
            encoder.push(DoubleConv::new(in_ch, w, vb.pp(format!("enc{i}")))?);
            if i + 1 < stages {
                let down = Conv2dConfig {
                    padding: 1,
                    stride: 2,
                    ..Default::default()
                };
                downs.push(conv2d(w, w, 3, down, vb.pp(format!("down{i}")))?);
            }
            in_ch = w;
        }
        let mut up_convs = Vec::with_capacity(stages - 1);
        let mut decoder = Vec::with_capacity(stages - 1);
        for i in (0..stages - 1).rev() {
            up_convs.push(conv2d(
                widths[i + 1],
                widths[i],
                3,
                pad1(),
                vb.pp(format!("up{i}")),
            )?);
            decoder.push(DoubleConv::new(
                2 * widths[i],
                widths[i],
                vb.pp(format!("dec{i}")),
            )?);
        }
        let head = conv2d(widths[0], 1, 1, Conv2dConfig::default(), vb.pp("head"))?;
        Ok(SegUNet {
            encoder,
            downs,
            up_convs,
            decoder,
            head,
        })
    }

    /// `(B, 1, H, W)` image in `[0, 1]` to `(B, 1, H, W)` probabilities.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for (i, block) in self.encoder.iter().enumerate() {
            h = block.forward(&h)?;
            skips.push(h.clone());
            if i < self.downs.len() {
                h = self.downs[i].forward(&h)?;
            }
        }
        skips.pop(); // deepest features continue directly
        for (up, block) in self.up_convs.iter().zip(&self.decoder) {
            let skip = skips.pop().expect("one skip per decoder stage");
            let (_, _, sh, sw) = skip.dims4()?;
            h = h.upsample_nearest2d(sh, sw)?;
            h = up.forward(&h)?;
            h = Tensor::cat(&[&skip, &h], 1)?;
            h = block.forward(&h)?;
        }
        candle_nn::ops::sigmoid(&self.head.forward(&h)?)
    }
}

pub fn build_seg_unet(arch: &SegArch, device: &Device) -> Result<(SegUNet, VarMap)> {
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
    let model = SegUNet::new(arch, vb)?;
    Ok((model, varmap))
}
