//! Conditional U-Net noise predictor.
//!
//! Six encoder stages of two residual blocks each, widths
//! `(128, 128, 256, 256, 512, 512)` scaled by a width factor, spatial
//! self-attention at stage 5, and a symmetric skip-connected decoder.
//! Input is three channels (noisy image, contour, adjacent slice), output
//! is the single-channel noise estimate.

use candle_core::{DType, Device, Result, Tensor, D};
use candle_nn::{conv2d, group_norm, linear, Conv2d, Conv2dConfig, GroupNorm, Linear, Module, VarBuilder};
use serde::{Deserialize, Serialize};

/// Structural description of the denoiser; stored in checkpoints so a
/// model can be rebuilt exactly before loading weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_widths: Vec<usize>,
    pub width_factor: f64,
    pub blocks_per_stage: usize,
    /// 1-based stage index carrying self-attention.
    pub attention_stage: usize,
    pub resolution: usize,
}

impl ArchDescriptor {
    pub fn denoiser(resolution: usize, width_factor: f64) -> ArchDescriptor {
        // Stage count follows the working resolution so the bottleneck
        // sits at 8x8 (capped at the reference six stages for 256), and
        // self-attention always runs at the 16x16 level.
        let reference_widths = [128usize, 128, 256, 256, 512, 512];
        let mut stages = 1;
        let mut res = resolution;
        while res > 8 && stages < reference_widths.len() {
            res /= 2;
            stages += 1;
        }
        ArchDescriptor {
            in_channels: 3,
            out_channels: 1,
            base_widths: reference_widths[..stages].to_vec(),
            width_factor,
            blocks_per_stage: 2,
            attention_stage: stages.saturating_sub(1).max(1),
            resolution,
        }
    }

    /// Scaled stage widths, rounded to a multiple of 8 (minimum 8) so
    /// group normalization always divides evenly.
    pub fn widths(&self) -> Vec<usize> {
        self.base_widths
            .iter()
            .map(|&w| {
                let scaled = (w as f64 * self.width_factor / 8.0).round() as usize * 8;
                scaled.max(8)
            })
            .collect()
    }

    pub fn validate(&self) -> crate::Result<()> {
        let stages = self.base_widths.len();
        if stages == 0 || self.attention_stage == 0 || self.attention_stage > stages {
            return Err(crate::Error::Config(format!(
                "attention stage {} outside 1..={stages}",
                self.attention_stage
            )));
        }
        if self.resolution % (1 << (stages - 1)) != 0 {
            return Err(crate::Error::Config(format!(
                "resolution {} not divisible by {} for {stages} stages",
                self.resolution,
                1 << (stages - 1)
            )));
        }
        if self.width_factor <= 0.0 {
            return Err(crate::Error::Config("width factor must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps `(x_t, t, conditioning)` to a noise estimate.
/// `x_t` is `(B, 1, H, W)`, `cond` is `(B, 2, H, W)`, the output is
/// `(B, 1, H, W)`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor>;
}

const GN_GROUPS: usize = 8;
const GN_EPS: f64 = 1e-5;

fn pad1() -> Conv2dConfig {
    Conv2dConfig {
        padding: 1,
        ..Default::default()
    }
}

/// Zero-initialized convolution: residual branches and the output head
/// start as the identity/zero map, which keeps the effective depth small
/// at initialization and makes optimization tractable.
fn conv2d_zero(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    cfg: Conv2dConfig,
    vb: VarBuilder,
) -> Result<Conv2d> {
    let weight = vb.get_with_hints(
        (out_ch, in_ch, kernel, kernel),
        "weight",
        candle_nn::Init::Const(0.0),
    )?;
    let bias = vb.get_with_hints(out_ch, "bias", candle_nn::Init::Const(0.0))?;
    Ok(Conv2d::new(weight, Some(bias), cfg))
}

struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(in_ch: usize, out_ch: usize, time_dim: usize, vb: VarBuilder) -> Result<ResBlock> {
        let skip = if in_ch != out_ch {
            Some(conv2d(in_ch, out_ch, 1, Default::default(), vb.pp("skip"))?)
        } else {
            None
        };
        Ok(ResBlock {
            norm1: group_norm(GN_GROUPS.min(in_ch), in_ch, GN_EPS, vb.pp("norm1"))?,
            conv1: conv2d(in_ch, out_ch, 3, pad1(), vb.pp("conv1"))?,
            time_proj: linear(time_dim, out_ch, vb.pp("time_proj"))?,
            norm2: group_norm(GN_GROUPS.min(out_ch), out_ch, GN_EPS, vb.pp("norm2"))?,
            conv2: conv2d_zero(out_ch, out_ch, 3, pad1(), vb.pp("conv2"))?,
            skip,
        })
    }

    fn forward(&self, x: &Tensor, t_emb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let bias = self
            .time_proj
            .forward(&t_emb.silu()?)?
            .unsqueeze(D::Minus1)?
            .unsqueeze(D::Minus1)?;
        let h = h.broadcast_add(&bias)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let residual = match &self.skip {
            Some(skip) => skip.forward(x)?,
            None => x.clone(),
        };
        residual + h
    }
}

struct AttentionBlock {
    norm: GroupNorm,
    q: Conv2d,
    k: Conv2d,
    v: Conv2d,
    proj: Conv2d,
    channels: usize,
}

impl AttentionBlock {
    fn new(channels: usize, vb: VarBuilder) -> Result<AttentionBlock> {
        let one = Conv2dConfig::default();
        Ok(AttentionBlock {
            norm: group_norm(GN_GROUPS.min(channels), channels, GN_EPS, vb.pp("norm"))?,
            q: conv2d(channels, channels, 1, one, vb.pp("q"))?,
            k: conv2d(channels, channels, 1, one, vb.pp("k"))?,
            v: conv2d(channels, channels, 1, one, vb.pp("v"))?,
            proj: conv2d_zero(channels, channels, 1, one, vb.pp("proj"))?,
            channels,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let hidden = self.norm.forward(x)?;
        let q = self.q.forward(&hidden)?.reshape((b, c, h * w))?;
        let k = self.k.forward(&hidden)?.reshape((b, c, h * w))?;
        let v = self.v.forward(&hidden)?.reshape((b, c, h * w))?;
        let scale = 1.0 / (self.channels as f64).sqrt();
        // (B, HW, HW) attention over spatial positions.
        let attn = (q.transpose(1, 2)?.matmul(&k)? * scale)?;
        let attn = candle_nn::ops::softmax(&attn, D::Minus1)?;
        let out = v.matmul(&attn.transpose(1, 2)?)?.reshape((b, c, h, w))?;
        x + self.proj.forward(&out)?
    }
}

struct EncoderStage {
    blocks: Vec<ResBlock>,
    attention: Option<AttentionBlock>,
    downsample: Option<Conv2d>,
}

struct DecoderStage {
    upsample: Conv2d,
    blocks: Vec<ResBlock>,
    attention: Option<AttentionBlock>,
}

pub struct UNet {
    pub arch: ArchDescriptor,
    time_emb_dim: usize,
    time_mlp1: Linear,
    time_mlp2: Linear,
    conv_in: Conv2d,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
    device: Device,
}

impl UNet {
    pub fn new(arch: &ArchDescriptor, vb: VarBuilder) -> Result<UNet> {
        let widths = arch.widths();
        let stages = widths.len();
        let time_base = widths[0];
        let time_dim = time_base * 4;

        let time_mlp1 = linear(time_base, time_dim, vb.pp("time_mlp1"))?;
        let time_mlp2 = linear(time_dim, time_dim, vb.pp("time_mlp2"))?;
        let conv_in = conv2d(arch.in_channels, widths[0], 3, pad1(), vb.pp("conv_in"))?;

        let mut encoder = Vec::with_capacity(stages);
        let mut ch = widths[0];
        for (i, &width) in widths.iter().enumerate() {
            let vb_stage = vb.pp(format!("enc{i}"));
            let mut blocks = Vec::with_capacity(arch.blocks_per_stage);
            for b in 0..arch.blocks_per_stage {
                let in_ch = if b == 0 { ch } else { width };
                blocks.push(ResBlock::new(in_ch, width, time_dim, vb_stage.pp(format!("block{b}")))?);
            }
            let attention = if i + 1 == arch.attention_stage {
                Some(AttentionBlock::new(width, vb_stage.pp("attn"))?)
            } else {
                None
            };
            let downsample = if i + 1 < stages {
                let cfg = Conv2dConfig {
                    padding: 1,
                    stride: 2,
                    ..Default::default()
                };
                Some(conv2d(width, width, 3, cfg, vb_stage.pp("down"))?)
            } else {
                None
            };
            encoder.push(EncoderStage {
                blocks,
                attention,
                downsample,
            });
            ch = width;
        }

        let mut decoder = Vec::with_capacity(stages - 1);
        for i in (0..stages - 1).rev() {
            let vb_stage = vb.pp(format!("dec{i}"));
            let upsample = conv2d(ch, ch, 3, pad1(), vb_stage.pp("up"))?;
            let width = widths[i];
            let mut blocks = Vec::with_capacity(arch.blocks_per_stage);
            for b in 0..arch.blocks_per_stage {
                let in_ch = if b == 0 { ch + width } else { width };
                blocks.push(ResBlock::new(in_ch, width, time_dim, vb_stage.pp(format!("block{b}")))?);
            }
            let attention = if i + 1 == arch.attention_stage {
                Some(AttentionBlock::new(width, vb_stage.pp("attn"))?)
            } else {
                None
            };
            decoder.push(DecoderStage {
                upsample,
                blocks,
                attention,
            });
            ch = width;
        }

        Ok(UNet {
            arch: arch.clone(),
            time_emb_dim: time_base,
            time_mlp1,
            time_mlp2,
            conv_in,
            encoder,
            decoder,
            norm_out: group_norm(GN_GROUPS.min(ch), ch, GN_EPS, vb.pp("norm_out"))?,
            conv_out: conv2d_zero(ch, arch.out_channels, 3, pad1(), vb.pp("conv_out"))?,
            device: vb.device().clone(),
        })
    }

    /// Sinusoidal timestep embedding, `(B, time_emb_dim)`.
    fn timestep_embedding(&self, t: &[usize]) -> Result<Tensor> {
        let half = self.time_emb_dim / 2;
        let mut values = Vec::with_capacity(t.len() * self.time_emb_dim);
        for &step in t {
            let pos = step as f64;
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / (half - 1).max(1) as f64).exp();
                values.push((pos * freq).sin() as f32);
            }
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / (half - 1).max(1) as f64).exp();
                values.push((pos * freq).cos() as f32);
            }
        }
        Tensor::from_vec(values, (t.len(), self.time_emb_dim), &self.device)
    }

    pub fn forward(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor> {
        let (b, _, _, _) = x_t.dims4()?;
        assert_eq!(t.len(), b, "one timestep per batch item");
        let t_emb = self.timestep_embedding(t)?;
        let t_emb = self.time_mlp2.forward(&self.time_mlp1.forward(&t_emb)?.silu()?)?;

        let x = Tensor::cat(&[x_t, cond], 1)?;
        let mut h = self.conv_in.forward(&x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            for block in &stage.blocks {
                h = block.forward(&h, &t_emb)?;
            }
            if let Some(attn) = &stage.attention {
                h = attn.forward(&h)?;
            }
            skips.push(h.clone());
            if let Some(down) = &stage.downsample {
                h = down.forward(&h)?;
            }
        }
        skips.pop(); // deepest features continue directly into the decoder

        for stage in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let (_, _, sh, sw) = skip.dims4()?;
            h = stage.upsample.forward(&h.upsample_nearest2d(sh, sw)?)?;
            h = Tensor::cat(&[&h, &skip], 1)?;
            for block in &stage.blocks {
                h = block.forward(&h, &t_emb)?;
            }
            if let Some(attn) = &stage.attention {
                h = attn.forward(&h)?;
            }
        }

        self.conv_out.forward(&self.norm_out.forward(&h)?.silu()?)
    }

    pub fn device(&self) -> &Device {
        &self.device
    }
}

impl Denoiser for UNet {
    fn predict(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor> {
        self.forward(x_t, t, cond)
    }
}

/// Build a freshly initialized model plus its variable map.
pub fn build_unet(arch: &ArchDescriptor, device: &Device) -> crate::Result<(UNet, candle_nn::VarMap)> {
    arch.validate()?;
    let varmap = candle_nn::VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
    let model = UNet::new(arch, vb)?;
    Ok((model, varmap))
}
