//! Network building blocks: GN residual blocks, squeeze-excitation, the
//! feature fusion residual block (FFRB), the U-shaped encoder-decoder built
//! from them, the three-kernel multi-stream combiner, and the pyramid-pooling
//! refinement head.
//!
//! All blocks preserve spatial dims (same padding). Channel bookkeeping is
//! validated at construction; forward passes only check what depends on the
//! incoming tensor (spatial divisibility).

use crate::error::{Error, Result};
use crate::nn::{Conv2d, GroupNorm, NamedParams};
use crate::tensor::{concat, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlockConfig {
    pub kernel_size: usize,
    pub base_channels: usize,
    pub gn_groups: usize,
    pub se_reduction: usize,
}

impl BlockConfig {
    /// Defaults for a given width: groups min(8, C), SE reduction 16 capped
    /// at the width so tiny test models stay constructible.
    pub fn for_width(width: usize) -> BlockConfig {
        BlockConfig {
            kernel_size: 3,
            base_channels: width,
            gn_groups: width.min(8),
            se_reduction: width.min(16),
        }
    }

    pub fn with_kernel(&self, k: usize) -> BlockConfig {
        BlockConfig { kernel_size: k, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if ![3, 5, 7].contains(&self.kernel_size) {
            return Err(Error::Config(format!(
                "kernel_size must be 3, 5 or 7, got {}",
                self.kernel_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.gn_groups == 0 || self.base_channels % self.gn_groups != 0 {
            return Err(Error::Config(format!(
                "gn_groups {} must divide base_channels {}",
                self.gn_groups, self.base_channels
            )));
        }
        if self.se_reduction == 0 || self.base_channels < self.se_reduction {
            return Err(Error::Config(format!(
                "se_reduction {} must be in 1..=base_channels {}",
                self.se_reduction, self.base_channels
            )));
        }
        Ok(())
    }
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig::for_width(32)
    }
}

/// x + F(x) with F = conv -> GN -> ReLU -> conv -> GN.
pub struct ResGnBlock {
    conv1: Conv2d,
    gn1: GroupNorm,
    conv2: Conv2d,
    gn2: GroupNorm,
}

impl ResGnBlock {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, k: usize, groups: usize) -> Result<ResGnBlock> {
        Ok(ResGnBlock {
            conv1: Conv2d::new(rng, channels, channels, k, 1),
            gn1: GroupNorm::new(channels, groups)?,
            conv2: Conv2d::new(rng, channels, channels, k, 1),
            gn2: GroupNorm::new(channels, groups)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let h = self.gn1.forward(&self.conv1.forward(x)).relu();
        let h = self.gn2.forward(&self.conv2.forward(&h));
        x.add(&h)
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.gn1.params(&format!("{prefix}.gn1"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
        self.gn2.params(&format!("{prefix}.gn2"), out);
    }
}

/// Channel attention: x scaled by sigmoid(FC(ReLU(FC(GAP(x))))). The FCs are
/// 1x1 convolutions on the pooled (C,1,1) field.
pub struct SeBlock {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl SeBlock {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, reduction: usize) -> Result<SeBlock> {
        if channels < reduction || reduction == 0 {
            return Err(Error::Config(format!(
                "se_block needs 1 <= reduction <= channels, got reduction {reduction} for {channels} channels"
            )));
        }
        let mid = channels / reduction;
        Ok(SeBlock {
            fc1: Conv2d::new(rng, channels, mid, 1, 1),
            fc2: Conv2d::new(rng, mid, channels, 1, 1),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let gap = x.mean_axes(&[1, 2]);
        let w = self.fc2.forward(&self.fc1.forward(&gap).relu()).sigmoid();
        x.mul(&w)
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        self.fc1.params(&format!("{prefix}.fc1"), out);
        self.fc2.params(&format!("{prefix}.fc2"), out);
    }
}

/// Feature fusion residual block: SE(ReLU(GN(Conv(Res(x))))).
pub struct Ffrb {
    res: ResGnBlock,
    conv: Conv2d,
    gn: GroupNorm,
    se: SeBlock,
}

impl Ffrb {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, k: usize, groups: usize, reduction: usize) -> Result<Ffrb> {
        Ok(Ffrb {
            res: ResGnBlock::new(rng, channels, k, groups)?,
            conv: Conv2d::new(rng, channels, channels, k, 1),
            gn: GroupNorm::new(channels, groups)?,
            se: SeBlock::new(rng, channels, reduction)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let h = self.res.forward(x);
        let h = self.gn.forward(&self.conv.forward(&h)).relu();
        self.se.forward(&h)
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        self.res.params(&format!("{prefix}.res"), out);
        self.conv.params(&format!("{prefix}.conv"), out);
        self.gn.params(&format!("{prefix}.gn"), out);
        self.se.params(&format!("{prefix}.se"), out);
    }
}

/// The unit block of the encoder-decoder: FFRB normally, a plain GN residual
/// block when attention and fusion are ablated away.
pub enum CoreBlock {
    Ffrb(Ffrb),
    Plain(ResGnBlock),
}

impl CoreBlock {
    pub fn new(rng: &mut ChaCha8Rng, use_ffrb: bool, channels: usize, k: usize, groups: usize, reduction: usize) -> Result<CoreBlock> {
        Ok(if use_ffrb {
            CoreBlock::Ffrb(Ffrb::new(rng, channels, k, groups, reduction)?)
        } else {
            CoreBlock::Plain(ResGnBlock::new(rng, channels, k, groups)?)
        })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            CoreBlock::Ffrb(b) => b.forward(x),
            CoreBlock::Plain(b) => b.forward(x),
        }
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        match self {
            CoreBlock::Ffrb(b) => b.params(&format!("{prefix}.ffrb"), out),
            CoreBlock::Plain(b) => b.params(&format!("{prefix}.res"), out),
        }
    }
}

/// Extra channels concatenated into the U at fixed points; zero means the
/// hook is absent. Used by the feature compensator injections.
#[derive(Clone, Copy, Debug, Default)]
pub struct InjectChannels {
    pub bottleneck: usize,
    pub mid: usize,
}

struct DecLevel {
    up: Conv2d,
    fuse: Conv2d,
    block: CoreBlock,
}

/// U-shaped encoder-decoder. Each encoder level runs a block then a stride-2
/// convolution; the decoder mirrors it with nearest upsampling + conv and a
/// skip concatenation. Depth 0 degenerates to the bottleneck block alone.
pub struct UFfrb {
    enc: Vec<(CoreBlock, Conv2d)>,
    absorb: Option<Conv2d>,
    bottleneck: CoreBlock,
    dec: Vec<DecLevel>,
    depth: usize,
    inject: InjectChannels,
}

impl UFfrb {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cfg: &BlockConfig,
        depth: usize,
        use_ffrb: bool,
        inject: InjectChannels,
    ) -> Result<UFfrb> {
        cfg.validate()?;
        if (inject.bottleneck > 0 || inject.mid > 0) && depth != 2 {
            return Err(Error::Config(format!(
                "compensator injections need encoder depth 2 (quarter-scale bottleneck, half-scale decoder level), got depth {depth}"
            )));
        }
        let c = cfg.base_channels;
        let (k, g, r) = (cfg.kernel_size, cfg.gn_groups, cfg.se_reduction);
        let mut enc = Vec::new();
        for _ in 0..depth {
            enc.push((
                CoreBlock::new(rng, use_ffrb, c, k, g, r)?,
                Conv2d::new(rng, c, c, 3, 2),
            ));
        }
        let absorb = if inject.bottleneck > 0 {
            Some(Conv2d::new(rng, c + inject.bottleneck, c, 1, 1))
        } else {
            None
        };
        let bottleneck = CoreBlock::new(rng, use_ffrb, c, k, g, r)?;
        let mut dec = Vec::new();
        for level in 0..depth {
            // Level 0 is the deepest decoder step; the mid injection joins
            // the skip concat there (half scale when depth is 2).
            let extra = if level == 0 { inject.mid } else { 0 };
            dec.push(DecLevel {
                up: Conv2d::new(rng, c, c, 3, 1),
                fuse: Conv2d::new(rng, 2 * c + extra, c, 1, 1),
                block: CoreBlock::new(rng, use_ffrb, c, k, g, r)?,
            });
        }
        Ok(UFfrb { enc, absorb, bottleneck, dec, depth, inject })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        bottleneck_extra: Option<&Tensor>,
        mid_extra: Option<&Tensor>,
    ) -> Result<Tensor> {
        let shape = x.shape();
        let div = 1 << self.depth;
        if shape[1] % div != 0 || shape[2] % div != 0 {
            return Err(Error::invalid(
                "u_ffrb",
                format!("spatial dims {}x{} not divisible by 2^depth = {div}", shape[1], shape[2]),
            ));
        }
        if (self.inject.bottleneck > 0) != bottleneck_extra.is_some()
            || (self.inject.mid > 0) != mid_extra.is_some()
        {
            return Err(Error::invalid(
                "u_ffrb",
                "injection tensors must match the channels configured at construction",
            ));
        }

        let mut skips = Vec::new();
        let mut h = x.clone();
        for (block, down) in &self.enc {
            let f = block.forward(&h);
            skips.push(f.clone());
            h = down.forward(&f).relu();
        }
        if let (Some(absorb), Some(extra)) = (&self.absorb, bottleneck_extra) {
            h = absorb.forward(&concat(0, &[h, extra.clone()])).relu();
        }
        h = self.bottleneck.forward(&h);
        for (level, dec) in self.dec.iter().enumerate() {
            h = dec.up.forward(&h.upsample_nearest(2)).relu();
            let skip = skips.pop().expect("one skip per decoder level");
            let mut cat = vec![h, skip];
            if level == 0 {
                if let Some(extra) = mid_extra {
                    cat.push(extra.clone());
                }
            }
            h = dec.fuse.forward(&concat(0, &cat)).relu();
            h = dec.block.forward(&h);
        }
        Ok(h)
    }

    /// The bottleneck block alone; with depth 0 this is the whole forward
    /// pass, which makes the FFRB-degeneration property testable on shared
    /// weights.
    pub fn bottleneck_forward(&self, x: &Tensor) -> Tensor {
        self.bottleneck.forward(x)
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, (block, down)) in self.enc.iter().enumerate() {
            block.params(&format!("{prefix}.enc{i}"), out);
            down.params(&format!("{prefix}.enc{i}.down"), out);
        }
        if let Some(absorb) = &self.absorb {
            absorb.params(&format!("{prefix}.absorb"), out);
        }
        self.bottleneck.params(&format!("{prefix}.bottleneck"), out);
        for (i, dec) in self.dec.iter().enumerate() {
            dec.up.params(&format!("{prefix}.dec{i}.up"), out);
            dec.fuse.params(&format!("{prefix}.dec{i}.fuse"), out);
            dec.block.params(&format!("{prefix}.dec{i}"), out);
        }
    }
}

/// Three parallel U-FFRBs with kernel sizes 3, 5, 7, concatenated
/// channel-wise. Output channels are 3x the per-stream width.
pub struct MultiStream {
    pub streams: Vec<UFfrb>,
}

impl MultiStream {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cfg: &BlockConfig,
        depth: usize,
        use_ffrb: bool,
        inject: InjectChannels,
    ) -> Result<MultiStream> {
        let streams = [3, 5, 7]
            .iter()
            .map(|&k| UFfrb::new(rng, &cfg.with_kernel(k), depth, use_ffrb, inject))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiStream { streams })
    }

    /// The half-scale injection is shared: the same field is copied into all
    /// three streams.
    pub fn forward(
        &self,
        x: &Tensor,
        bottleneck_extra: Option<&Tensor>,
        mid_extra: Option<&Tensor>,
    ) -> Result<Tensor> {
        let outs = self
            .streams
            .iter()
            .map(|s| s.forward(x, bottleneck_extra, mid_extra))
            .collect::<Result<Vec<_>>>()?;
        let spatial: Vec<_> = outs.iter().map(|o| o.shape()[1..].to_vec()).collect();
        if spatial.iter().any(|s| *s != spatial[0]) {
            return Err(Error::shape(
                "multi_stream",
                format!("streams disagree on spatial dims: {spatial:?}"),
            ));
        }
        Ok(concat(0, &outs))
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        for (s, k) in self.streams.iter().zip([3, 5, 7]) {
            s.params(&format!("{prefix}.k{k}"), out);
        }
    }
}

/// Pyramid refinement: four pooled branches (factors 4/8/16/32) each pass a
/// point convolution to C/4 channels and return to full size by nearest
/// upsampling; the concat with the identity branch (2C channels total) runs
/// through seven GN residual blocks.
pub struct SppRefine {
    branches: Vec<(usize, Conv2d)>,
    blocks: Vec<ResGnBlock>,
}

pub const SPP_FACTORS: [usize; 4] = [4, 8, 16, 32];
pub const SPP_BLOCKS: usize = 7;

impl SppRefine {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, groups: usize) -> Result<SppRefine> {
        if channels % 4 != 0 {
            return Err(Error::Config(format!(
                "spp_refine needs channels divisible by 4, got {channels}"
            )));
        }
        let branches = SPP_FACTORS
            .iter()
            .map(|&f| (f, Conv2d::new(rng, channels, channels / 4, 1, 1)))
            .collect();
        let blocks = (0..SPP_BLOCKS)
            .map(|_| ResGnBlock::new(rng, 2 * channels, 3, groups))
            .collect::<Result<Vec<_>>>()?;
        Ok(SppRefine { branches, blocks })
    }

    pub fn out_channels(&self) -> usize {
        2 * self.branches[0].1.in_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        let max_f = *SPP_FACTORS.last().unwrap();
        if shape[1] % max_f != 0 || shape[2] % max_f != 0 {
            return Err(Error::invalid(
                "spp_refine",
                format!("spatial dims {}x{} not divisible by {max_f}", shape[1], shape[2]),
            ));
        }
        let mut parts = vec![x.clone()];
        for (f, conv) in &self.branches {
            let pooled = x.avg_pool2d(*f);
            let projected = conv.forward(&pooled).relu();
            parts.push(projected.upsample_nearest(*f));
        }
        let mut h = concat(0, &parts);
        for block in &self.blocks {
            h = block.forward(&h);
        }
        Ok(h)
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        for (f, conv) in &self.branches {
            conv.params(&format!("{prefix}.branch{f}"), out);
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.params(&format!("{prefix}.block{i}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::GradCheck;
    use crate::nn::{seeded_rng, uniform_in};
    use crate::tensor::Arr;
    use ndarray::IxDyn;

    fn rand_arr(shape: &[usize], seed: u64) -> Arr {
        let mut rng = seeded_rng(seed);
        Arr::from_shape_fn(IxDyn(shape), |_| uniform_in(&mut rng, -1.0, 1.0))
    }

    fn zero_params_matching(params: &NamedParams, fragment: &str) {
        let mut hit = false;
        for (name, p) in params {
            if name.contains(fragment) {
                let shape = p.shape();
                p.set_value(Arr::zeros(IxDyn(&shape)));
                hit = true;
            }
        }
        assert!(hit, "no parameter matching {fragment}");
    }

    #[test]
    fn config_validation_rejects_bad_combinations() {
        let ok = BlockConfig { kernel_size: 3, base_channels: 8, gn_groups: 4, se_reduction: 4 };
        assert!(ok.validate().is_ok());
        assert!(BlockConfig { kernel_size: 4, ..ok }.validate().is_err());
        assert!(BlockConfig { gn_groups: 3, ..ok }.validate().is_err());
        assert!(BlockConfig { se_reduction: 16, ..ok }.validate().is_err());
    }

    #[test]
    fn residual_block_preserves_shape_for_all_kernels() {
        let mut rng = seeded_rng(1);
        for k in [3, 5, 7] {
            let block = ResGnBlock::new(&mut rng, 8, k, 4).unwrap();
            for size in [32, 64] {
                let x = Tensor::constant(rand_arr(&[8, size, size], 2));
                assert_eq!(block.forward(&x).shape(), vec![8, size, size]);
            }
        }
    }

    #[test]
    fn residual_block_with_zeroed_second_conv_is_identity() {
        let mut rng = seeded_rng(3);
        let block = ResGnBlock::new(&mut rng, 4, 3, 2).unwrap();
        let mut params = NamedParams::new();
        block.params("b", &mut params);
        zero_params_matching(&params, ".conv2.");
        let x = Tensor::constant(rand_arr(&[4, 6, 6], 4));
        // gn2(0) = 0 under the default affine, so the residual branch
        // vanishes and x passes through bitwise.
        assert_eq!(block.forward(&x).to_array(), x.to_array());
    }

    #[test]
    fn se_gate_scales_channels_within_unit_interval() {
        let mut rng = seeded_rng(5);
        for net_seed in 0..4 {
            let se = SeBlock::new(&mut rng, 8, 4).unwrap();
            for input_seed in 0..25 {
                let x = Tensor::constant(rand_arr(&[8, 5, 5], net_seed * 100 + input_seed));
                let y = se.forward(&x).to_array();
                let xv = x.to_array();
                for (a, b) in y.iter().zip(xv.iter()) {
                    if b.abs() > 1e-9 {
                        let ratio = a / b;
                        assert!(ratio > 0.0 && ratio < 1.0, "gate ratio {ratio} outside (0,1)");
                    }
                }
            }
        }
    }

    #[test]
    fn se_with_zero_weights_halves_the_input() {
        let mut rng = seeded_rng(6);
        let se = SeBlock::new(&mut rng, 4, 2).unwrap();
        let mut params = NamedParams::new();
        se.params("se", &mut params);
        zero_params_matching(&params, "fc");
        let x = Tensor::constant(rand_arr(&[4, 3, 3], 7));
        let y = se.forward(&x).to_array();
        let expect = x.to_array() * 0.5;
        assert_eq!(y, expect);
    }

    #[test]
    fn se_reduction_sets_bottleneck_width() {
        let mut rng = seeded_rng(8);
        let se = SeBlock::new(&mut rng, 64, 16).unwrap();
        let mut params = NamedParams::new();
        se.params("se", &mut params);
        let fc1 = params.iter().find(|(n, _)| n == "se.fc1.weight").unwrap();
        assert_eq!(fc1.1.shape(), vec![4, 64, 1, 1]);
        assert!(SeBlock::new(&mut rng, 4, 8).is_err());
    }

    #[test]
    fn fusion_block_preserves_shape_and_maps_zero_to_zero() {
        let mut rng = seeded_rng(9);
        for k in [3, 5, 7] {
            let ffrb = Ffrb::new(&mut rng, 8, k, 4, 4).unwrap();
            let x = Tensor::constant(rand_arr(&[8, 12, 12], 10));
            assert_eq!(ffrb.forward(&x).shape(), vec![8, 12, 12]);
            // Freshly initialized biases are zero, so convolutions and
            // normalization both fix the zero field.
            let zero = Tensor::constant(Arr::zeros(IxDyn(&[8, 12, 12])));
            assert!(ffrb.forward(&zero).to_array().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn fusion_block_gradients_match_finite_differences() {
        let mut rng = seeded_rng(11);
        let ffrb = Ffrb::new(&mut rng, 4, 3, 4, 4).unwrap();
        let x = Tensor::parameter(rand_arr(&[4, 5, 5], 12));
        let w = Tensor::constant(rand_arr(&[4, 5, 5], 13));
        let mut params = vec![("x".to_string(), x.clone())];
        ffrb.params("ffrb", &mut params);
        let gc = GradCheck { samples_per_param: 3, ..Default::default() };
        gc.check(&params, || ffrb.forward(&x).mul(&w).sum_all()).unwrap();
    }

    #[test]
    fn depth_zero_u_block_degenerates_to_its_bottleneck() {
        let mut rng = seeded_rng(14);
        let cfg = BlockConfig { kernel_size: 3, base_channels: 8, gn_groups: 4, se_reduction: 4 };
        let u = UFfrb::new(&mut rng, &cfg, 0, true, InjectChannels { bottleneck: 0, mid: 0 })
            .unwrap();
        let x = Tensor::constant(rand_arr(&[8, 8, 8], 15));
        let through_u = u.forward(&x, None, None).unwrap().to_array();
        let through_block = u.bottleneck_forward(&x).to_array();
        assert_eq!(through_u, through_block);
    }

    #[test]
    fn u_block_round_trips_shape_and_rejects_indivisible_input() {
        let mut rng = seeded_rng(16);
        let cfg = BlockConfig { kernel_size: 3, base_channels: 8, gn_groups: 4, se_reduction: 4 };
        let u = UFfrb::new(&mut rng, &cfg, 2, true, InjectChannels { bottleneck: 0, mid: 0 })
            .unwrap();
        let x = Tensor::constant(rand_arr(&[8, 16, 16], 17));
        assert_eq!(u.forward(&x, None, None).unwrap().shape(), vec![8, 16, 16]);
        let odd = Tensor::constant(rand_arr(&[8, 10, 10], 18));
        assert!(u.forward(&odd, None, None).is_err());
    }

    #[test]
    fn u_block_injections_require_depth_two() {
        let mut rng = seeded_rng(19);
        let cfg = BlockConfig { kernel_size: 3, base_channels: 8, gn_groups: 4, se_reduction: 4 };
        let inject = InjectChannels { bottleneck: 3, mid: 3 };
        assert!(UFfrb::new(&mut rng, &cfg, 1, true, inject).is_err());

        let u = UFfrb::new(&mut rng, &cfg, 2, true, InjectChannels { bottleneck: 3, mid: 3 })
            .unwrap();
        let x = Tensor::constant(rand_arr(&[8, 16, 16], 20));
        // Forward must receive exactly the configured injections.
        assert!(u.forward(&x, None, None).is_err());
        let quarter = Tensor::constant(rand_arr(&[3, 4, 4], 21));
        let half = Tensor::constant(rand_arr(&[3, 8, 8], 22));
        let y = u.forward(&x, Some(&quarter), Some(&half)).unwrap();
        assert_eq!(y.shape(), vec![8, 16, 16]);
    }

    #[test]
    fn u_block_skip_connections_carry_signal() {
        let mut rng = seeded_rng(23);
        let cfg = BlockConfig { kernel_size: 3, base_channels: 4, gn_groups: 2, se_reduction: 2 };
        let u = UFfrb::new(&mut rng, &cfg, 1, false, InjectChannels { bottleneck: 0, mid: 0 })
            .unwrap();
        let x = Tensor::constant(rand_arr(&[4, 8, 8], 24));
        let baseline = u.forward(&x, None, None).unwrap().to_array();

        // The decoder fuse sees [upsampled, skip] on the channel axis;
        // zeroing the skip half of its kernel must change the output,
        // otherwise the skip was never wired in.
        let mut params = NamedParams::new();
        u.params("u", &mut params);
        let (_, fuse) = params.iter().find(|(n, _)| n == "u.dec0.fuse.weight").unwrap();
        let mut w = fuse.to_array();
        w.slice_mut(ndarray::s![.., 4..8, .., ..]).fill(0.0);
        fuse.set_value(w);
        let severed = u.forward(&x, None, None).unwrap().to_array();
        assert_ne!(baseline, severed);
    }

    #[test]
    fn multi_stream_concatenates_kernel_streams_in_order() {
        let mut rng = seeded_rng(25);
        let cfg = BlockConfig { kernel_size: 3, base_channels: 4, gn_groups: 2, se_reduction: 2 };
        let ms = MultiStream::new(&mut rng, &cfg, 1, true, InjectChannels { bottleneck: 0, mid: 0 })
            .unwrap();
        let x = Tensor::constant(rand_arr(&[4, 8, 8], 26));
        let y = ms.forward(&x, None, None).unwrap();
        assert_eq!(y.shape(), vec![12, 8, 8]);
        for (i, stream) in ms.streams.iter().enumerate() {
            let solo = stream.forward(&x, None, None).unwrap().to_array();
            let block = y.narrow(0, i * 4, 4).to_array();
            assert_eq!(block, solo);
        }
    }

    #[test]
    fn pyramid_refine_doubles_channels_and_validates_size() {
        let mut rng = seeded_rng(27);
        let spp = SppRefine::new(&mut rng, 4, 4).unwrap();
        assert_eq!(spp.out_channels(), 8);
        let x = Tensor::constant(rand_arr(&[4, 32, 32], 28));
        assert_eq!(spp.forward(&x).unwrap().shape(), vec![8, 32, 32]);
        let small = Tensor::constant(rand_arr(&[4, 16, 16], 29));
        assert!(spp.forward(&small).is_err());
        assert!(SppRefine::new(&mut rng, 6, 2).is_err());
    }

    #[test]
    fn pyramid_refine_input_gradients_match_finite_differences() {
        let mut rng = seeded_rng(30);
        let spp = SppRefine::new(&mut rng, 4, 4).unwrap();
        let x = Tensor::parameter(rand_arr(&[4, 32, 32], 31));
        let w = Tensor::constant(rand_arr(&[8, 32, 32], 32));
        let params = vec![("x".to_string(), x.clone())];
        let gc = GradCheck { samples_per_param: 4, ..Default::default() };
        gc.check(&params, || spp.forward(&x).unwrap().mul(&w).sum_all()).unwrap();
    }
}
