//! Full network assembly: the trunk (single- or multi-stream encoder-decoder
//! over the rainy image), the half-scale embedding head, the detector
//! rectification loop, the compensator injections, and the pyramid-refined
//! full-scale residual head. Also the ablation variant table and the
//! checkpoint container.

use crate::blocks::{BlockConfig, CoreBlock, InjectChannels, MultiStream, SppRefine, UFfrb};
use crate::data::{pad_to_multiple_reflect, Image};
use crate::error::{Error, Result};
use crate::feedback::{
    error_from_detector, rectify, CompensatorNet, CompensatorOutput, DetectorMap, DetectorNet,
    EmbeddingResidual, ErrorMap,
};
use crate::nn::{seeded_rng, Conv2d, NamedParams};
use crate::schedule::HyperState;
use crate::tensor::{concat, Tensor};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Spatial granularity the refinement pyramid needs.
pub const SPATIAL_MULTIPLE: usize = 32;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AblationConfig {
    pub use_ffrb: bool,
    pub use_multistream: bool,
    pub use_embedding: bool,
    pub use_detector: bool,
    pub use_le2: bool,
    pub use_compensator: bool,
    /// Encoder-decoder depth of each stream. The compensator injections
    /// assume depth 2 (quarter-scale bottleneck, half-scale decoder level).
    pub depth: usize,
    /// Detach the reconstructed error before the rectification, severing
    /// the gradient path from the rectified embedding into the detector.
    pub detach_rectification: bool,
    /// Keep the detector out of the residual pathway (rectified = embedding)
    /// while still computing its map. This is the post-training
    /// detector-removed evaluation mode; with a zero error map the
    /// rectification is the identity, so this flag is also the reference
    /// point for the rectification no-op equivalence.
    pub bypass_rectification: bool,
    pub block: BlockConfig,
    pub hyper: HyperState,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            use_ffrb: true,
            use_multistream: true,
            use_embedding: true,
            use_detector: true,
            use_le2: true,
            use_compensator: true,
            depth: 2,
            detach_rectification: false,
            bypass_rectification: false,
            block: BlockConfig::default(),
            hyper: HyperState::default(),
        }
    }
}

impl AblationConfig {
    /// Lattice order: the detector loss needs the detector, the detector
    /// needs the embedding.
    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if self.use_le2 && !self.use_detector {
            return Err(Error::Config("use_le2 requires use_detector".into()));
        }
        if self.use_detector && !self.use_embedding {
            return Err(Error::Config("use_detector requires use_embedding".into()));
        }
        if self.block.base_channels % 4 != 0 {
            return Err(Error::Config(format!(
                "base_channels {} must be divisible by 4 for the pyramid branches",
                self.block.base_channels
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("stream depth must be at least 1".into()));
        }
        if self.use_compensator && self.depth != 2 {
            return Err(Error::Config(format!(
                "compensator injections need stream depth 2, got {}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn with_width(mut self, width: usize) -> AblationConfig {
        self.block = BlockConfig::for_width(width);
        self
    }
}

/// The seven ablation variants, cumulative from the bare single-stream
/// network to the full model:
/// M1 base, M2 +FFRB, M3 +multi-stream, M4 +embedding, M5 +detector (without
/// its loss), M6 +detector loss, M7 +compensator.
pub fn variant(name: &str) -> Result<AblationConfig> {
    let order = ["M1", "M2", "M3", "M4", "M5", "M6", "M7"];
    let Some(level) = order.iter().position(|&n| n == name) else {
        return Err(Error::invalid(
            "variant",
            format!("unknown variant {name:?}, expected one of {order:?}"),
        ));
    };
    Ok(AblationConfig {
        use_ffrb: level >= 1,
        use_multistream: level >= 2,
        use_embedding: level >= 3,
        use_detector: level >= 4,
        use_le2: level >= 5,
        use_compensator: level >= 6,
        ..AblationConfig::default()
    })
}

pub const VARIANT_NAMES: [&str; 7] = ["M1", "M2", "M3", "M4", "M5", "M6", "M7"];

/// Everything one forward pass produces. Fields for ablated modules are
/// absent. embedding_quarter echoes the compensator's quarter-scale
/// embedding, the only quarter-scale field in the architecture.
pub struct ForwardBundle {
    pub residual_final: Tensor,
    /// Head output before the clamp. Training losses read this field: an L1
    /// pull on the clamped field would lose its gradient wherever the clamp
    /// saturates, and with sparse residual truths most pixels saturate at 0
    /// within a few steps.
    pub residual_raw: Tensor,
    pub embedding_half: Option<EmbeddingResidual>,
    pub embedding_quarter: Option<EmbeddingResidual>,
    pub detector: Option<DetectorMap>,
    pub rectified: Option<EmbeddingResidual>,
    pub compensator: Option<CompensatorOutput>,
}

enum Trunk {
    Multi(MultiStream),
    Single(UFfrb),
}

pub struct RlNet {
    pub cfg: AblationConfig,
    stem: Conv2d,
    trunk: Trunk,
    fuse: Conv2d,
    embed_down: Option<Conv2d>,
    embed_block: Option<CoreBlock>,
    embed_head: Option<Conv2d>,
    detector: Option<DetectorNet>,
    rect_up: Option<Conv2d>,
    rect_fuse: Option<Conv2d>,
    compensator: Option<CompensatorNet>,
    spp: SppRefine,
    head: Conv2d,
}

impl RlNet {
    pub fn new(cfg: &AblationConfig, seed: u64) -> Result<RlNet> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed);
        let b = &cfg.block;
        let c = b.base_channels;
        let inject = if cfg.use_compensator {
            InjectChannels { bottleneck: 3, mid: 3 }
        } else {
            InjectChannels::default()
        };

        let stem = Conv2d::new(&mut rng, 3, c, 3, 1);
        let (trunk, trunk_out) = if cfg.use_multistream {
            (Trunk::Multi(MultiStream::new(&mut rng, b, cfg.depth, cfg.use_ffrb, inject)?), 3 * c)
        } else {
            (Trunk::Single(UFfrb::new(&mut rng, b, cfg.depth, cfg.use_ffrb, inject)?), c)
        };
        let fuse = Conv2d::new(&mut rng, trunk_out, c, 1, 1);

        let (mut embed_down, mut embed_block, mut embed_head) = (None, None, None);
        let (mut detector, mut rect_up, mut rect_fuse) = (None, None, None);
        if cfg.use_embedding {
            embed_down = Some(Conv2d::new(&mut rng, c, c, 3, 2));
            embed_block = Some(CoreBlock::new(
                &mut rng,
                cfg.use_ffrb,
                c,
                b.kernel_size,
                b.gn_groups,
                b.se_reduction,
            )?);
            embed_head = Some(Conv2d::new(&mut rng, c, 3, 3, 1));
            if cfg.use_detector {
                detector = Some(DetectorNet::new(&mut rng, b)?);
            }
            rect_up = Some(Conv2d::new(&mut rng, 3, c, 3, 1));
            rect_fuse = Some(Conv2d::new(&mut rng, 2 * c, c, 1, 1));
        }

        let compensator = if cfg.use_compensator {
            Some(CompensatorNet::new(&mut rng, b, cfg.use_ffrb)?)
        } else {
            None
        };

        let spp = SppRefine::new(&mut rng, c, b.gn_groups)?;
        let head = Conv2d::new(&mut rng, 2 * c, 3, 3, 1);

        Ok(RlNet {
            cfg: cfg.clone(),
            stem,
            trunk,
            fuse,
            embed_down,
            embed_block,
            embed_head,
            detector,
            rect_up,
            rect_fuse,
            compensator,
            spp,
            head,
        })
    }

    /// Forward pass over a (3,H,W) tensor with H, W multiples of 32.
    /// Residual truths (half, quarter) switch the compensator into training
    /// mode. `bypass_override` replaces the config's bypass flag for
    /// evaluation modes.
    pub fn forward_with(
        &self,
        rainy: &Tensor,
        truths: Option<(&Tensor, &Tensor)>,
        bypass_override: Option<bool>,
    ) -> Result<ForwardBundle> {
        let shape = rainy.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape("rlnet_forward", format!("expected (3,H,W), got {shape:?}")));
        }
        let (h, w) = (shape[1], shape[2]);
        if h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
            let ph = h.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE;
            let pw = w.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE;
            return Err(Error::invalid(
                "rlnet_forward",
                format!("dims {h}x{w} not divisible by {SPATIAL_MULTIPLE}; pad to {ph}x{pw} first"),
            ));
        }
        let bypass = bypass_override.unwrap_or(self.cfg.bypass_rectification);

        let comp = match (&self.compensator, truths) {
            (Some(net), Some((th, tq))) => Some(net.forward(rainy, Some(th), Some(tq))?),
            (Some(net), None) => Some(net.forward(rainy, None, None)?),
            (None, _) => None,
        };
        let (bott_extra, mid_extra) = match &comp {
            Some(c) => (Some(&c.embedding_quarter.data), Some(&c.embedding_half.data)),
            None => (None, None),
        };

        let x = self.stem.forward(rainy).relu();
        let trunk_out = match &self.trunk {
            Trunk::Multi(ms) => ms.forward(&x, bott_extra, mid_extra)?,
            Trunk::Single(u) => u.forward(&x, bott_extra, mid_extra)?,
        };
        let t = self.fuse.forward(&trunk_out).relu();

        let mut embedding_half = None;
        let mut detector_map = None;
        let mut rectified = None;
        let cond = if self.cfg.use_embedding {
            let down = self.embed_down.as_ref().unwrap().forward(&t).relu();
            let e = self.embed_block.as_ref().unwrap().forward(&down);
            let phi1 = EmbeddingResidual {
                data: self.embed_head.as_ref().unwrap().forward(&e).sigmoid(),
                scale: 0.5,
            };

            let rect = if let Some(det) = &self.detector {
                let rainy_half = rainy.avg_pool2d(2);
                let d = det.forward(&rainy_half, &phi1)?;
                let rect = if !bypass && self.cfg.hyper.theta1 > 0.0 {
                    let err = error_from_detector(&d, self.cfg.hyper.theta1)?;
                    let err = if self.cfg.detach_rectification {
                        ErrorMap { data: err.data.detach(), scale: err.scale }
                    } else {
                        err
                    };
                    rectify(&phi1, &err)?
                } else {
                    phi1.clone()
                };
                detector_map = Some(d);
                rect
            } else {
                phi1.clone()
            };

            let up = self
                .rect_up
                .as_ref()
                .unwrap()
                .forward(&rect.data.upsample_nearest(2))
                .relu();
            embedding_half = Some(phi1);
            rectified = Some(rect);
            self.rect_fuse
                .as_ref()
                .unwrap()
                .forward(&concat(0, &[t, up]))
                .relu()
        } else {
            t
        };

        let refined = self.spp.forward(&cond)?;
        let residual_raw = self.head.forward(&refined);
        let residual_final = residual_raw.clamp(0.0, 1.0);

        let embedding_quarter = comp.as_ref().map(|c| c.embedding_quarter.clone());
        Ok(ForwardBundle {
            residual_final,
            residual_raw,
            embedding_half,
            embedding_quarter,
            detector: detector_map,
            rectified,
            compensator: comp,
        })
    }

    pub fn forward(&self, rainy: &Tensor, truths: Option<(&Tensor, &Tensor)>) -> Result<ForwardBundle> {
        self.forward_with(rainy, truths, None)
    }

    /// Derain an arbitrary-size image: mirror-pad to the spatial multiple,
    /// predict the residual, crop, subtract, clamp.
    pub fn derain(&self, rainy: &Image) -> Result<Image> {
        self.derain_mode(rainy, self.cfg.bypass_rectification)
    }

    pub fn derain_mode(&self, rainy: &Image, bypass_rectification: bool) -> Result<Image> {
        let (_, h, w) = rainy.dim();
        let padded = pad_to_multiple_reflect(rainy, SPATIAL_MULTIPLE);
        let input = Tensor::constant(padded.into_dyn());
        let bundle = self.forward_with(&input, None, Some(bypass_rectification))?;
        let residual_full = bundle.residual_final.to_array();
        let residual = residual_full
            .slice(ndarray::s![.., 0..h, 0..w])
            .to_owned();
        let mut clean = rainy - &residual;
        clean.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(clean)
    }

    /// All trainable parameters in a stable order with hierarchical names.
    pub fn params(&self) -> NamedParams {
        let mut out = Vec::new();
        self.stem.params("stem", &mut out);
        match &self.trunk {
            Trunk::Multi(ms) => ms.params("trunk", &mut out),
            Trunk::Single(u) => u.params("trunk", &mut out),
        }
        self.fuse.params("fuse", &mut out);
        if let Some(c) = &self.embed_down {
            c.params("embed.down", &mut out);
        }
        if let Some(b) = &self.embed_block {
            b.params("embed", &mut out);
        }
        if let Some(c) = &self.embed_head {
            c.params("embed.head", &mut out);
        }
        if let Some(d) = &self.detector {
            d.params("detector", &mut out);
        }
        if let Some(c) = &self.rect_up {
            c.params("rect.up", &mut out);
        }
        if let Some(c) = &self.rect_fuse {
            c.params("rect.fuse", &mut out);
        }
        if let Some(c) = &self.compensator {
            c.params("compensator", &mut out);
        }
        self.spp.params("spp", &mut out);
        self.head.params("head", &mut out);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.cfg, &self.params())
    }

    /// Rebuild a network from a checkpoint. The stored config is used as-is;
    /// every parameter must be present with a matching shape.
    pub fn load(path: &Path) -> Result<RlNet> {
        let (cfg, arrays) = load_checkpoint(path)?;
        let net = RlNet::new(&cfg, 0)?;
        let params = net.params();
        if params.len() != arrays.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} arrays, model expects {}",
                arrays.len(),
                params.len()
            )));
        }
        for (name, tensor) in &params {
            let arr = arrays
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, a)| a)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if arr.shape() != tensor.value().shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    arr.shape(),
                    tensor.value().shape()
                )));
            }
            tensor.set_value(arr.clone());
        }
        Ok(net)
    }
}

const CKPT_MAGIC: &[u8; 8] = b"RRLNCKP1";

fn save_checkpoint(path: &Path, cfg: &AblationConfig, params: &NamedParams) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CKPT_MAGIC)?;
    let cfg_json = serde_json::to_vec(cfg)?;
    f.write_all(&(cfg_json.len() as u64).to_le_bytes())?;
    f.write_all(&cfg_json)?;
    f.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        f.write_all(&(name_bytes.len() as u64).to_le_bytes())?;
        f.write_all(name_bytes)?;
        let value = tensor.value();
        let shape = value.shape();
        f.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            f.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in value.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

type NamedArrays = Vec<(String, crate::tensor::Arr)>;

fn load_checkpoint(path: &Path) -> Result<(AblationConfig, NamedArrays)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |f: &mut dyn Read| -> Result<u64> {
        f.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let cfg_len = read_u64(&mut f)? as usize;
    let mut cfg_json = vec![0u8; cfg_len];
    f.read_exact(&mut cfg_json)?;
    let cfg: AblationConfig = serde_json::from_slice(&cfg_json)?;
    let count = read_u64(&mut f)? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut f)? as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let ndim = read_u64(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut f)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut fbuf = [0u8; 8];
        for _ in 0..n {
            f.read_exact(&mut fbuf)?;
            data.push(f64::from_le_bytes(fbuf));
        }
        arrays.push((
            name,
            crate::tensor::Arr::from_shape_vec(ndarray::IxDyn(&shape), data)
                .map_err(|e| Error::Checkpoint(format!("bad array shape: {e}")))?,
        ));
    }
    Ok((cfg, arrays))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_rng, uniform_in};
    use crate::tensor::Arr;
    use ndarray::{Array3, IxDyn};
    use std::collections::HashSet;

    fn toy_cfg(name: &str) -> AblationConfig {
        variant(name).unwrap().with_width(8)
    }

    fn rand_rainy(size: usize, seed: u64) -> Tensor {
        let mut rng = seeded_rng(seed);
        Tensor::constant(Arr::from_shape_fn(IxDyn(&[3, size, size]), |_| {
            uniform_in(&mut rng, 0.0, 1.0)
        }))
    }

    fn rand_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = seeded_rng(seed);
        Array3::from_shape_fn((3, h, w), |_| uniform_in(&mut rng, 0.0, 1.0))
    }

    #[test]
    fn variant_table_is_cumulative() {
        let m1 = variant("M1").unwrap();
        assert!(!m1.use_ffrb && !m1.use_multistream && !m1.use_embedding);
        assert!(!m1.use_detector && !m1.use_le2 && !m1.use_compensator);
        let m4 = variant("M4").unwrap();
        assert!(m4.use_embedding && !m4.use_detector);
        let m7 = variant("M7").unwrap();
        assert!(m7.use_ffrb && m7.use_multistream && m7.use_embedding);
        assert!(m7.use_detector && m7.use_le2 && m7.use_compensator);
        for name in VARIANT_NAMES {
            assert!(variant(name).unwrap().validate().is_ok());
        }
        assert!(variant("M8").is_err());
    }

    #[test]
    fn config_validation_enforces_the_dependency_chain() {
        let mut cfg = variant("M4").unwrap();
        cfg.use_le2 = true;
        assert!(cfg.validate().is_err(), "detector loss without detector");

        let mut cfg = variant("M3").unwrap();
        cfg.use_detector = true;
        cfg.use_embedding = false;
        assert!(cfg.validate().is_err(), "detector without embedding");

        let mut cfg = variant("M7").unwrap();
        cfg.depth = 1;
        assert!(cfg.validate().is_err(), "compensator needs depth 2");

        let mut cfg = variant("M6").unwrap();
        cfg.depth = 1;
        assert!(cfg.validate().is_ok(), "depth 1 is fine without the compensator");
    }

    #[test]
    fn full_variant_produces_every_bundle_field() {
        let model = RlNet::new(&toy_cfg("M7"), 1).unwrap();
        let rainy = rand_rainy(32, 2);
        let b = model.forward(&rainy, None).unwrap();
        assert_eq!(b.residual_final.shape(), vec![3, 32, 32]);
        assert!(b.residual_final.to_array().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(b.embedding_half.as_ref().unwrap().data.shape(), vec![3, 16, 16]);
        assert_eq!(b.detector.as_ref().unwrap().data.shape(), vec![3, 16, 16]);
        assert_eq!(b.rectified.as_ref().unwrap().data.shape(), vec![3, 16, 16]);
        assert_eq!(b.embedding_quarter.as_ref().unwrap().data.shape(), vec![3, 8, 8]);
        assert!(b.compensator.is_some());
        assert!(!b.compensator.as_ref().unwrap().is_training_mode());
    }

    #[test]
    fn base_variant_bundle_is_minimal() {
        let model = RlNet::new(&toy_cfg("M1"), 1).unwrap();
        let b = model.forward(&rand_rainy(32, 3), None).unwrap();
        assert_eq!(b.residual_final.shape(), vec![3, 32, 32]);
        assert!(b.embedding_half.is_none());
        assert!(b.detector.is_none());
        assert!(b.rectified.is_none());
        assert!(b.compensator.is_none());
        assert!(b.embedding_quarter.is_none());
    }

    #[test]
    fn rectified_falls_back_to_the_embedding_without_a_detector() {
        let model = RlNet::new(&toy_cfg("M4"), 4).unwrap();
        let b = model.forward(&rand_rainy(32, 5), None).unwrap();
        assert!(b.detector.is_none());
        let emb = b.embedding_half.as_ref().unwrap().data.to_array();
        let rect = b.rectified.as_ref().unwrap().data.to_array();
        assert_eq!(emb, rect);
    }

    #[test]
    fn bypassing_rectification_reduces_to_the_embedding_bitwise() {
        let model = RlNet::new(&toy_cfg("M7"), 6).unwrap();
        let rainy = rand_rainy(32, 7);

        let bypassed = model.forward_with(&rainy, None, Some(true)).unwrap();
        assert_eq!(
            bypassed.embedding_half.as_ref().unwrap().data.to_array(),
            bypassed.rectified.as_ref().unwrap().data.to_array()
        );
        assert!(bypassed.detector.is_some(), "the map is still computed");

        let looped = model.forward_with(&rainy, None, Some(false)).unwrap();
        assert_ne!(
            looped.embedding_half.as_ref().unwrap().data.to_array(),
            looped.rectified.as_ref().unwrap().data.to_array(),
            "an active detector with theta1 > 0 must change the embedding"
        );
    }

    #[test]
    fn zero_threshold_disables_the_loop_without_removing_the_detector() {
        let mut cfg = toy_cfg("M7");
        cfg.hyper.theta1 = 0.0;
        let model = RlNet::new(&cfg, 8).unwrap();
        let b = model.forward(&rand_rainy(32, 9), None).unwrap();
        assert!(b.detector.is_some());
        assert_eq!(
            b.embedding_half.as_ref().unwrap().data.to_array(),
            b.rectified.as_ref().unwrap().data.to_array()
        );
    }

    #[test]
    fn construction_and_forward_are_deterministic_in_the_seed() {
        let cfg = toy_cfg("M7");
        let a = RlNet::new(&cfg, 11).unwrap();
        let b = RlNet::new(&cfg, 11).unwrap();
        let rainy = rand_rainy(32, 12);
        assert_eq!(
            a.forward(&rainy, None).unwrap().residual_final.to_array(),
            b.forward(&rainy, None).unwrap().residual_final.to_array()
        );
        let c = RlNet::new(&cfg, 13).unwrap();
        assert_ne!(
            a.forward(&rainy, None).unwrap().residual_final.to_array(),
            c.forward(&rainy, None).unwrap().residual_final.to_array()
        );
    }

    #[test]
    fn forward_validates_input_shape() {
        let model = RlNet::new(&toy_cfg("M1"), 14).unwrap();
        let gray = Tensor::constant(Arr::zeros(IxDyn(&[1, 32, 32])));
        assert!(model.forward(&gray, None).is_err());
        let odd = Tensor::constant(Arr::zeros(IxDyn(&[3, 48, 48])));
        let err = match model.forward(&odd, None) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("a 48x48 input must be rejected"),
        };
        assert!(err.contains("64"), "should suggest the padded size, got: {err}");
    }

    #[test]
    fn deraining_handles_arbitrary_sizes_via_reflect_padding() {
        let model = RlNet::new(&toy_cfg("M7"), 15).unwrap();
        let rainy = rand_image(40, 50, 16);
        let clean = model.derain(&rainy).unwrap();
        assert_eq!(clean.dim(), (3, 40, 50));
        assert!(clean.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zeroed_head_predicts_a_zero_residual() {
        let model = RlNet::new(&toy_cfg("M7"), 17).unwrap();
        for (name, p) in model.params() {
            if name.starts_with("head.") {
                let shape = p.shape();
                p.set_value(Arr::zeros(IxDyn(&shape)));
            }
        }
        let rainy = rand_image(32, 32, 18);
        let clean = model.derain(&rainy).unwrap();
        assert_eq!(clean, rainy, "zero residual must return the input untouched");
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let a = RlNet::new(&toy_cfg("M7"), 19).unwrap();
        let names_a: Vec<String> = a.params().into_iter().map(|(n, _)| n).collect();
        let unique: HashSet<&String> = names_a.iter().collect();
        assert_eq!(unique.len(), names_a.len(), "duplicate parameter names");
        let b = RlNet::new(&toy_cfg("M7"), 20).unwrap();
        let names_b: Vec<String> = b.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names_a, names_b);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_the_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = RlNet::new(&toy_cfg("M6"), 21).unwrap();
        model.save(&path).unwrap();
        let restored = RlNet::load(&path).unwrap();
        assert_eq!(restored.cfg, model.cfg);
        let rainy = rand_image(32, 32, 22);
        assert_eq!(model.derain(&rainy).unwrap(), restored.derain(&rainy).unwrap());
    }

    #[test]
    fn checkpoint_rejects_garbage_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(RlNet::load(&path).is_err());
        assert!(RlNet::load(&dir.path().join("missing.ckpt")).is_err());
    }

    #[test]
    fn checkpoint_detects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = RlNet::new(&toy_cfg("M1"), 23).unwrap();
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(RlNet::load(&path).is_err());
    }
}
