//! The closed-loop feedback mechanisms: an error detector that predicts
//! truncated reciprocals of the embedding's absolute error and rectifies the
//! embedding in place, and a feature compensator that learns transformed
//! residual targets at quarter and half scale for injection into the trunk.

use crate::blocks::{BlockConfig, CoreBlock, Ffrb, InjectChannels, UFfrb};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, NamedParams};
use crate::tensor::{concat, Tensor};
use rand_chacha::ChaCha8Rng;

/// Smallest detector value used as a divisor; sigmoid outputs cannot reach 0
/// mathematically but can underflow in finite precision.
pub const DETECTOR_FLOOR: f64 = 1e-4;

/// Down-scaled residual prediction, entries nominally in [0,1].
#[derive(Clone)]
pub struct EmbeddingResidual {
    pub data: Tensor,
    pub scale: f64,
}

/// Detector output, entries strictly inside (0,1).
#[derive(Clone)]
pub struct DetectorMap {
    pub data: Tensor,
    pub scale: f64,
}

/// Reconstructed absolute error, entries >= 0.
#[derive(Clone)]
pub struct ErrorMap {
    pub data: Tensor,
    pub scale: f64,
}

/// err = theta1 / d - theta1, with d floored before division. Strictly
/// decreasing in d; zero exactly at d = 1.
pub fn error_from_detector(d: &DetectorMap, theta1: f64) -> Result<ErrorMap> {
    if theta1 <= 0.0 {
        return Err(Error::Config(format!(
            "error_from_detector needs theta1 > 0, got {theta1}"
        )));
    }
    let floored = d.data.clamp(DETECTOR_FLOOR, 1.0);
    let err = floored.recip().scale(theta1).add_scalar(-theta1);
    Ok(ErrorMap { data: err, scale: d.scale })
}

/// phi1' = phi1 - err * (1 - 2*phi1). The coefficient vanishes at phi1 = 0.5,
/// pushes values below 0.5 down and values above 0.5 up. The result is not
/// re-clamped; downstream layers absorb excursions outside [0,1].
pub fn rectify(embedding: &EmbeddingResidual, err: &ErrorMap) -> Result<EmbeddingResidual> {
    if embedding.data.shape() != err.data.shape() {
        return Err(Error::shape(
            "rectify",
            format!("embedding {:?} vs error {:?}", embedding.data.shape(), err.data.shape()),
        ));
    }
    let coeff = embedding.data.scale(-2.0).add_scalar(1.0);
    let rectified = embedding.data.sub(&err.data.mul(&coeff));
    Ok(EmbeddingResidual { data: rectified, scale: embedding.scale })
}

/// Two-branch error detector on the half-scale plane. The rainy half-scale
/// image and the embedding are fused by channel concatenation; one branch is
/// a plain FFRB, the other a depth-1 U-FFRB for wider context; a final
/// sigmoid convolution maps back to the embedding's three channels.
pub struct DetectorNet {
    conv_in: Conv2d,
    branch_local: Ffrb,
    branch_context: UFfrb,
    conv_out: Conv2d,
}

impl DetectorNet {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &BlockConfig) -> Result<DetectorNet> {
        cfg.validate()?;
        let c = cfg.base_channels;
        Ok(DetectorNet {
            conv_in: Conv2d::new(rng, 6, c, 3, 1),
            branch_local: Ffrb::new(rng, c, cfg.kernel_size, cfg.gn_groups, cfg.se_reduction)?,
            branch_context: UFfrb::new(rng, cfg, 1, true, InjectChannels::default())?,
            conv_out: Conv2d::new(rng, 2 * c, 3, 3, 1),
        })
    }

    pub fn forward(&self, rainy_half: &Tensor, embedding: &EmbeddingResidual) -> Result<DetectorMap> {
        if embedding.scale != 0.5 {
            return Err(Error::invalid(
                "detector_forward",
                format!("embedding must be at scale 0.5, got {}", embedding.scale),
            ));
        }
        if rainy_half.shape() != embedding.data.shape() {
            return Err(Error::shape(
                "detector_forward",
                format!(
                    "rainy_half {:?} vs embedding {:?}",
                    rainy_half.shape(),
                    embedding.data.shape()
                ),
            ));
        }
        let fused = concat(0, &[rainy_half.clone(), embedding.data.clone()]);
        let h = self.conv_in.forward(&fused).relu();
        let local = self.branch_local.forward(&h);
        let context = self.branch_context.forward(&h, None, None)?;
        let d = self.conv_out.forward(&concat(0, &[local, context])).sigmoid();
        Ok(DetectorMap { data: d, scale: 0.5 })
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        self.conv_in.params(&format!("{prefix}.conv_in"), out);
        self.branch_local.params(&format!("{prefix}.local"), out);
        self.branch_context.params(&format!("{prefix}.context"), out);
        self.conv_out.params(&format!("{prefix}.conv_out"), out);
    }
}

/// Compensator outputs: residual embeddings at both scales, plus the learned
/// transformation fields when residual truths were supplied (training mode).
pub struct CompensatorOutput {
    pub embedding_half: EmbeddingResidual,
    pub embedding_quarter: EmbeddingResidual,
    pub omega_half: Option<Tensor>,
    pub omega_quarter: Option<Tensor>,
}

impl CompensatorOutput {
    pub fn is_training_mode(&self) -> bool {
        self.omega_half.is_some()
    }
}

/// Small transformation net on a residual truth; linear output so omega can
/// take either sign and the regularizer decides its magnitude.
struct OmegaNet {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl OmegaNet {
    fn new(rng: &mut ChaCha8Rng, width: usize) -> OmegaNet {
        OmegaNet {
            conv1: Conv2d::new(rng, 3, width, 3, 1),
            conv2: Conv2d::new(rng, width, 3, 3, 1),
        }
    }

    fn forward(&self, residual: &Tensor) -> Tensor {
        self.conv2.forward(&self.conv1.forward(residual).relu())
    }

    fn params(&self, prefix: &str, out: &mut NamedParams) {
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
    }
}

/// Encoder-decoder branch over the rainy image producing sigmoid-bounded
/// residual embeddings at quarter scale (encoder bottom) and half scale
/// (decoder), plus per-scale omega transformation nets used only in training.
pub struct CompensatorNet {
    conv_in: Conv2d,
    block_full: CoreBlock,
    down1: Conv2d,
    block_half: CoreBlock,
    down2: Conv2d,
    block_quarter: CoreBlock,
    head_quarter: Conv2d,
    up: Conv2d,
    fuse: Conv2d,
    block_dec: CoreBlock,
    head_half: Conv2d,
    omega_half: OmegaNet,
    omega_quarter: OmegaNet,
}

impl CompensatorNet {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &BlockConfig, use_ffrb: bool) -> Result<CompensatorNet> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let (k, g, r) = (cfg.kernel_size, cfg.gn_groups, cfg.se_reduction);
        Ok(CompensatorNet {
            conv_in: Conv2d::new(rng, 3, c, 3, 1),
            block_full: CoreBlock::new(rng, use_ffrb, c, k, g, r)?,
            down1: Conv2d::new(rng, c, c, 3, 2),
            block_half: CoreBlock::new(rng, use_ffrb, c, k, g, r)?,
            down2: Conv2d::new(rng, c, c, 3, 2),
            block_quarter: CoreBlock::new(rng, use_ffrb, c, k, g, r)?,
            head_quarter: Conv2d::new(rng, c, 3, 3, 1),
            up: Conv2d::new(rng, c, c, 3, 1),
            fuse: Conv2d::new(rng, 2 * c, c, 1, 1),
            block_dec: CoreBlock::new(rng, use_ffrb, c, k, g, r)?,
            head_half: Conv2d::new(rng, c, 3, 3, 1),
            omega_half: OmegaNet::new(rng, c),
            omega_quarter: OmegaNet::new(rng, c),
        })
    }

    /// Residual truths must be supplied together (training) or not at all
    /// (inference); supplying only one is a contract violation.
    pub fn forward(
        &self,
        rainy: &Tensor,
        truth_half: Option<&Tensor>,
        truth_quarter: Option<&Tensor>,
    ) -> Result<CompensatorOutput> {
        if truth_half.is_some() != truth_quarter.is_some() {
            return Err(Error::invalid(
                "compensator_forward",
                "residual truths must be supplied together or not at all",
            ));
        }
        let h = self.conv_in.forward(rainy).relu();
        let full = self.block_full.forward(&h);
        let half = self.block_half.forward(&self.down1.forward(&full).relu());
        let quarter = self.block_quarter.forward(&self.down2.forward(&half).relu());
        let emb_quarter = self.head_quarter.forward(&quarter).sigmoid();
        let up = self.up.forward(&quarter.upsample_nearest(2)).relu();
        let dec = self
            .block_dec
            .forward(&self.fuse.forward(&concat(0, &[up, half])).relu());
        let emb_half = self.head_half.forward(&dec).sigmoid();

        let (omega_half, omega_quarter) = match (truth_half, truth_quarter) {
            (Some(th), Some(tq)) => (
                Some(self.omega_half.forward(th)),
                Some(self.omega_quarter.forward(tq)),
            ),
            _ => (None, None),
        };

        Ok(CompensatorOutput {
            embedding_half: EmbeddingResidual { data: emb_half, scale: 0.5 },
            embedding_quarter: EmbeddingResidual { data: emb_quarter, scale: 0.25 },
            omega_half,
            omega_quarter,
        })
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        self.conv_in.params(&format!("{prefix}.conv_in"), out);
        self.block_full.params(&format!("{prefix}.full"), out);
        self.down1.params(&format!("{prefix}.down1"), out);
        self.block_half.params(&format!("{prefix}.half"), out);
        self.down2.params(&format!("{prefix}.down2"), out);
        self.block_quarter.params(&format!("{prefix}.quarter"), out);
        self.head_quarter.params(&format!("{prefix}.head_quarter"), out);
        self.up.params(&format!("{prefix}.up"), out);
        self.fuse.params(&format!("{prefix}.fuse"), out);
        self.block_dec.params(&format!("{prefix}.dec"), out);
        self.head_half.params(&format!("{prefix}.head_half"), out);
        self.omega_half.params(&format!("{prefix}.omega_half"), out);
        self.omega_quarter.params(&format!("{prefix}.omega_quarter"), out);
    }
}
