//! Training losses: the embedding and detector terms, the compensator terms
//! with their regularizer, the full-scale residual term, the SSIM term, and
//! their weighted total. Every norm reduces by mean over all entries so the
//! loss weights stay scale-free across image sizes.

use crate::data::TrainSample;
use crate::error::{Error, Result};
use crate::feedback::{CompensatorOutput, DetectorMap, EmbeddingResidual};
use crate::network::{AblationConfig, ForwardBundle};
use crate::schedule::HyperState;
use crate::tensor::{concat, conv2d, Arr, Tensor};
use ndarray::IxDyn;
use serde::Serialize;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn mae(op: &str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.sub(b).abs().mean_all())
}

/// Mean absolute error between the half-scale embedding and the half-scale
/// residual truth.
pub fn loss_e1(embedding_half: &EmbeddingResidual, residual_truth_half: &Tensor) -> Result<Tensor> {
    mae("loss_e1", &embedding_half.data, residual_truth_half)
}

/// Detector regression loss. The target theta1 / |R - phi1| is computed with
/// the absolute difference detached (the "fixed" contract: no gradient may
/// reach the embedding through the target) and floored at theta1 so the
/// target never exceeds 1, keeping it inside the detector's sigmoid range.
pub fn loss_e2(
    detector: &DetectorMap,
    embedding_half: &EmbeddingResidual,
    residual_truth_half: &Tensor,
    theta1: f64,
) -> Result<Tensor> {
    if theta1 <= 0.0 {
        return Err(Error::Config(format!("loss_e2 needs theta1 > 0, got {theta1}")));
    }
    let diff = residual_truth_half.sub(&embedding_half.data).abs().detach();
    let target = diff.clamp(theta1, f64::INFINITY).recip().scale(theta1);
    mae("loss_e2", &detector.data, &target)
}

/// Compensator loss: per scale, MAE between the transformed residual target
/// R + theta2 * omega(R) * R and the embedding, summed over both scales.
pub fn loss_c(
    comp: &CompensatorOutput,
    residual_truth_half: &Tensor,
    residual_truth_quarter: &Tensor,
    theta2: f64,
) -> Result<Tensor> {
    let (Some(omega_half), Some(omega_quarter)) = (&comp.omega_half, &comp.omega_quarter) else {
        return Err(Error::invalid(
            "loss_c",
            "compensator output is inference-mode (no omega fields)",
        ));
    };
    let term = |truth: &Tensor, omega: &Tensor, emb: &EmbeddingResidual| -> Result<Tensor> {
        let target = truth.add(&omega.mul(truth).scale(theta2));
        mae("loss_c", &target, &emb.data)
    };
    let half = term(residual_truth_half, omega_half, &comp.embedding_half)?;
    let quarter = term(residual_truth_quarter, omega_quarter, &comp.embedding_quarter)?;
    Ok(half.add(&quarter))
}

/// Regularizer on the transformation fields: mean squared omega per scale,
/// summed over scales.
pub fn loss_p(comp: &CompensatorOutput) -> Result<Tensor> {
    let (Some(omega_half), Some(omega_quarter)) = (&comp.omega_half, &comp.omega_quarter) else {
        return Err(Error::invalid(
            "loss_p",
            "compensator output is inference-mode (no omega fields)",
        ));
    };
    Ok(omega_half
        .square()
        .mean_all()
        .add(&omega_quarter.square().mean_all()))
}

/// Full-scale residual loss.
pub fn loss_f(residual_final: &Tensor, residual_truth: &Tensor) -> Result<Tensor> {
    mae("loss_f", residual_final, residual_truth)
}

fn gaussian_window() -> Arr {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let di = i as f64 - half;
            let dj = j as f64 - half;
            w.push((-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    Arr::from_shape_vec(IxDyn(&[1, 1, SSIM_WINDOW, SSIM_WINDOW]), w).unwrap()
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), valid
/// (unpadded) windowing, computed per channel and averaged. Differentiable
/// through both arguments.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let sa = a.shape();
    if sa != b.shape() {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", sa, b.shape())));
    }
    if sa.len() != 3 {
        return Err(Error::invalid("ssim", format!("expected (C,H,W), got {sa:?}")));
    }
    if sa[1] < SSIM_WINDOW || sa[2] < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("{}x{} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", sa[1], sa[2]),
        ));
    }
    let w = Tensor::constant(gaussian_window());
    let blur = |x: &Tensor| conv2d(x, &w, None, 1, 0);
    let mut maps = Vec::with_capacity(sa[0]);
    for c in 0..sa[0] {
        let ac = a.narrow(0, c, 1);
        let bc = b.narrow(0, c, 1);
        let mu_a = blur(&ac);
        let mu_b = blur(&bc);
        let var_a = blur(&ac.square()).sub(&mu_a.square());
        let var_b = blur(&bc.square()).sub(&mu_b.square());
        let cov = blur(&ac.mul(&bc)).sub(&mu_a.mul(&mu_b));
        let num = mu_a
            .mul(&mu_b)
            .scale(2.0)
            .add_scalar(SSIM_C1)
            .mul(&cov.scale(2.0).add_scalar(SSIM_C2));
        let den = mu_a
            .square()
            .add(&mu_b.square())
            .add_scalar(SSIM_C1)
            .mul(&var_a.add(&var_b).add_scalar(SSIM_C2));
        maps.push(num.div(&den));
    }
    Ok(concat(0, &maps).mean_all())
}

/// Structural term of the total loss: negative SSIM between the clean truth
/// and the clamped reconstruction rainy - residual.
pub fn loss_ssim(clean_truth: &Tensor, rainy: &Tensor, residual_final: &Tensor) -> Result<Tensor> {
    let recon = rainy.sub(residual_final).clamp(0.0, 1.0);
    Ok(ssim(clean_truth, &recon)?.neg())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LossBreakdown {
    pub l_e1: f64,
    pub l_e2: f64,
    pub l_c: f64,
    pub l_p: f64,
    pub l_f: f64,
    pub l_ssim: f64,
    pub l_all: f64,
    pub weights: HyperState,
}

impl LossBreakdown {
    /// Recompute the weighted total from the stored parts; the stored l_all
    /// must match this to 1e-6 relative.
    pub fn recombined(&self) -> f64 {
        let w = &self.weights;
        self.l_f
            + self.l_ssim
            + w.lambda * self.l_p
            + w.lambda1 * self.l_e1
            + w.lambda2 * self.l_e2
            + w.lambda3 * self.l_c
    }
}

/// Weighted total over all active terms. Terms whose module is ablated away
/// contribute exactly zero; a bundle missing a field that the config marks
/// active is a contract error. The detector term also needs theta1 > 0 (in
/// schedule stage 1 theta1 is 0 and the term stays off even when lambda2 is
/// nonzero).
pub fn loss_all(
    bundle: &ForwardBundle,
    sample: &TrainSample,
    hp: &HyperState,
    cfg: &AblationConfig,
) -> Result<(Tensor, LossBreakdown)> {
    let truth_full = Tensor::constant(sample.residual.clone().into_dyn());
    let truth_half = Tensor::constant(sample.residual_half.clone().into_dyn());
    let truth_quarter = Tensor::constant(sample.residual_quarter.clone().into_dyn());
    let clean = Tensor::constant(sample.clean.clone().into_dyn());
    let rainy = Tensor::constant(sample.rainy.clone().into_dyn());

    let l_f = loss_f(&bundle.residual_raw, &truth_full)?;
    let l_ssim = loss_ssim(&clean, &rainy, &bundle.residual_raw)?;
    let mut total = l_f.add(&l_ssim);

    let mut bd = LossBreakdown {
        l_e1: 0.0,
        l_e2: 0.0,
        l_c: 0.0,
        l_p: 0.0,
        l_f: l_f.item(),
        l_ssim: l_ssim.item(),
        l_all: 0.0,
        weights: *hp,
    };

    if cfg.use_embedding {
        let emb = bundle.embedding_half.as_ref().ok_or_else(|| {
            Error::invalid("loss_all", "use_embedding is set but the bundle has no embedding_half")
        })?;
        let l_e1 = loss_e1(emb, &truth_half)?;
        bd.l_e1 = l_e1.item();
        total = total.add(&l_e1.scale(hp.lambda1));

        if cfg.use_le2 && hp.theta1 > 0.0 {
            let det = bundle.detector.as_ref().ok_or_else(|| {
                Error::invalid("loss_all", "use_le2 is set but the bundle has no detector map")
            })?;
            let l_e2 = loss_e2(det, emb, &truth_half, hp.theta1)?;
            bd.l_e2 = l_e2.item();
            total = total.add(&l_e2.scale(hp.lambda2));
        }
    }

    if cfg.use_compensator {
        let comp = bundle.compensator.as_ref().ok_or_else(|| {
            Error::invalid("loss_all", "use_compensator is set but the bundle has no compensator output")
        })?;
        let l_c = loss_c(comp, &truth_half, &truth_quarter, hp.theta2)?;
        let l_p = loss_p(comp)?;
        bd.l_c = l_c.item();
        bd.l_p = l_p.item();
        total = total.add(&l_c.scale(hp.lambda3)).add(&l_p.scale(hp.lambda));
    }

    bd.l_all = total.item();
    Ok((total, bd))
}
