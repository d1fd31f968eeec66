//! The two-stage training schedule and every hyperparameter annealing event.
//!
//! Stage 1 (90 epochs): lr 2e-4 divided by 5 at epochs 50, 65, 80; theta2
//! steps 0.05 -> 0.15 at epoch 20; lambda2 steps 0 -> 6 at epoch 30; theta1
//! stays 0 so the rectification is inert while the embedding settles.
//!
//! Stage 2 (240 epochs, fine-tuning): lr 2e-4 halved every 30 epochs; theta1
//! = 0.15 turns the detector loop on; theta2 mirrors stage 1; lambda2 runs a
//! period-30 square wave (0 on the first half of each period, 0.6 on the
//! second) and holds 0.6 from epoch 195 on.
//!
//! A desk-scale factor s in (0,1] compresses both stages: every length and
//! threshold is round(T*s) floored at 1, preserving the waveform shape at
//! CI-friendly sizes.

use crate::error::{Error, Result};
use crate::nn::Adam;
use serde::{Deserialize, Serialize};

pub const LR_INITIAL: f64 = 2e-4;
pub const STAGE1_EPOCHS: usize = 90;
pub const STAGE2_EPOCHS: usize = 240;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct HyperState {
    pub theta1: f64,
    pub theta2: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr: f64,
    pub stage: u8,
    pub epoch: usize,
}

impl Default for HyperState {
    /// Post-training values: detector loop active with the fine-tuning
    /// theta1 and the sweep-best theta2. Used when a forward pass runs
    /// outside any schedule (inference, evaluation).
    fn default() -> Self {
        HyperState {
            theta1: 0.15,
            theta2: 0.15,
            lambda: 0.01,
            lambda1: 0.6,
            lambda2: 0.6,
            lambda3: 0.6,
            lr: LR_INITIAL,
            stage: 2,
            epoch: 0,
        }
    }
}

/// round(t * scale), floored at 1 so compressed schedules keep every event.
fn scaled(t: usize, scale: f64) -> usize {
    ((t as f64 * scale).round() as usize).max(1)
}

pub fn stage1_len(scale: f64) -> usize {
    scaled(STAGE1_EPOCHS, scale)
}

pub fn stage2_len(scale: f64) -> usize {
    scaled(STAGE2_EPOCHS, scale)
}

pub fn stage1_state_scaled(epoch: usize, scale: f64) -> Result<HyperState> {
    let len = stage1_len(scale);
    if epoch >= len {
        return Err(Error::Config(format!(
            "stage-1 epoch {epoch} out of range (stage length {len})"
        )));
    }
    let divisions = [50, 65, 80]
        .iter()
        .filter(|&&t| scaled(t, scale) <= epoch)
        .count() as i32;
    Ok(HyperState {
        theta1: 0.0,
        theta2: if epoch < scaled(20, scale) { 0.05 } else { 0.15 },
        lambda: 0.01,
        lambda1: 0.6,
        lambda2: if epoch < scaled(30, scale) { 0.0 } else { 6.0 },
        lambda3: 0.6,
        lr: LR_INITIAL / 5f64.powi(divisions),
        stage: 1,
        epoch,
    })
}

pub fn stage2_state_scaled(epoch: usize, scale: f64) -> Result<HyperState> {
    let len = stage2_len(scale);
    if epoch >= len {
        return Err(Error::Config(format!(
            "stage-2 epoch {epoch} out of range (stage length {len})"
        )));
    }
    let period = scaled(30, scale);
    let half = scaled(15, scale);
    let hold_from = scaled(195, scale);
    let lambda2 = if epoch % period >= half || epoch >= hold_from {
        0.6
    } else {
        0.0
    };
    Ok(HyperState {
        theta1: 0.15,
        theta2: if epoch < scaled(20, scale) { 0.05 } else { 0.15 },
        lambda: 0.01,
        lambda1: 0.6,
        lambda2,
        lambda3: 0.6,
        lr: LR_INITIAL / 2f64.powi((epoch / period) as i32),
        stage: 2,
        epoch,
    })
}

pub fn stage1_state(epoch: usize) -> Result<HyperState> {
    stage1_state_scaled(epoch, 1.0)
}

pub fn stage2_state(epoch: usize) -> Result<HyperState> {
    stage2_state_scaled(epoch, 1.0)
}

/// Both stages back to back, in training order.
pub fn full_schedule(scale: f64) -> Vec<HyperState> {
    let mut states = Vec::new();
    for e in 0..stage1_len(scale) {
        states.push(stage1_state_scaled(e, scale).unwrap());
    }
    for e in 0..stage2_len(scale) {
        states.push(stage2_state_scaled(e, scale).unwrap());
    }
    states
}

/// Dry-run table of the whole schedule. Fixed 10-decimal formatting keeps
/// the bytes stable across platforms; this is the golden-fixture format.
pub fn schedule_csv(scale: f64) -> String {
    let mut out = String::from("epoch,stage,lr,theta1,theta2,lambda,lambda1,lambda2,lambda3\n");
    for s in full_schedule(scale) {
        out.push_str(&format!(
            "{},{},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10}\n",
            s.epoch, s.stage, s.lr, s.theta1, s.theta2, s.lambda, s.lambda1, s.lambda2, s.lambda3
        ));
    }
    out
}

/// Push a schedule state into the optimizer and the live hyper slot.
/// Idempotent: applying the same state twice changes nothing.
pub fn apply_schedule(opt: &mut Adam, current: &mut HyperState, next: HyperState) {
    opt.lr = next.lr;
    *current = next;
}
