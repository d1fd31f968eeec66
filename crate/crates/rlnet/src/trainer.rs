//! Training loop: batch-size-1 Adam steps over a sample list, one schedule
//! state per epoch, per-epoch loss/PSNR logging.

use crate::data::{augment, Image, TrainSample};
use crate::error::Result;
use crate::eval::psnr;
use crate::loss::{loss_all, LossBreakdown};
use crate::network::RlNet;
use crate::nn::Adam;
use crate::schedule::{self, HyperState};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub lambda2: f64,
    pub l_e1: f64,
    pub l_e2: f64,
    pub l_c: f64,
    pub l_p: f64,
    pub l_f: f64,
    pub l_ssim: f64,
    pub l_all: f64,
    pub psnr: f64,
}

pub struct Trainer {
    pub model: RlNet,
    pub opt: Adam,
    pub hyper: HyperState,
    pub logs: Vec<EpochLog>,
    seed: u64,
}

impl Trainer {
    pub fn new(model: RlNet, seed: u64) -> Trainer {
        let opt = Adam::new(model.params(), model.cfg.hyper.lr);
        let hyper = model.cfg.hyper;
        Trainer { model, opt, hyper, logs: Vec::new(), seed }
    }

    /// Move to a schedule state: optimizer lr, live weights, and the theta1
    /// the forward pass reads for rectification.
    pub fn apply(&mut self, state: HyperState) {
        schedule::apply_schedule(&mut self.opt, &mut self.hyper, state);
        self.model.cfg.hyper = state;
    }

    /// One forward/backward/update on a single sample.
    pub fn train_step(&mut self, sample: &TrainSample) -> Result<LossBreakdown> {
        let rainy = Tensor::constant(sample.rainy.clone().into_dyn());
        let half = Tensor::constant(sample.residual_half.clone().into_dyn());
        let quarter = Tensor::constant(sample.residual_quarter.clone().into_dyn());
        let truths = if self.model.cfg.use_compensator {
            Some((&half, &quarter))
        } else {
            None
        };
        let bundle = self.model.forward(&rainy, truths)?;
        let (total, breakdown) = loss_all(&bundle, sample, &self.hyper, &self.model.cfg)?;
        self.opt.zero_grad();
        total.backward();
        self.opt.step();
        Ok(breakdown)
    }

    /// One pass over the dataset in a seed-deterministic shuffled order,
    /// followed by a validation PSNR pass. `augment_to` re-draws the flip
    /// and resizes to the given size each epoch; None trains on the samples
    /// as they are.
    pub fn run_epoch(
        &mut self,
        data: &[(String, TrainSample)],
        state: HyperState,
        augment_to: Option<usize>,
    ) -> Result<EpochLog> {
        self.apply(state);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = crate::nn::seeded_rng(
            self.seed ^ (state.epoch as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ ((state.stage as u64) << 56),
        );
        order.shuffle(&mut rng);

        let mut acc = [0.0f64; 7];
        for (step, &i) in order.iter().enumerate() {
            let sample = match augment_to {
                Some(size) => augment(&data[i].1, self.seed ^ ((state.epoch as u64) << 24) ^ (step as u64), size)?,
                None => data[i].1.clone(),
            };
            let bd = self.train_step(&sample)?;
            for (slot, v) in acc.iter_mut().zip([bd.l_e1, bd.l_e2, bd.l_c, bd.l_p, bd.l_f, bd.l_ssim, bd.l_all]) {
                *slot += v;
            }
        }
        let n = data.len().max(1) as f64;

        let psnr = self.validation_psnr(data)?;
        let log = EpochLog {
            epoch: state.epoch,
            stage: state.stage,
            lr: state.lr,
            theta1: state.theta1,
            theta2: state.theta2,
            lambda2: state.lambda2,
            l_e1: acc[0] / n,
            l_e2: acc[1] / n,
            l_c: acc[2] / n,
            l_p: acc[3] / n,
            l_f: acc[4] / n,
            l_ssim: acc[5] / n,
            l_all: acc[6] / n,
            psnr,
        };
        self.logs.push(log);
        Ok(log)
    }

    pub fn validation_psnr(&self, data: &[(String, TrainSample)]) -> Result<f64> {
        let mut total = 0.0;
        for (_, s) in data {
            let derained = self.model.derain(&s.rainy)?;
            total += psnr(&derained, &s.clean)?;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// The full two-stage schedule, desk-scaled.
    pub fn train_two_stage(
        &mut self,
        data: &[(String, TrainSample)],
        desk_scale: f64,
        augment_to: Option<usize>,
    ) -> Result<()> {
        for e in 0..schedule::stage1_len(desk_scale) {
            let state = schedule::stage1_state_scaled(e, desk_scale)?;
            self.run_epoch(data, state, augment_to)?;
        }
        for e in 0..schedule::stage2_len(desk_scale) {
            let state = schedule::stage2_state_scaled(e, desk_scale)?;
            self.run_epoch(data, state, augment_to)?;
        }
        Ok(())
    }

    /// Per-epoch CSV: schedule values, mean loss terms, validation PSNR.
    pub fn logs_csv(&self) -> String {
        let mut out = String::from(
            "epoch,stage,lr,theta1,theta2,lambda2,l_e1,l_e2,l_c,l_p,l_f,l_ssim,l_all,psnr\n",
        );
        for l in &self.logs {
            out.push_str(&format!(
                "{},{},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10}\n",
                l.epoch, l.stage, l.lr, l.theta1, l.theta2, l.lambda2, l.l_e1, l.l_e2, l.l_c,
                l.l_p, l.l_f, l.l_ssim, l.l_all, l.psnr
            ));
        }
        out
    }
}

/// PSNR of the rainy inputs against their clean truths: the no-op baseline a
/// trained model must beat.
pub fn rainy_baseline_psnr(data: &[(String, TrainSample)]) -> Result<f64> {
    let mut total = 0.0;
    for (_, s) in data {
        total += psnr(&s.rainy, &s.clean)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Mean PSNR of model outputs against clean truths.
pub fn derained_psnr(model: &RlNet, data: &[(String, TrainSample)]) -> Result<f64> {
    let mut total = 0.0;
    for (_, s) in data {
        let out: Image = model.derain(&s.rainy)?;
        total += psnr(&out, &s.clean)?;
    }
    Ok(total / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_rain, synthetic_dataset, RainParams};
    use crate::network::{variant, RlNet};
    use ndarray::Array3;

    fn toy_trainer(name: &str, seed: u64) -> Trainer {
        let cfg = variant(name).unwrap().with_width(8);
        Trainer::new(RlNet::new(&cfg, seed).unwrap(), seed)
    }

    fn toy_data(count: usize, size: usize, seed: u64) -> Vec<(String, TrainSample)> {
        synthetic_dataset(count, size, &RainParams::default(), seed).unwrap()
    }

    fn warm_state(lr: f64) -> HyperState {
        HyperState { lr, ..HyperState::default() }
    }

    #[test]
    fn repeated_steps_on_one_sample_reduce_the_loss() {
        let mut t = toy_trainer("M7", 31);
        t.apply(warm_state(1e-3));
        let sample = toy_data(1, 32, 32).remove(0).1;
        let first = t.train_step(&sample).unwrap().l_all;
        let mut last = first;
        for _ in 0..11 {
            last = t.train_step(&sample).unwrap().l_all;
        }
        assert!(
            last < first,
            "loss should fall while overfitting one sample: {first} -> {last}"
        );
    }

    #[test]
    fn apply_propagates_the_schedule_state_everywhere() {
        let mut t = toy_trainer("M7", 33);
        let state = schedule::stage1_state_scaled(25, 1.0).unwrap();
        t.apply(state);
        assert_eq!(t.opt.lr, state.lr);
        assert_eq!(t.hyper, state);
        assert_eq!(t.model.cfg.hyper, state);
    }

    #[test]
    fn epoch_logs_echo_the_schedule_and_average_the_losses() {
        let mut t = toy_trainer("M6", 34);
        let data = toy_data(2, 32, 35);
        let state = schedule::stage1_state_scaled(0, 1.0).unwrap();
        let log = t.run_epoch(&data, state, None).unwrap();
        assert_eq!(log.epoch, 0);
        assert_eq!(log.stage, 1);
        assert_eq!(log.lr, state.lr);
        assert_eq!(log.theta1, state.theta1);
        assert_eq!(log.theta2, state.theta2);
        assert_eq!(log.lambda2, state.lambda2);
        assert!(log.l_all.is_finite() && log.l_all > 0.0);
        assert!(log.l_f > 0.0);
        assert!(log.psnr.is_finite());
        assert_eq!(t.logs.len(), 1);
    }

    #[test]
    fn same_seed_runs_produce_identical_logs() {
        let data = toy_data(4, 32, 36);
        let state = schedule::stage2_state_scaled(0, 0.05).unwrap();
        let mut a = toy_trainer("M5", 37);
        let mut b = toy_trainer("M5", 37);
        a.run_epoch(&data, state, Some(32)).unwrap();
        b.run_epoch(&data, state, Some(32)).unwrap();
        assert_eq!(a.logs_csv(), b.logs_csv());
    }

    #[test]
    fn logs_csv_has_a_header_and_one_row_per_epoch() {
        let mut t = toy_trainer("M1", 38);
        let data = toy_data(1, 32, 39);
        for e in 0..2 {
            let state = schedule::stage1_state_scaled(e, 0.05).unwrap();
            t.run_epoch(&data, state, None).unwrap();
        }
        let csv = t.logs_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "epoch,stage,lr,theta1,theta2,lambda2,l_e1,l_e2,l_c,l_p,l_f,l_ssim,l_all,psnr"
        );
        assert!(lines[1].starts_with("0,1,"));
        assert!(lines[2].starts_with("1,1,"));
    }

    #[test]
    fn baseline_psnr_is_capped_when_no_rain_was_added() {
        let clean = Array3::from_elem((3, 32, 32), 0.5);
        let mut p = RainParams::default();
        p.streak_count = 0;
        let s = synthesize_rain(&clean, &p).unwrap();
        let data = vec![("calm".to_string(), s)];
        assert_eq!(rainy_baseline_psnr(&data).unwrap(), crate::eval::PSNR_CAP_DB);
    }

    #[test]
    fn derained_psnr_matches_a_manual_pass() {
        let t = toy_trainer("M2", 40);
        let data = toy_data(2, 32, 41);
        let by_fn = derained_psnr(&t.model, &data).unwrap();
        let mut manual = 0.0;
        for (_, s) in &data {
            manual += psnr(&t.model.derain(&s.rainy).unwrap(), &s.clean).unwrap();
        }
        assert!((by_fn - manual / 2.0).abs() < 1e-12);
    }
}
