//! Metrics and the evaluation/sweep/ablation harness.

use crate::data::{synthetic_dataset, Image, RainParams, TrainSample};
use crate::error::{Error, Result};
use crate::network::{variant, AblationConfig, RlNet};
use crate::schedule::HyperState;
use crate::tensor::Tensor;
use serde::Serialize;

pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over all channels jointly, unit dynamic
/// range. Identical images hit the 100 dB cap.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("psnr", format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let n = a.len() as f64;
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Metric-side SSIM; same implementation as the loss term so there is one
/// definition in the codebase.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    let ta = Tensor::constant(a.clone().into_dyn());
    let tb = Tensor::constant(b.clone().into_dyn());
    Ok(crate::loss::ssim(&ta, &tb)?.item())
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub per_image: Vec<(String, f64, f64)>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub wall_time_s: f64,
    pub config_echo: AblationConfig,
}

impl EvalReport {
    /// Metric CSV. Wall time stays out of this file so repeated runs are
    /// byte-identical.
    pub fn csv(&self) -> String {
        let mut out = String::from("name,psnr_db,ssim\n");
        for (name, p, s) in &self.per_image {
            out.push_str(&format!("{name},{p:.10},{s:.10}\n"));
        }
        out.push_str(&format!("mean,{:.10},{:.10}\n", self.mean_psnr_db, self.mean_ssim));
        out
    }

    pub fn pretty(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24} {:>10} {:>10}\n", "image", "psnr_db", "ssim"));
        for (name, p, s) in &self.per_image {
            out.push_str(&format!("{name:<24} {p:>10.4} {s:>10.4}\n"));
        }
        out.push_str(&format!("{:<24} {:>10.4} {:>10.4}\n", "mean", self.mean_psnr_db, self.mean_ssim));
        out.push_str(&format!("wall time: {:.2}s\n", self.wall_time_s));
        out
    }
}

/// Derain every sample and score against the clean truth. `with_detector`
/// false drops the rectification at inference (the detector still trained;
/// its weights are simply not consulted for the output pathway).
pub fn evaluate(model: &RlNet, data: &[(String, TrainSample)], with_detector: bool) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let start = std::time::Instant::now();
    let mut per_image = Vec::with_capacity(data.len());
    for (name, s) in data {
        let out = model.derain_mode(&s.rainy, !with_detector)?;
        per_image.push((name.clone(), psnr(&out, &s.clean)?, ssim_metric(&out, &s.clean)?));
    }
    let n = per_image.len() as f64;
    let mean_psnr_db = per_image.iter().map(|(_, p, _)| p).sum::<f64>() / n;
    let mean_ssim = per_image.iter().map(|(_, _, s)| s).sum::<f64>() / n;
    Ok(EvalReport {
        per_image,
        mean_psnr_db,
        mean_ssim,
        wall_time_s: start.elapsed().as_secs_f64(),
        config_echo: model.cfg.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Theta1,
    Theta2,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<SweepParam> {
        match s {
            "theta1" => Ok(SweepParam::Theta1),
            "theta2" => Ok(SweepParam::Theta2),
            other => Err(Error::invalid("sweep", format!("unknown sweep parameter {other:?}"))),
        }
    }
}

/// Budget for one toy training run inside the sweep/ablation harness.
#[derive(Clone, Copy, Debug)]
pub struct ToyConfig {
    pub width: usize,
    pub size: usize,
    pub dataset_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { width: 8, size: 64, dataset_size: 4, epochs: 4, seed: 7 }
    }
}

fn toy_dataset(toy: &ToyConfig) -> Result<Vec<(String, TrainSample)>> {
    synthetic_dataset(toy.dataset_size, toy.size, &RainParams::default(), toy.seed)
}

fn toy_train(cfg: &AblationConfig, toy: &ToyConfig) -> Result<(RlNet, Vec<(String, TrainSample)>)> {
    let data = toy_dataset(toy)?;
    let model = RlNet::new(cfg, toy.seed)?;
    let mut trainer = crate::trainer::Trainer::new(model, toy.seed);
    let mut state = cfg.hyper;
    for e in 0..toy.epochs {
        state.epoch = e;
        trainer.run_epoch(&data, state, None)?;
    }
    Ok((trainer.model, data))
}

/// Train one toy full model per value and report PSNR/SSIM. Identical seeds
/// across values: the value under sweep is the only difference.
pub fn run_sweep(param: SweepParam, values: &[f64], toy: &ToyConfig) -> Result<Vec<(f64, f64, f64)>> {
    if values.is_empty() {
        return Err(Error::invalid("run_sweep", "no sweep values supplied"));
    }
    if values.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("run_sweep", "sweep values must be positive"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = variant("M7")?.with_width(toy.width);
        cfg.hyper = HyperState::default();
        match param {
            SweepParam::Theta1 => cfg.hyper.theta1 = value,
            SweepParam::Theta2 => cfg.hyper.theta2 = value,
        }
        let (model, data) = toy_train(&cfg, toy)?;
        let report = evaluate(&model, &data, true)?;
        rows.push((value, report.mean_psnr_db, report.mean_ssim));
    }
    Ok(rows)
}

/// Train each named variant under shared seeds and report PSNR/SSIM.
pub fn run_ablation(names: &[&str], toy: &ToyConfig) -> Result<Vec<(String, f64, f64)>> {
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let cfg = variant(name)?.with_width(toy.width);
        let (model, data) = toy_train(&cfg, toy)?;
        let report = evaluate(&model, &data, cfg.use_detector)?;
        rows.push((name.to_string(), report.mean_psnr_db, report.mean_ssim));
    }
    Ok(rows)
}

pub fn sweep_csv(param: SweepParam, rows: &[(f64, f64, f64)]) -> String {
    let name = match param {
        SweepParam::Theta1 => "theta1",
        SweepParam::Theta2 => "theta2",
    };
    let mut out = format!("{name},psnr_db,ssim\n");
    for (v, p, s) in rows {
        out.push_str(&format!("{v},{p:.10},{s:.10}\n"));
    }
    out
}

pub fn ablation_csv(rows: &[(String, f64, f64)]) -> String {
    let mut out = String::from("variant,psnr_db,ssim\n");
    for (name, p, s) in rows {
        out.push_str(&format!("{name},{p:.10},{s:.10}\n"));
    }
    out
}
