//! Run configuration: a flat key=value file, overridden by repeatable
//! --set flags, overridden by dedicated CLI flags. Every key lives in one
//! registry so unknown keys and type errors name the offender.

use crate::data::RainParams;
use crate::error::{Error, Result};
use crate::eval::SweepParam;
use crate::network::{variant, AblationConfig};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Derain,
    Eval,
    Sweep,
    Ablate,
    ScheduleDump,
}

impl std::str::FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Command> {
        match s {
            "gen-data" => Ok(Command::GenData),
            "train" => Ok(Command::Train),
            "derain" => Ok(Command::Derain),
            "eval" => Ok(Command::Eval),
            "sweep" => Ok(Command::Sweep),
            "ablate" => Ok(Command::Ablate),
            "schedule-dump" => Ok(Command::ScheduleDump),
            other => Err(Error::Config(format!(
                "unknown command {other:?}; expected gen-data, train, derain, eval, sweep, ablate or schedule-dump"
            ))),
        }
    }
}

/// Baselines that desk_scale compresses. One knob shrinks image size,
/// channel width, dataset size and (via the scheduler) epochs together.
const BASE_TRAIN_SIZE: usize = 512;
const BASE_WIDTH: usize = 32;
const BASE_DATASET: usize = 160;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub desk_scale: f64,
    pub ablation: AblationConfig,
    pub rain: RainParams,
    pub augment: bool,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
    pub variants: Vec<String>,
    pub toy_epochs: usize,
    train_size_override: Option<usize>,
    width_override: Option<usize>,
    dataset_size_override: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::ScheduleDump,
            input: None,
            out: None,
            checkpoint: None,
            seed: 0,
            desk_scale: 1.0,
            ablation: AblationConfig::default(),
            rain: RainParams::default(),
            augment: false,
            sweep_param: SweepParam::Theta1,
            sweep_values: vec![0.05, 0.1, 0.15],
            variants: crate::network::VARIANT_NAMES.iter().map(|s| s.to_string()).collect(),
            toy_epochs: 4,
            train_size_override: None,
            width_override: None,
            dataset_size_override: None,
        }
    }
}

fn round_to_multiple(v: f64, m: usize) -> usize {
    ((v / m as f64).round() as usize) * m
}

impl RunConfig {
    /// Training image size: 512 scaled, floored at 64, multiple of 32.
    pub fn train_size(&self) -> usize {
        self.train_size_override
            .unwrap_or_else(|| round_to_multiple(BASE_TRAIN_SIZE as f64 * self.desk_scale, 32).max(64))
    }

    /// Channel width: 32 scaled, floored at 8, multiple of 4.
    pub fn width(&self) -> usize {
        self.width_override
            .unwrap_or_else(|| round_to_multiple(BASE_WIDTH as f64 * self.desk_scale, 4).max(8))
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size_override
            .unwrap_or_else(|| ((BASE_DATASET as f64 * self.desk_scale).round() as usize).max(2))
    }

    /// The ablation config with the scaled width applied (explicit
    /// base_channels overrides win).
    pub fn effective_ablation(&self) -> AblationConfig {
        let mut cfg = self.ablation.clone();
        if self.width_override.is_some() || self.ablation.block == Default::default() {
            let kernel = cfg.block.kernel_size;
            cfg.block = crate::blocks::BlockConfig::for_width(self.width());
            cfg.block.kernel_size = kernel;
        }
        cfg
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output path; pass --out or set RLNET_OUT".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.desk_scale > 0.0 && self.desk_scale <= 1.0) {
            return Err(Error::Config(format!(
                "desk_scale must be in (0, 1], got {}",
                self.desk_scale
            )));
        }
        self.rain.validate()?;
        self.effective_ablation().validate()
    }

    /// Apply one key=value pair. This is the single registry of known keys.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn bad<T>(key: &str, value: &str, ty: &str) -> Result<T> {
            Err(Error::Config(format!("key {key:?}: cannot parse {value:?} as {ty}")))
        }
        macro_rules! parse {
            ($ty:ty, $name:expr) => {
                match value.parse::<$ty>() {
                    Ok(v) => v,
                    Err(_) => return bad(key, value, $name),
                }
            };
        }
        let parse_bool = |v: &str| -> Option<bool> {
            match v {
                "true" | "1" | "yes" => Some(true),
                "false" | "0" | "no" => Some(false),
                _ => None,
            }
        };
        macro_rules! parse_flag {
            () => {
                match parse_bool(value) {
                    Some(b) => b,
                    None => return bad(key, value, "bool"),
                }
            };
        }

        match key {
            "seed" => self.seed = parse!(u64, "u64"),
            "desk_scale" => self.desk_scale = parse!(f64, "f64"),
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "augment" => self.augment = parse_flag!(),

            "use_ffrb" => self.ablation.use_ffrb = parse_flag!(),
            "use_multistream" => self.ablation.use_multistream = parse_flag!(),
            "use_embedding" => self.ablation.use_embedding = parse_flag!(),
            "use_detector" => self.ablation.use_detector = parse_flag!(),
            "use_le2" => self.ablation.use_le2 = parse_flag!(),
            "use_compensator" => self.ablation.use_compensator = parse_flag!(),
            "detach_rectification" => self.ablation.detach_rectification = parse_flag!(),
            "bypass_rectification" => self.ablation.bypass_rectification = parse_flag!(),
            "depth" => self.ablation.depth = parse!(usize, "usize"),
            "variant" => {
                let v = variant(value)?;
                self.ablation.use_ffrb = v.use_ffrb;
                self.ablation.use_multistream = v.use_multistream;
                self.ablation.use_embedding = v.use_embedding;
                self.ablation.use_detector = v.use_detector;
                self.ablation.use_le2 = v.use_le2;
                self.ablation.use_compensator = v.use_compensator;
            }

            "kernel_size" => self.ablation.block.kernel_size = parse!(usize, "usize"),
            "base_channels" | "width" => {
                let w = parse!(usize, "usize");
                self.width_override = Some(w);
                self.ablation.block = crate::blocks::BlockConfig {
                    kernel_size: self.ablation.block.kernel_size,
                    ..crate::blocks::BlockConfig::for_width(w)
                };
            }
            "gn_groups" => self.ablation.block.gn_groups = parse!(usize, "usize"),
            "se_reduction" => self.ablation.block.se_reduction = parse!(usize, "usize"),

            "theta1" => self.ablation.hyper.theta1 = parse!(f64, "f64"),
            "theta2" => self.ablation.hyper.theta2 = parse!(f64, "f64"),
            "lambda" => self.ablation.hyper.lambda = parse!(f64, "f64"),
            "lambda1" => self.ablation.hyper.lambda1 = parse!(f64, "f64"),
            "lambda2" => self.ablation.hyper.lambda2 = parse!(f64, "f64"),
            "lambda3" => self.ablation.hyper.lambda3 = parse!(f64, "f64"),
            "lr" => self.ablation.hyper.lr = parse!(f64, "f64"),

            "streak_count" => self.rain.streak_count = parse!(usize, "usize"),
            "length_min" => self.rain.length_px.0 = parse!(f64, "f64"),
            "length_max" => self.rain.length_px.1 = parse!(f64, "f64"),
            "angle_min" => self.rain.angle_deg.0 = parse!(f64, "f64"),
            "angle_max" => self.rain.angle_deg.1 = parse!(f64, "f64"),
            "width_min" => self.rain.width_px.0 = parse!(f64, "f64"),
            "width_max" => self.rain.width_px.1 = parse!(f64, "f64"),
            "intensity_min" => self.rain.intensity.0 = parse!(f64, "f64"),
            "intensity_max" => self.rain.intensity.1 = parse!(f64, "f64"),

            "train_size" => self.train_size_override = Some(parse!(usize, "usize")),
            "dataset_size" => self.dataset_size_override = Some(parse!(usize, "usize")),
            "toy_epochs" => self.toy_epochs = parse!(usize, "usize"),
            "sweep_param" => self.sweep_param = parse!(SweepParam, "theta1|theta2"),
            "sweep_values" => {
                let mut values = Vec::new();
                for part in value.split(',') {
                    match part.trim().parse::<f64>() {
                        Ok(v) => values.push(v),
                        Err(_) => return bad(key, value, "comma-separated f64 list"),
                    }
                }
                self.sweep_values = values;
            }
            "variants" => {
                self.variants = value.split(',').map(|s| s.trim().to_string()).collect();
            }
            "command" => self.command = parse!(Command, "command"),

            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Read a flat key=value file ('#' comments, blank lines skipped).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set_key(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// Resolve the full configuration: defaults, then the file, then --set
/// pairs, then dedicated flags, then the RLNET_OUT fallback.
#[allow(clippy::too_many_arguments)]
pub fn parse_config(
    file: Option<&Path>,
    sets: &[String],
    command: Option<&str>,
    seed: Option<u64>,
    desk_scale: Option<f64>,
    out: Option<&Path>,
    checkpoint: Option<&Path>,
    input: Option<&Path>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    for pair in sets {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(Error::Config(format!("--set expects key=value, got {pair:?}")));
        };
        cfg.set_key(key.trim(), value.trim())?;
    }
    if let Some(c) = command {
        cfg.command = c.parse()?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = desk_scale {
        cfg.desk_scale = d;
    }
    if let Some(o) = out {
        cfg.out = Some(o.to_path_buf());
    }
    if let Some(c) = checkpoint {
        cfg.checkpoint = Some(c.to_path_buf());
    }
    if let Some(i) = input {
        cfg.input = Some(i.to_path_buf());
    }
    if cfg.out.is_none() {
        if let Ok(env_out) = std::env::var("RLNET_OUT") {
            if !env_out.is_empty() {
                cfg.out = Some(PathBuf::from(env_out));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let mut cfg = RunConfig::default();
        let msg = cfg.set_key("theta3", "1").unwrap_err().to_string();
        assert!(msg.contains("theta3"), "{msg}");
    }

    #[test]
    fn type_errors_name_the_key_and_value() {
        let mut cfg = RunConfig::default();
        let msg = cfg.set_key("seed", "abc").unwrap_err().to_string();
        assert!(msg.contains("seed") && msg.contains("abc"), "{msg}");
        let msg = cfg.set_key("augment", "maybe").unwrap_err().to_string();
        assert!(msg.contains("bool"), "{msg}");
    }

    #[test]
    fn flags_override_sets_which_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed = 1\ndesk_scale = 0.5\n").unwrap();

        let sets = vec!["seed=2".to_string()];
        let cfg = parse_config(Some(&path), &sets, None, None, None, None, None, None).unwrap();
        assert_eq!(cfg.seed, 2, "--set beats the file");
        assert_eq!(cfg.desk_scale, 0.5, "file value survives when nothing overrides it");

        let cfg = parse_config(Some(&path), &sets, None, Some(3), None, None, None, None).unwrap();
        assert_eq!(cfg.seed, 3, "the dedicated flag beats --set");
    }

    #[test]
    fn env_output_dir_is_the_last_resort() {
        std::env::set_var("RLNET_OUT", "/tmp/rlnet-env-out");
        let cfg = parse_config(None, &[], None, None, None, None, None, None).unwrap();
        assert_eq!(cfg.out.as_deref(), Some(Path::new("/tmp/rlnet-env-out")));

        let explicit = Path::new("/tmp/rlnet-flag-out");
        let cfg =
            parse_config(None, &[], None, None, None, Some(explicit), None, None).unwrap();
        assert_eq!(cfg.out.as_deref(), Some(explicit), "--out beats the environment");
        std::env::remove_var("RLNET_OUT");
    }

    #[test]
    fn variant_key_rewrites_the_feature_flags() {
        let mut cfg = RunConfig::default();
        cfg.set_key("variant", "M3").unwrap();
        assert!(cfg.ablation.use_ffrb && cfg.ablation.use_multistream);
        assert!(!cfg.ablation.use_embedding && !cfg.ablation.use_detector);
        assert!(cfg.set_key("variant", "M0").is_err());
    }

    #[test]
    fn desk_scale_drives_size_width_and_dataset_together() {
        let mut cfg = RunConfig::default();
        assert_eq!((cfg.train_size(), cfg.width(), cfg.dataset_size()), (512, 32, 160));
        cfg.desk_scale = 0.1;
        assert_eq!((cfg.train_size(), cfg.width(), cfg.dataset_size()), (64, 8, 16));
        cfg.desk_scale = 0.25;
        assert_eq!((cfg.train_size(), cfg.width(), cfg.dataset_size()), (128, 8, 40));
    }

    #[test]
    fn explicit_overrides_beat_the_scaled_defaults() {
        let mut cfg = RunConfig::default();
        cfg.set_key("train_size", "96").unwrap();
        cfg.set_key("width", "12").unwrap();
        cfg.set_key("dataset_size", "5").unwrap();
        assert_eq!(cfg.train_size(), 96);
        assert_eq!(cfg.width(), 12);
        assert_eq!(cfg.dataset_size(), 5);
        assert_eq!(cfg.effective_ablation().block.base_channels, 12);
    }

    #[test]
    fn config_files_skip_comments_and_report_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# a comment\n\nseed = 9\ntheta1 = 0.2\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ablation.hyper.theta1, 0.2);

        std::fs::write(&path, "seed = 9\njust a stray line\n").unwrap();
        let msg = RunConfig::default().apply_file(&path).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "should point at the offending line, got {msg}");
    }

    #[test]
    fn set_pairs_must_be_key_equals_value() {
        let sets = vec!["seed".to_string()];
        let msg = parse_config(None, &sets, None, None, None, None, None, None)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("--set"), "{msg}");
    }

    #[test]
    fn desk_scale_outside_the_unit_interval_is_rejected() {
        for bad in [0.0, -0.5, 1.5] {
            assert!(parse_config(None, &[], None, None, Some(bad), None, None, None).is_err());
        }
    }

    #[test]
    fn missing_output_dir_names_both_ways_to_set_it() {
        let msg = RunConfig::default().out_dir().unwrap_err().to_string();
        assert!(msg.contains("--out") && msg.contains("RLNET_OUT"), "{msg}");
    }

    #[test]
    fn sweep_values_parse_as_a_comma_list() {
        let mut cfg = RunConfig::default();
        cfg.set_key("sweep_values", "0.05, 0.1,0.2").unwrap();
        assert_eq!(cfg.sweep_values, vec![0.05, 0.1, 0.2]);
        assert!(cfg.set_key("sweep_values", "0.05,x").is_err());
        cfg.set_key("sweep_param", "theta2").unwrap();
        assert_eq!(cfg.sweep_param, SweepParam::Theta2);
    }

    #[test]
    fn command_names_parse_and_reject_typos() {
        for (name, cmd) in [
            ("gen-data", Command::GenData),
            ("train", Command::Train),
            ("derain", Command::Derain),
            ("eval", Command::Eval),
            ("sweep", Command::Sweep),
            ("ablate", Command::Ablate),
            ("schedule-dump", Command::ScheduleDump),
        ] {
            assert_eq!(name.parse::<Command>().unwrap(), cmd);
        }
        let msg = "derian".parse::<Command>().unwrap_err().to_string();
        assert!(msg.contains("derian"), "{msg}");
    }
}
