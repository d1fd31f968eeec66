use clap::Parser;
use rlnet::config::{parse_config, Command, RunConfig};
use rlnet::data::{load_pairs, read_png, synthetic_dataset, write_png, write_sample_dir};
use rlnet::error::{Error, Result};
use rlnet::eval::{ablation_csv, evaluate, run_ablation, run_sweep, sweep_csv, ToyConfig};
use rlnet::network::RlNet;
use rlnet::schedule::schedule_csv;
use rlnet::trainer::Trainer;
use std::path::{Path, PathBuf};

/// Single-image deraining: synthetic data, two-stage training, evaluation.
#[derive(Parser)]
#[command(name = "rlnet", version, about)]
struct Cli {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// One of: gen-data, train, derain, eval, sweep, ablate, schedule-dump.
    #[arg(long)]
    command: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Uniform shrink factor in (0, 1] for image size, width, dataset size
    /// and schedule length.
    #[arg(long)]
    desk_scale: Option<f64>,

    /// Override any config key (repeatable), e.g. --set theta1=0.1
    #[arg(long = "set")]
    sets: Vec<String>,

    /// Output directory (falls back to RLNET_OUT).
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Input file or directory, command-dependent.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = parse_config(
        cli.config.as_deref(),
        &cli.sets,
        cli.command.as_deref(),
        cli.seed,
        cli.desk_scale,
        cli.out.as_deref(),
        cli.checkpoint.as_deref(),
        cli.input.as_deref(),
    )?;
    match cfg.command {
        Command::ScheduleDump => cmd_schedule_dump(&cfg),
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Derain => cmd_derain(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
    }
}

fn write_out(cfg: &RunConfig, name: &str, contents: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir()?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn cmd_schedule_dump(cfg: &RunConfig) -> Result<()> {
    let csv = schedule_csv(cfg.desk_scale);
    if cfg.out.is_some() {
        let path = write_out(cfg, "schedule.csv", &csv)?;
        println!("wrote {}", path.display());
    } else {
        print!("{csv}");
    }
    Ok(())
}

fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir()?;
    let mut rain = cfg.rain;
    rain.seed = cfg.seed;
    let data = synthetic_dataset(cfg.dataset_size(), cfg.train_size(), &rain, cfg.seed)?;
    for (name, sample) in &data {
        write_sample_dir(sample, &dir.join(name))?;
    }
    println!("wrote {} sample dirs under {}", data.len(), dir.display());
    Ok(())
}

/// Paired data from <input>/rainy and <input>/clean, or synthetic pairs
/// when no input directory is given.
fn load_dataset(cfg: &RunConfig) -> Result<Vec<(String, rlnet::data::TrainSample)>> {
    match &cfg.input {
        Some(root) => {
            let rainy = root.join("rainy");
            let clean = root.join("clean");
            if !rainy.is_dir() || !clean.is_dir() {
                return Err(Error::Config(format!(
                    "input {} must contain rainy/ and clean/ subdirectories",
                    root.display()
                )));
            }
            load_pairs(&rainy, &clean)
        }
        None => {
            let mut rain = cfg.rain;
            rain.seed = cfg.seed;
            synthetic_dataset(cfg.dataset_size(), cfg.train_size(), &rain, cfg.seed)
        }
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let net_cfg = cfg.effective_ablation();
    let model = RlNet::new(&net_cfg, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.seed);
    let augment_to = cfg.augment.then(|| cfg.train_size());
    trainer.train_two_stage(&data, cfg.desk_scale, augment_to)?;

    let log_path = write_out(cfg, "train_log.csv", &trainer.logs_csv())?;
    let ckpt_path = match &cfg.checkpoint {
        Some(p) => p.clone(),
        None => cfg.out_dir()?.join("model.ckpt"),
    };
    trainer.model.save(&ckpt_path)?;
    println!("wrote {} and {}", log_path.display(), ckpt_path.display());
    if let Some(last) = trainer.logs.last() {
        println!("final epoch: l_all {:.6}, validation psnr {:.2} dB", last.l_all, last.psnr);
    }
    Ok(())
}

fn require_checkpoint(cfg: &RunConfig) -> Result<RlNet> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
    RlNet::load(path)
}

fn png_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|ext| {
                    let ext = ext.to_string_lossy().to_lowercase();
                    ext == "png" || ext == "jpg" || ext == "jpeg"
                })
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_derain(cfg: &RunConfig) -> Result<()> {
    let model = require_checkpoint(cfg)?;
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("derain needs --input (file or directory)".into()))?;
    let out = cfg.out_dir()?;
    std::fs::create_dir_all(out)?;
    let files = png_inputs(input)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no images found under {}", input.display())));
    }
    for file in &files {
        let img = read_png(file)?;
        let clean = model.derain(&img)?;
        let name = file.file_name().unwrap().to_string_lossy();
        write_png(&clean, &out.join(format!("derained_{name}")))?;
    }
    println!("derained {} images into {}", files.len(), out.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let model = require_checkpoint(cfg)?;
    let data = load_dataset(cfg)?;
    let with_detector = !cfg.ablation.bypass_rectification;
    let report = evaluate(&model, &data, with_detector)?;
    let path = write_out(cfg, "eval_report.csv", &report.csv())?;
    print!("{}", report.pretty());
    println!("wrote {}", path.display());
    Ok(())
}

fn toy_config(cfg: &RunConfig) -> ToyConfig {
    ToyConfig {
        width: cfg.width(),
        size: cfg.train_size(),
        dataset_size: cfg.dataset_size(),
        epochs: cfg.toy_epochs,
        seed: cfg.seed,
    }
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let rows = run_sweep(cfg.sweep_param, &cfg.sweep_values, &toy_config(cfg))?;
    let csv = sweep_csv(cfg.sweep_param, &rows);
    let path = write_out(cfg, "sweep.csv", &csv)?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let names: Vec<&str> = cfg.variants.iter().map(|s| s.as_str()).collect();
    let rows = run_ablation(&names, &toy_config(cfg))?;
    let csv = ablation_csv(&rows);
    let path = write_out(cfg, "ablation.csv", &csv)?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}
