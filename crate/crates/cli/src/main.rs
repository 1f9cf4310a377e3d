use std::error::Error;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flic_core::bitstream::{extract_roi, Container};
use flic_core::codec::inspect::visualize_latent;
use flic_core::codec::metrics::{bd_rate, ms_ssim, mse, psnr};
use flic_core::codec::spectrum::spectrum;
use flic_core::codec::{decode_image, decode_latents, encode_image, quantized_latents, DecodeMode, EncodeReport, RgbImage};
use flic_core::model::{model_id_hex, FlicConfig, FlicModel};
use flic_core::roi::{ImageRect, RoiSet};
use flic_core::training::data::{load_dataset, synthetic_dataset};
use flic_core::training::sweep::{alpha_sweep, sweep_csv, sweep_table};
use flic_core::training::{train, LossConfig, TrainConfig};

type CliResult<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "flic", version, about = "Frequency-aware quality-scalable learned image codec")]
struct Cli {
    #[command(flatten)]
    model: ModelArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Weights file; without it a fresh model is built from --preset and --seed.
    #[arg(long, global = true, env = "FLIC_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, global = true, default_value = "toy")]
    preset: String,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn load(&self) -> CliResult<FlicModel<f32>> {
        let model = match &self.model {
            Some(path) => FlicModel::load_weights(path)?,
            None => FlicModel::new(FlicConfig::preset(&self.preset)?, self.seed)?,
        };
        log::info!("model {}", model_id_hex(&model.model_id()));
        Ok(model)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Base,
    Roi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Branch {
    Low,
    High,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PPM/PNG image into a container and print its rates.
    Encode {
        input: PathBuf,
        output: PathBuf,
        /// Also write the key=value report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruct an image from a container.
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        /// x,y,w,h in pixels; repeatable, required for --mode roi.
        #[arg(long = "roi")]
        rois: Vec<ImageRect>,
    },
    /// Keep only the enhancement tiles covering the given ROIs.
    ExtractRoi {
        input: PathBuf,
        output: PathBuf,
        #[arg(long = "roi", required = true)]
        rois: Vec<ImageRect>,
    },
    /// Tile the channels of a latent branch into a grayscale mosaic.
    InspectLatents {
        /// An image (analyzed and rounded) or a container (decoded).
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value = "high")]
        branch: Branch,
    },
    /// Log-magnitude Fourier spectrum of the luma channel.
    Spectrum { input: PathBuf, output: PathBuf },
    /// Compare a reconstruction with its reference.
    Metrics { reference: PathBuf, image: PathBuf },
    /// Train one model per (lambda, alpha) and report base/full rates and PSNR.
    RdSweep(SweepArgs),
    /// Bjontegaard rate difference of curve B against curve A, in percent.
    BdRate {
        /// CSV of rate,quality rows.
        anchor: PathBuf,
        test: PathBuf,
    },
    /// Train a model and write its weights and loss trace.
    Train(TrainArgs),
    /// Serve the interactive ROI enhancement API.
    Serve {
        #[arg(long, env = "FLIC_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Sessions kept in memory before the least recently used is dropped.
        #[arg(long, default_value_t = flic_service::DEFAULT_CAPACITY)]
        capacity: usize,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory of PPM/PNG training images; synthetic images when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of synthetic images.
    #[arg(long, default_value_t = 64)]
    synthetic: usize,
}

impl DataArgs {
    fn load(&self, crop: usize, seed: u64) -> CliResult<Vec<RgbImage>> {
        Ok(match &self.data {
            Some(dir) => load_dataset(dir)?,
            None => synthetic_dataset(self.synthetic, crop, seed),
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    /// key = value training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides applied after the config file.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Validation images; none means no learning-rate decay.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for weights, checkpoints and trace.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Held-out images; synthetic ones when omitted.
    #[arg(long)]
    held_out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Write the sweep as CSV here as well.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn train_config(config: &Option<PathBuf>, overrides: &[String], seed: u64, preset: &str) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig {
        seed,
        preset: preset.to_string(),
        ..TrainConfig::default()
    };
    if let Some(path) = config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    cfg.apply_text(&overrides.join("\n"))?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_container(path: &Path) -> CliResult<Container> {
    Ok(Container::parse(&fs::read(path)?)?)
}

fn roi_set(rois: &[ImageRect]) -> CliResult<RoiSet> {
    if rois.is_empty() {
        return Err("at least one --roi x,y,w,h is required".into());
    }
    Ok(RoiSet::new(rois.to_vec())?)
}

fn read_curve(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (n, line) in fs::read_to_string(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match (fields.first().map(|f| f.parse::<f64>()), fields.get(1).map(|f| f.parse::<f64>())) {
            (Some(Ok(r)), Some(Ok(q))) => points.push((r, q)),
            _ if n == 0 => continue,
            _ => return Err(format!("{}:{}: expected rate,quality", path.display(), n + 1).into()),
        }
    }
    Ok(points)
}

fn run(cli: Cli) -> CliResult {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Encode { input, output, report } => {
            let model = cli.model.load()?;
            let (c, rep) = encode_image(&RgbImage::read(&input)?, &model)?;
            fs::write(&output, c.to_bytes()?)?;
            writeln!(out, "{rep}")?;
            if let Some(path) = report {
                fs::write(path, format!("{rep}\n"))?;
            }
        }
        Command::Decode {
            input,
            output,
            mode,
            rois,
        } => {
            let model = cli.model.load()?;
            let mode = match mode {
                Mode::Full => DecodeMode::Full,
                Mode::Base => DecodeMode::Base,
                Mode::Roi => DecodeMode::Roi(roi_set(&rois)?),
            };
            decode_image(&read_container(&input)?, &mode, &model)?.write(&output)?;
        }
        Command::ExtractRoi { input, output, rois } => {
            let model = cli.model.load()?;
            let c = extract_roi(&read_container(&input)?, &roi_set(&rois)?, &model)?;
            let rep = EncodeReport::new(&c)?;
            fs::write(&output, c.to_bytes()?)?;
            writeln!(out, "{rep}")?;
        }
        Command::InspectLatents { input, output, branch } => {
            let model = cli.model.load()?;
            let bytes = fs::read(&input)?;
            let latents = if bytes.starts_with(flic_core::bitstream::MAGIC) {
                decode_latents(&Container::parse(&bytes)?, &DecodeMode::Full, &model)?
            } else {
                quantized_latents(&RgbImage::decode(&bytes)?.to_tensor(), &model)?
            };
            let t = match branch {
                Branch::Low => &latents.low,
                Branch::High => &latents.high,
            };
            let mosaic = visualize_latent(t)?;
            writeln!(out, "channels={}\nrows={}\ncols={}", mosaic.channels.len(), mosaic.rows, mosaic.cols)?;
            if !mosaic.is_empty() {
                mosaic.plane.to_image()?.write(&output)?;
            }
        }
        Command::Spectrum { input, output } => {
            spectrum(&RgbImage::read(&input)?)?.to_image()?.write(&output)?;
        }
        Command::Metrics { reference, image } => {
            let a = RgbImage::read(&reference)?.to_tensor::<f64>();
            let b = RgbImage::read(&image)?.to_tensor::<f64>();
            writeln!(out, "mse={:.8}", mse(&a, &b)?)?;
            writeln!(out, "psnr={:.4}", psnr(&a, &b)?)?;
            writeln!(out, "ms_ssim={:.6}", ms_ssim(&a, &b)?)?;
        }
        Command::RdSweep(args) => {
            let cfg = train_config(&args.config, &args.overrides, cli.model.seed, &cli.model.preset)?;
            let train_set = args.data.load(cfg.crop, cfg.seed)?;
            let held_out = match &args.held_out {
                Some(dir) => load_dataset(dir)?,
                None => synthetic_dataset(8, cfg.crop, cfg.seed.wrapping_add(1)),
            };
            let lambdas = args.lambdas.unwrap_or_else(LossConfig::lambda_grid);
            let alphas = args.alphas.unwrap_or_else(LossConfig::alpha_grid);
            let cells = alpha_sweep(&cfg, &train_set, &held_out, &lambdas, &alphas)?;
            write!(out, "{}", sweep_table(&cells))?;
            if let Some(path) = args.csv {
                fs::write(path, sweep_csv(&cells))?;
            }
        }
        Command::BdRate { anchor, test } => {
            let r = bd_rate(&read_curve(&anchor)?, &read_curve(&test)?)?;
            writeln!(out, "bd_rate={r:.4}")?;
        }
        Command::Train(args) => {
            let cfg = train_config(&args.config, &args.overrides, cli.model.seed, &cli.model.preset)?;
            let train_set = args.data.load(cfg.crop, cfg.seed)?;
            let val = match &args.val {
                Some(dir) => load_dataset(dir)?,
                None => Vec::new(),
            };
            fs::create_dir_all(&args.out)?;
            fs::write(args.out.join("config.txt"), cfg.to_string())?;
            let outcome = train(&cfg, train_set, &val, Some(&args.out), |row| {
                log::info!("step {} loss {:.4} lr {}", row.step, row.parts.total, row.lr);
            })?;
            fs::write(args.out.join("trace.csv"), outcome.trace_csv())?;
            let n = outcome.trace.len();
            writeln!(out, "steps={n}")?;
            writeln!(out, "final_loss={:.6}", outcome.trace[n - 1].parts.total)?;
            writeln!(out, "weights={}", args.out.join("final.flcw").display())?;
        }
        Command::Serve { addr, capacity } => {
            let state = flic_service::AppState::new(cli.model.load()?, capacity);
            tokio::runtime::Runtime::new()?.block_on(flic_service::serve(addr, state))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
