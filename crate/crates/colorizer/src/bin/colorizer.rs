use clap::{Parser, Subcommand, ValueEnum};
use colorizer::colorspace::{lab_to_rgb, rgb_to_lab, LabImage, Rgb8Image};
use colorizer::error::{Error, Result};
use colorizer::eval::{colorize, eval_report, ColorizeOptions};
use colorizer::model::load_checkpoint;
use colorizer::nn::check_all_kernels;
use colorizer::quantizer::DecodeMethod;
use colorizer::trainer::{decode_image_file, train, TrainConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "colorizer", version, about = "Automatic grayscale image colorizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of color images
    Train {
        /// Flat key = value config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training image directory (overrides the config file)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for checkpoints and logs (overrides the config file)
        #[arg(long)]
        out: Option<PathBuf>,
        /// RNG seed (overrides the config file)
        #[arg(long)]
        seed: Option<u64>,
        /// Number of epochs (overrides the config file)
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Colorize one or more images with a trained checkpoint
    Colorize {
        #[arg(long)]
        model: PathBuf,
        /// Input images
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Distribution decode method (classification checkpoints)
        #[arg(long, value_enum, default_value_t = DecodeArg::Anneal)]
        decode: DecodeArg,
        /// Annealed-mean temperature
        #[arg(long)]
        temp: Option<f32>,
        /// Chroma multiplier applied to the predicted ab planes
        #[arg(long, default_value_t = 1.0)]
        saturation: f32,
    },
    /// Compare colorized outputs against ground truth
    Eval {
        /// Directory of predictions
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth images (matched by filename)
        #[arg(long)]
        truth: PathBuf,
        /// CSV report path
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert an image between RGB and a Lab-encoded PNG
    Convert {
        #[arg(long, value_enum)]
        to: ConvertTarget,
        input: PathBuf,
        output: PathBuf,
    },
    /// Run the layer-kernel gradient checker suite
    Gradcheck,
    /// Print a checkpoint's version, config, and tensor shapes
    Inspect { checkpoint: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Mode,
    Anneal,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvertTarget {
    Lab,
    Rgb,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            data,
            out,
            seed,
            epochs,
        } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::from_file(&path)?,
                None => TrainConfig::default(),
            };
            if let Some(data) = data {
                cfg.data_dir = data;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(epochs) = epochs {
                cfg.epochs = epochs;
            }
            if cfg.data_dir.as_os_str().is_empty() {
                return Err(Error::Config(
                    "no data directory (set data_dir in the config file or pass --data)".into(),
                ));
            }
            if cfg.out_dir.as_os_str().is_empty() {
                return Err(Error::Config(
                    "no output directory (set out_dir in the config file or pass --out)".into(),
                ));
            }
            let outcome = train(&cfg)?;
            println!("wrote {}", outcome.final_checkpoint.display());
            Ok(())
        }
        Command::Colorize {
            model,
            inputs,
            out,
            decode,
            temp,
            saturation,
        } => {
            let opts = ColorizeOptions {
                decode: match decode {
                    DecodeArg::Mode => DecodeMethod::Mode,
                    DecodeArg::Anneal => DecodeMethod::AnnealedMean,
                },
                temperature: temp.unwrap_or(ColorizeOptions::default().temperature),
                saturation,
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let threads: usize = std::env::var("COLORIZER_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or_else(|| {
                    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
                })
                .max(1)
                .min(inputs.len().max(1));
            if threads <= 1 {
                let (mut net, grid) = load_checkpoint(&model)?;
                for input in &inputs {
                    colorize_one(&mut net, grid.as_ref(), input, &out, &opts)?;
                }
                return Ok(());
            }
            let chunk = inputs.len().div_ceil(threads);
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for part in inputs.chunks(chunk) {
                    let (model, out) = (&model, &out);
                    let opts = &opts;
                    handles.push(scope.spawn(move || -> Result<()> {
                        let (mut net, grid) = load_checkpoint(model)?;
                        for input in part {
                            colorize_one(&mut net, grid.as_ref(), input, out, opts)?;
                        }
                        Ok(())
                    }));
                }
                for handle in handles {
                    handle.join().expect("worker panicked")?;
                }
                Ok(())
            })
        }
        Command::Eval { pred, truth, out } => {
            let report = eval_report(&pred, &truth)?;
            std::fs::write(&out, report.to_csv()).map_err(|e| Error::io(&out, e))?;
            println!(
                "{} pairs; mean psnr {:.2} dB, mean ab mae {:.3}",
                report.rows.len(),
                report.aggregate.psnr_db,
                report.aggregate.ab_mae
            );
            Ok(())
        }
        Command::Convert { to, input, output } => {
            let img = decode_image_file(&input)?;
            let converted = match to {
                ConvertTarget::Lab => encode_lab_png(&img),
                ConvertTarget::Rgb => decode_lab_png(&img),
            };
            save_png(&converted, &output)
        }
        Command::Gradcheck => {
            let reports = check_all_kernels();
            let mut ok = true;
            for r in &reports {
                let pass = r.max_rel_error < 1e-3;
                ok &= pass;
                println!(
                    "{:<40} max rel error {:.3e}  {}",
                    r.name,
                    r.max_rel_error,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            if ok {
                Ok(())
            } else {
                Err(Error::Config("gradient check failed".into()))
            }
        }
        Command::Inspect { checkpoint } => {
            let (net, grid) = load_checkpoint(&checkpoint)?;
            println!("version: {}", colorizer::model::CHECKPOINT_VERSION);
            println!(
                "config: {}",
                serde_json::to_string(&net.config).expect("config serializes")
            );
            match &grid {
                Some(g) => println!("bin grid: {} in-gamut bins, bin size {}", g.q(), g.bin_size),
                None => println!("bin grid: none"),
            }
            for (name, tensor) in net.named_tensors() {
                let (n, c, h, w) = tensor.shape();
                println!("{name:<24} [{n}, {c}, {h}, {w}]");
            }
            Ok(())
        }
    }
}

fn colorize_one(
    net: &mut colorizer::model::Network,
    grid: Option<&colorizer::quantizer::ColorBinGrid>,
    input: &Path,
    out_dir: &Path,
    opts: &ColorizeOptions,
) -> Result<()> {
    let img = decode_image_file(input)?;
    let colored = colorize(net, grid, &img, opts)?;
    let name = input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad input filename {}", input.display())))?;
    let dest = out_dir.join(format!("{name}.png"));
    save_png(&colored, &dest)?;
    println!("wrote {}", dest.display());
    Ok(())
}

fn save_png(img: &Rgb8Image, path: &Path) -> Result<()> {
    image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("buffer sized by construction")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.into(),
            source: e,
        })
}

/// Pack Lab planes into PNG channels: L scaled by 255/100, a and b offset
/// by 128. Lossy to 8 bits per channel, like any PNG round trip.
fn encode_lab_png(img: &Rgb8Image) -> Rgb8Image {
    let lab = rgb_to_lab(img);
    let mut data = Vec::with_capacity(img.data.len());
    for i in 0..lab.l.len() {
        data.push((lab.l[i] as f64 * 2.55 + 0.5).clamp(0.0, 255.0) as u8);
        data.push((lab.a[i] as f64 + 128.5).clamp(0.0, 255.0) as u8);
        data.push((lab.b[i] as f64 + 128.5).clamp(0.0, 255.0) as u8);
    }
    Rgb8Image {
        width: img.width,
        height: img.height,
        data,
    }
}

fn decode_lab_png(img: &Rgb8Image) -> Rgb8Image {
    let n = img.width * img.height;
    let mut lab = LabImage {
        width: img.width,
        height: img.height,
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for px in img.data.chunks_exact(3) {
        lab.l.push(px[0] as f32 / 2.55);
        lab.a.push(px[1] as f32 - 128.0);
        lab.b.push(px[2] as f32 - 128.0);
    }
    lab_to_rgb(&lab)
}
