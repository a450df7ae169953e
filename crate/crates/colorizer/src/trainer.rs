//! Dataset ingestion, target preparation, and the training loop.

use crate::colorspace::{
    normalize, rgb_to_lab, split_channels, AbPlanes, NormDirection, PlaneKind, Rgb8Image,
};
use crate::error::{Error, Result};
use crate::imageops::{center_crop_square, downsample_plane_area, resize_rgb_bilinear};
use crate::model::{build_network, init_weights, save_checkpoint, Head, NetConfig, Network};
use crate::nn::{
    euclidean_loss, optimizer_step, softmax_cross_entropy, BnMode, OptimConfig, OptimKind,
    OptimState, Tensor,
};
use crate::quantizer::{build_bin_grid, soft_encode, ColorBinGrid, SoftLabel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub image_size: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: String,
    pub momentum: f32,
    pub epochs: usize,
    pub head: Head,
    pub bin_size: f32,
    pub k: usize,
    pub sigma: f32,
    pub temperature: f32,
    pub seed: u64,
    pub augment_fake_grayscale: bool,
    pub min_chroma_filter: f32,
    pub tanh_squash: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::new(),
            out_dir: PathBuf::new(),
            image_size: 64,
            batch_size: 8,
            lr: 3e-4,
            optimizer: "adam".into(),
            momentum: 0.9,
            epochs: 10,
            head: Head::Regression,
            bin_size: 10.0,
            k: 5,
            sigma: 5.0,
            temperature: 0.38,
            seed: 0,
            augment_fake_grayscale: false,
            min_chroma_filter: 2.0,
            tanh_squash: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 4, got {}",
                self.image_size
            )));
        }
        let positives: [(&str, f64); 7] = [
            ("batch_size", self.batch_size as f64),
            ("lr", self.lr as f64),
            ("epochs", self.epochs as f64),
            ("bin_size", self.bin_size as f64),
            ("k", self.k as f64),
            ("sigma", self.sigma as f64),
            ("temperature", self.temperature as f64),
        ];
        for (name, v) in positives {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_chroma_filter < 0.0 {
            return Err(Error::Config("min_chroma_filter must be >= 0".into()));
        }
        match self.optimizer.as_str() {
            "adam" | "sgd" => {}
            other => return Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
        Ok(())
    }

    pub fn optim_config(&self) -> OptimConfig {
        let kind = match self.optimizer.as_str() {
            "sgd" => OptimKind::Sgd {
                momentum: self.momentum,
            },
            _ => OptimKind::adam_default(),
        };
        OptimConfig { kind, lr: self.lr }
    }

    pub fn net_config(&self, q: usize) -> NetConfig {
        NetConfig {
            input_size: self.image_size,
            head: self.head,
            q,
            tanh_squash: self.tanh_squash,
            seed: self.seed,
        }
    }

    /// Parse a flat `key = value` config file. `#` starts a comment; unknown
    /// keys are errors.
    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key = value, got '{raw}'",
                    path.display(),
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "image_size" => self.image_size = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "optimizer" => self.optimizer = value.to_string(),
            "momentum" => self.momentum = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "head" => {
                self.head = match value {
                    "regression" => Head::Regression,
                    "classification" => Head::Classification,
                    _ => return Err(Error::Config(format!("bad head '{value}'"))),
                }
            }
            "bin_size" => self.bin_size = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment_fake_grayscale" => self.augment_fake_grayscale = parse(key, value)?,
            "min_chroma_filter" => self.min_chroma_filter = parse(key, value)?,
            "tanh_squash" => self.tanh_squash = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }
}

/// Prepared training target, at the network output resolution.
#[derive(Debug, Clone)]
pub enum Target {
    /// Normalized ab planes, a-plane then b-plane.
    Ab(Vec<f32>),
    /// One sparse distribution per output pixel.
    Soft(Vec<SoftLabel>),
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// Normalized L at the network input resolution.
    pub input: Vec<f32>,
    /// Raw ab planes at the network input resolution.
    pub ab: AbPlanes,
    pub target: Option<Target>,
    pub source: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub seconds: f64,
    pub loss: f64,
}

pub fn decode_image_file(path: &Path) -> Result<Rgb8Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.into(),
            source: e,
        })?
        .to_rgb8();
    Rgb8Image::new(img.width() as usize, img.height() as usize, img.into_raw())
}

/// Mean chroma magnitude of an ab plane pair.
fn mean_chroma(ab: &AbPlanes) -> f64 {
    let n = ab.a.len().max(1);
    ab.a.iter()
        .zip(&ab.b)
        .map(|(&a, &b)| ((a as f64).powi(2) + (b as f64).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64
}

/// Classic luma desaturation in gamma space; gives fake-grayscale inputs a
/// different L distribution than the Lab-neutral projection would.
fn desaturate(img: &Rgb8Image) -> Rgb8Image {
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let y = (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64 + 0.5)
            .floor()
            .clamp(0.0, 255.0) as u8;
        data.extend_from_slice(&[y, y, y]);
    }
    Rgb8Image {
        width: img.width,
        height: img.height,
        data,
    }
}

fn sample_from_rgb(rgb: &Rgb8Image, size: usize, source: &Path) -> Sample {
    let square = center_crop_square(rgb);
    let resized = resize_rgb_bilinear(&square, size, size);
    let lab = rgb_to_lab(&resized);
    let (l, ab) = split_channels(&lab);
    let mut input = l.values;
    normalize(PlaneKind::Lightness, NormDirection::ToNet, &mut input);
    Sample {
        input,
        ab,
        target: None,
        source: source.to_path_buf(),
    }
}

/// Enumerate, decode, crop, resize, convert and filter the training images.
/// Undecodable files are skipped with a warning on stderr.
pub fn ingest_dataset(config: &TrainConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    if !config.data_dir.is_dir() {
        return Err(Error::Dataset(format!(
            "data directory {} does not exist",
            config.data_dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&config.data_dir)
        .map_err(|e| Error::io(&config.data_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut samples = Vec::new();
    for path in &paths {
        let rgb = match decode_image_file(path) {
            Ok(rgb) => rgb,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        let sample = sample_from_rgb(&rgb, config.image_size, path);
        if mean_chroma(&sample.ab) < config.min_chroma_filter as f64 {
            continue;
        }
        if config.augment_fake_grayscale {
            let square = center_crop_square(&rgb);
            let resized = resize_rgb_bilinear(&square, config.image_size, config.image_size);
            let gray_lab = rgb_to_lab(&desaturate(&resized));
            let mut input = gray_lab.l;
            normalize(PlaneKind::Lightness, NormDirection::ToNet, &mut input);
            let original = sample.clone();
            samples.push(sample);
            samples.push(Sample {
                input,
                ab: original.ab,
                target: None,
                source: path.to_path_buf(),
            });
        } else {
            samples.push(sample);
        }
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable training images in {}",
            config.data_dir.display()
        )));
    }
    Ok(samples)
}

/// Fill in each sample's training target at the output resolution.
pub fn prepare_targets(
    samples: &mut [Sample],
    config: &TrainConfig,
    grid: Option<&ColorBinGrid>,
) -> Result<()> {
    let size = config.image_size;
    let out = size / 2;
    for sample in samples.iter_mut() {
        let a = downsample_plane_area(&sample.ab.a, size, size, out, out);
        let b = downsample_plane_area(&sample.ab.b, size, size, out, out);
        let target = match config.head {
            Head::Regression => {
                let mut planes = a;
                planes.extend_from_slice(&b);
                normalize(PlaneKind::Chroma, NormDirection::ToNet, &mut planes);
                Target::Ab(planes)
            }
            Head::Classification => {
                let grid = grid.ok_or_else(|| {
                    Error::Config("classification targets need a bin grid".into())
                })?;
                Target::Soft(
                    a.iter()
                        .zip(&b)
                        .map(|(&a, &b)| soft_encode((a, b), grid, config.k, config.sigma))
                        .collect(),
                )
            }
        };
        sample.target = Some(target);
    }
    Ok(())
}

/// Assemble the (input, target) tensors for one batch of samples.
pub fn batch_tensors(
    samples: &[Sample],
    indices: &[usize],
    config: &TrainConfig,
    q: usize,
) -> Result<(Tensor, Tensor)> {
    let n = indices.len();
    let size = config.image_size;
    let out = size / 2;
    let mut input = Tensor::zeros(n, 1, size, size);
    let target_c = match config.head {
        Head::Regression => 2,
        Head::Classification => q,
    };
    let mut target = Tensor::zeros(n, target_c, out, out);
    for (bi, &si) in indices.iter().enumerate() {
        let sample = &samples[si];
        input.data[bi * size * size..(bi + 1) * size * size].copy_from_slice(&sample.input);
        match sample.target.as_ref() {
            Some(Target::Ab(planes)) => {
                let base = target.idx(bi, 0, 0, 0);
                target.data[base..base + 2 * out * out].copy_from_slice(planes);
            }
            Some(Target::Soft(labels)) => {
                for (p, label) in labels.iter().enumerate() {
                    for &(bin, w) in &label.entries {
                        let i = target.idx(bi, bin as usize, 0, 0) + p;
                        target.data[i] = w;
                    }
                }
            }
            None => {
                return Err(Error::Config(format!(
                    "sample {} has no prepared target",
                    sample.source.display()
                )))
            }
        }
    }
    Ok((input, target))
}

/// One forward/backward/update step over a prepared batch. Returns the loss.
pub fn train_step(
    net: &mut Network,
    input: &Tensor,
    target: &Tensor,
    state: &mut OptimState,
    optim: &OptimConfig,
) -> Result<f64> {
    let (output, caches) = net.forward(input, BnMode::Train)?;
    let (loss, grad) = match net.config.head {
        Head::Regression => euclidean_loss(&output, target)?,
        Head::Classification => softmax_cross_entropy(&output, target)?,
    };
    net.backward(&grad, &caches)?;
    optimizer_step(&mut net.trainable_params_mut(), state, optim)?;
    Ok(loss)
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub records: Vec<LossRecord>,
    pub grid: Option<ColorBinGrid>,
}

/// Full training run: ingest, prepare targets, train for the configured
/// epochs, write per-epoch checkpoints plus `final.aclr` and the loss log.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut samples = ingest_dataset(config)?;
    let grid = match config.head {
        Head::Classification => Some(build_bin_grid(config.bin_size)?),
        Head::Regression => None,
    };
    prepare_targets(&mut samples, config, grid.as_ref())?;
    let q = grid.as_ref().map(|g| g.q()).unwrap_or(0);
    let mut net = build_network(&config.net_config(q))?;
    init_weights(&mut net, config.seed);
    let mut state = OptimState::new(
        &net.trainable_params_mut()
            .iter()
            .map(|p| &**p)
            .collect::<Vec<_>>(),
    );
    let optim = config.optim_config();

    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let log_path = config.out_dir.join("loss_log.csv");
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?,
    );
    if log.get_ref().metadata().map(|m| m.len()).unwrap_or(0) == 0 {
        writeln!(log, "epoch,step,seconds,loss").map_err(|e| Error::io(&log_path, e))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let started = Instant::now();
    let mut step = 0usize;
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(config.batch_size) {
            let (input, target) = batch_tensors(&samples, chunk, config, q)?;
            let loss = train_step(&mut net, &input, &target, &mut state, &optim)?;
            step += 1;
            if !loss.is_finite() {
                let tail: Vec<f64> = records
                    .iter()
                    .rev()
                    .take(5)
                    .map(|r: &LossRecord| r.loss)
                    .collect();
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch} step {step} (lr {}, last losses {tail:?})",
                    config.lr
                )));
            }
            let record = LossRecord {
                epoch,
                step,
                seconds: started.elapsed().as_secs_f64(),
                loss,
            };
            writeln!(
                log,
                "{},{},{:.3},{}",
                record.epoch, record.step, record.seconds, record.loss
            )
            .map_err(|e| Error::io(&log_path, e))?;
            records.push(record);
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let ckpt = config.out_dir.join(format!("epoch_{:03}.aclr", epoch + 1));
        save_checkpoint(&net, grid.as_ref(), &ckpt)?;
        println!(
            "epoch {}/{}: loss {:.6}",
            epoch + 1,
            config.epochs,
            records.last().map(|r| r.loss).unwrap_or(f64::NAN)
        );
    }
    let final_path = config.out_dir.join("final.aclr");
    save_checkpoint(&net, grid.as_ref(), &final_path)?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        loss_log: log_path,
        records,
        grid,
    })
}
