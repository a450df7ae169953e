//! Inference pipeline and evaluation metrics.

use crate::colorspace::{
    lab_to_rgb, merge_channels, normalize, rgb_to_lab, split_channels, AbPlanes, LightnessPlane,
    NormDirection, PlaneKind, Rgb8Image,
};
use crate::error::{Error, Result};
use crate::imageops::resize_plane_bilinear;
use crate::model::{Head, Network};
use crate::nn::Tensor;
use crate::quantizer::{decode_distribution, ColorBinGrid, DecodeMethod, DEFAULT_TEMPERATURE};
use crate::trainer::decode_image_file;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorizeOptions {
    pub decode: DecodeMethod,
    pub temperature: f32,
    /// Multiplier applied to the predicted ab planes before merging.
    pub saturation: f32,
}

impl Default for ColorizeOptions {
    fn default() -> Self {
        Self {
            decode: DecodeMethod::AnnealedMean,
            temperature: DEFAULT_TEMPERATURE,
            saturation: 1.0,
        }
    }
}

/// Colorize one image: the original L channel is kept at full resolution, the
/// network predicts ab at its own resolution, and the ab planes are upsampled
/// back and merged with the original lightness.
pub fn colorize(
    net: &mut Network,
    grid: Option<&ColorBinGrid>,
    input: &Rgb8Image,
    opts: &ColorizeOptions,
) -> Result<Rgb8Image> {
    if opts.saturation < 0.0 {
        return Err(Error::Config("saturation must be >= 0".into()));
    }
    let lab = rgb_to_lab(input);
    let (full_l, _) = split_channels(&lab);

    let size = net.config.input_size;
    let mut l_small = resize_plane_bilinear(&full_l.values, input.width, input.height, size, size);
    normalize(PlaneKind::Lightness, NormDirection::ToNet, &mut l_small);
    let tensor = Tensor::from_vec(1, 1, size, size, l_small)?;
    let output = net.infer(&tensor)?;

    let out = net.config.output_size();
    let (mut a_small, mut b_small) = match net.config.head {
        Head::Regression => {
            let mut a = output.data[..out * out].to_vec();
            let mut b = output.data[out * out..2 * out * out].to_vec();
            normalize(PlaneKind::Chroma, NormDirection::FromNet, &mut a);
            normalize(PlaneKind::Chroma, NormDirection::FromNet, &mut b);
            (a, b)
        }
        Head::Classification => {
            let grid = grid.ok_or_else(|| {
                Error::Config("classification checkpoint is missing its bin grid".into())
            })?;
            let q = net.config.q;
            let mut a = vec![0.0f32; out * out];
            let mut b = vec![0.0f32; out * out];
            let mut dist = vec![0.0f32; q];
            for p in 0..out * out {
                for (k, d) in dist.iter_mut().enumerate() {
                    *d = output.data[k * out * out + p];
                }
                let (pa, pb) = decode_distribution(&dist, grid, opts.decode, opts.temperature)?;
                a[p] = pa;
                b[p] = pb;
            }
            (a, b)
        }
    };
    if opts.saturation != 1.0 {
        for v in a_small.iter_mut().chain(b_small.iter_mut()) {
            *v *= opts.saturation;
        }
    }

    let a = resize_plane_bilinear(&a_small, out, out, input.width, input.height);
    let b = resize_plane_bilinear(&b_small, out, out, input.width, input.height);
    let merged = merge_channels(
        &full_l,
        &AbPlanes {
            width: input.width,
            height: input.height,
            a,
            b,
        },
    )?;
    Ok(lab_to_rgb(&merged))
}

pub const PSNR_IDENTICAL: f64 = 99.0;

/// Peak signal-to-noise ratio between two RGB images, in dB.
pub fn psnr(a: &Rgb8Image, b: &Rgb8Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "psnr: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Mean absolute ab error and mean signed ab bias of `pred` against `truth`.
pub fn ab_error(pred: &Rgb8Image, truth: &Rgb8Image) -> Result<(f64, f64, f64)> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::DimensionMismatch(format!(
            "ab_error: {}x{} vs {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let (_, pab) = split_channels(&rgb_to_lab(pred));
    let (_, tab) = split_channels(&rgb_to_lab(truth));
    let n = pab.a.len() as f64;
    let mut mae = 0.0;
    let mut bias_a = 0.0;
    let mut bias_b = 0.0;
    for i in 0..pab.a.len() {
        let da = pab.a[i] as f64 - tab.a[i] as f64;
        let db = pab.b[i] as f64 - tab.b[i] as f64;
        mae += da.abs() + db.abs();
        bias_a += da;
        bias_b += db;
    }
    Ok((mae / (2.0 * n), bias_a / n, bias_b / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub file: String,
    pub psnr_db: f64,
    pub ab_mae: f64,
    pub bias_a: f64,
    pub bias_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalRow,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut csv = String::from("file,psnr_db,ab_mae,bias_a,bias_b\n");
        for row in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            csv.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4}\n",
                row.file, row.psnr_db, row.ab_mae, row.bias_a, row.bias_b
            ));
        }
        csv
    }
}

/// Compare colorized outputs against ground truth, matching files by name.
/// Pairs with mismatched dimensions are skipped with a warning.
pub fn eval_report(pred_dir: &Path, truth_dir: &Path) -> Result<EvalReport> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(pred_dir)
        .map_err(|e| Error::io(pred_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();

    let mut rows = Vec::new();
    let (mut sum_psnr, mut sum_mae, mut sum_a, mut sum_b) = (0.0, 0.0, 0.0, 0.0);
    for pred_path in &names {
        let Some(name) = pred_path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let truth_path = truth_dir.join(name);
        if !truth_path.is_file() {
            continue;
        }
        let pred = decode_image_file(pred_path)?;
        let truth = decode_image_file(&truth_path)?;
        if pred.width != truth.width || pred.height != truth.height {
            eprintln!(
                "warning: skipping {name}: {}x{} vs {}x{}",
                pred.width, pred.height, truth.width, truth.height
            );
            continue;
        }
        let psnr_db = psnr(&pred, &truth)?;
        let (ab_mae, bias_a, bias_b) = ab_error(&pred, &truth)?;
        sum_psnr += psnr_db;
        sum_mae += ab_mae;
        sum_a += bias_a;
        sum_b += bias_b;
        rows.push(EvalRow {
            file: name.to_string(),
            psnr_db,
            ab_mae,
            bias_a,
            bias_b,
        });
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!(
            "no matching image pairs between {} and {}",
            pred_dir.display(),
            truth_dir.display()
        )));
    }
    let n = rows.len() as f64;
    let aggregate = EvalRow {
        file: "AGGREGATE".into(),
        psnr_db: sum_psnr / n,
        ab_mae: sum_mae / n,
        bias_a: sum_a / n,
        bias_b: sum_b / n,
    };
    Ok(EvalReport { rows, aggregate })
}

/// Mean absolute ab error of the neutral-gray baseline (predict a = b = 0).
pub fn gray_baseline_mae(truth: &Rgb8Image) -> f64 {
    let (_, ab) = split_channels(&rgb_to_lab(truth));
    let n = ab.a.len() as f64;
    ab.a.iter()
        .zip(&ab.b)
        .map(|(&a, &b)| a.abs() as f64 + b.abs() as f64)
        .sum::<f64>()
        / (2.0 * n)
}

/// Maximum absolute L difference between two images of the same size.
pub fn max_lightness_delta(a: &Rgb8Image, b: &Rgb8Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch("max_lightness_delta".into()));
    }
    let (la, _) = split_channels(&rgb_to_lab(a));
    let (lb, _) = split_channels(&rgb_to_lab(b));
    Ok(la
        .values
        .iter()
        .zip(&lb.values)
        .map(|(&x, &y)| (x - y).abs() as f64)
        .fold(0.0, f64::max))
}

/// Build an RGB image from single-plane data; handy for round-trip tests.
pub fn plane_to_gray_image(plane: &LightnessPlane) -> Rgb8Image {
    let lab = crate::colorspace::LabImage {
        width: plane.width,
        height: plane.height,
        l: plane.values.clone(),
        a: vec![0.0; plane.values.len()],
        b: vec![0.0; plane.values.len()],
    };
    lab_to_rgb(&lab)
}
