//! Quantization of the ab plane into a finite palette: uniform bin grid with
//! an empirical gamut mask, Gaussian soft encoding, distribution decoding,
//! and an optional k-means palette.

use crate::colorspace::{lab_to_rgb, rgb_to_lab, LabImage};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BIN_SIZE: f32 = 10.0;
pub const DEFAULT_NEIGHBORS: usize = 5;
pub const DEFAULT_SIGMA: f32 = 5.0;
pub const DEFAULT_TEMPERATURE: f32 = 0.38;

/// Quantized ab palette: a uniform lattice over [-110, 110)² with the bins
/// that survive an sRGB round trip marked in-gamut. Network classification
/// heads predict over the Q in-gamut bins only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorBinGrid {
    pub bin_size: f32,
    /// All candidate cell midpoints, row-major over (a, b).
    pub centers: Vec<(f32, f32)>,
    /// Gamut mask per candidate.
    pub in_gamut: Vec<bool>,
    /// Candidate index of each in-gamut bin, in candidate order.
    pub gamut_index: Vec<usize>,
}

impl ColorBinGrid {
    /// Number of in-gamut bins (the classification head width).
    pub fn q(&self) -> usize {
        self.gamut_index.len()
    }

    /// Center of in-gamut bin `i`.
    pub fn gamut_center(&self, i: usize) -> (f32, f32) {
        self.centers[self.gamut_index[i]]
    }
}

/// Sparse per-pixel distribution over in-gamut bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    /// (in-gamut bin index, weight) pairs; weights sum to 1.
    pub entries: Vec<(u32, f32)>,
}

/// Probe whether a candidate ab center is reachable from sRGB: at some
/// lightness level the Lab -> RGB -> Lab round trip must land within half a
/// bin of the center.
fn center_in_gamut(a: f32, b: f32, half_bin: f64) -> bool {
    for l in (0..=100).step_by(10) {
        let lab = LabImage {
            width: 1,
            height: 1,
            l: vec![l as f32],
            a: vec![a],
            b: vec![b],
        };
        let back = rgb_to_lab(&lab_to_rgb(&lab));
        let da = back.a[0] as f64 - a as f64;
        let db = back.b[0] as f64 - b as f64;
        if (da * da + db * db).sqrt() < half_bin {
            return true;
        }
    }
    false
}

/// Build the quantization grid for the given bin size (must divide the
/// [-110, 110) span evenly).
pub fn build_bin_grid(bin_size: f32) -> Result<ColorBinGrid> {
    if bin_size <= 0.0 {
        return Err(Error::Config(format!("bin_size must be > 0, got {bin_size}")));
    }
    let n = 220.0 / bin_size as f64;
    if (n - n.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "bin_size {bin_size} does not divide the ab span 220 evenly"
        )));
    }
    let n = n.round() as usize;
    let mut centers = Vec::with_capacity(n * n);
    for ia in 0..n {
        for ib in 0..n {
            let a = -110.0 + (ia as f64 + 0.5) * bin_size as f64;
            let b = -110.0 + (ib as f64 + 0.5) * bin_size as f64;
            centers.push((a as f32, b as f32));
        }
    }
    let half_bin = bin_size as f64 / 2.0;
    let in_gamut: Vec<bool> = centers
        .iter()
        .map(|&(a, b)| center_in_gamut(a, b, half_bin))
        .collect();
    let gamut_index: Vec<usize> = in_gamut
        .iter()
        .enumerate()
        .filter_map(|(i, &g)| g.then_some(i))
        .collect();
    if gamut_index.is_empty() {
        return Err(Error::Config("no in-gamut bins".into()));
    }
    Ok(ColorBinGrid {
        bin_size,
        centers,
        in_gamut,
        gamut_index,
    })
}

/// Index of the nearest in-gamut bin by Euclidean distance in ab.
/// Ties break toward the lowest index.
pub fn quantize_ab(ab: (f32, f32), grid: &ColorBinGrid) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &ci) in grid.gamut_index.iter().enumerate() {
        let (ca, cb) = grid.centers[ci];
        let da = ab.0 as f64 - ca as f64;
        let db = ab.1 as f64 - cb as f64;
        let d = da * da + db * db;
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Gaussian soft encoding over the K nearest in-gamut bins.
pub fn soft_encode(ab: (f32, f32), grid: &ColorBinGrid, k: usize, sigma: f32) -> SoftLabel {
    assert!(k >= 1, "K must be >= 1");
    assert!(sigma > 0.0, "sigma must be > 0");
    let k = k.min(grid.q());
    // (squared distance, gamut index), sorted ascending with index tiebreak
    let mut dists: Vec<(f64, usize)> = grid
        .gamut_index
        .iter()
        .enumerate()
        .map(|(i, &ci)| {
            let (ca, cb) = grid.centers[ci];
            let da = ab.0 as f64 - ca as f64;
            let db = ab.1 as f64 - cb as f64;
            (da * da + db * db, i)
        })
        .collect();
    dists.select_nth_unstable_by(k - 1, |x, y| x.partial_cmp(y).unwrap());
    let mut nearest: Vec<(f64, usize)> = dists[..k].to_vec();
    nearest.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let two_sigma_sq = 2.0 * sigma as f64 * sigma as f64;
    let mut weights: Vec<f64> = nearest
        .iter()
        .map(|&(d2, _)| (-d2 / two_sigma_sq).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        // All mass underflowed; fall back to one-hot on the nearest bin.
        weights = vec![0.0; k];
        weights[0] = 1.0;
    } else {
        for w in &mut weights {
            *w /= sum;
        }
    }
    SoftLabel {
        entries: nearest
            .iter()
            .zip(&weights)
            .map(|(&(_, i), &w)| (i as u32, w as f32))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMethod {
    Mode,
    AnnealedMean,
}

/// Decode a dense distribution over the Q in-gamut bins back to an ab value.
pub fn decode_distribution(
    dist: &[f32],
    grid: &ColorBinGrid,
    method: DecodeMethod,
    temperature: f32,
) -> Result<(f32, f32)> {
    assert_eq!(dist.len(), grid.q(), "distribution width != Q");
    let total: f64 = dist.iter().map(|&v| v as f64).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateInput(
            "all-zero distribution cannot be decoded".into(),
        ));
    }
    match method {
        DecodeMethod::Mode => {
            let mut best = 0usize;
            let mut best_w = f64::NEG_INFINITY;
            for (i, &w) in dist.iter().enumerate() {
                if (w as f64) > best_w {
                    best_w = w as f64;
                    best = i;
                }
            }
            Ok(grid.gamut_center(best))
        }
        DecodeMethod::AnnealedMean => {
            assert!(temperature > 0.0, "temperature must be > 0");
            let inv_t = 1.0 / temperature as f64;
            let mut wsum = 0.0f64;
            let mut asum = 0.0f64;
            let mut bsum = 0.0f64;
            for (i, &w) in dist.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                let ww = (w as f64).powf(inv_t);
                let (ca, cb) = grid.gamut_center(i);
                wsum += ww;
                asum += ww * ca as f64;
                bsum += ww * cb as f64;
            }
            Ok(((asum / wsum) as f32, (bsum / wsum) as f32))
        }
    }
}

/// Lloyd's k-means over ab samples with seeded initialization. Empty
/// clusters are re-seeded from the sample farthest from its assigned center.
pub fn kmeans_palette(
    samples: &[(f32, f32)],
    q: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<(f32, f32)>> {
    if samples.is_empty() {
        return Err(Error::Config("k-means needs at least one sample".into()));
    }
    let mut distinct: Vec<(f32, f32)> = samples.to_vec();
    distinct.sort_by(|x, y| x.partial_cmp(y).unwrap());
    distinct.dedup();
    if q > distinct.len() {
        return Err(Error::Config(format!(
            "Q = {q} exceeds {} distinct samples",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<(f64, f64)> = distinct
        .choose_multiple(&mut rng, q)
        .map(|&(a, b)| (a as f64, b as f64))
        .collect();
    let mut assign = vec![0usize; samples.len()];
    for _ in 0..iters {
        // assignment step
        for (si, &(a, b)) in samples.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (ci, &(ca, cb)) in centers.iter().enumerate() {
                let d = (a as f64 - ca).powi(2) + (b as f64 - cb).powi(2);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            assign[si] = best;
        }
        // update step
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); q];
        for (si, &(a, b)) in samples.iter().enumerate() {
            let s = &mut sums[assign[si]];
            s.0 += a as f64;
            s.1 += b as f64;
            s.2 += 1;
        }
        for ci in 0..q {
            if sums[ci].2 > 0 {
                centers[ci] = (sums[ci].0 / sums[ci].2 as f64, sums[ci].1 / sums[ci].2 as f64);
            } else {
                // re-seed from the farthest sample
                let far = samples
                    .iter()
                    .enumerate()
                    .max_by(|(i, &(a1, b1)), (j, &(a2, b2))| {
                        let d1 = (a1 as f64 - centers[assign[*i]].0).powi(2)
                            + (b1 as f64 - centers[assign[*i]].1).powi(2);
                        let d2 = (a2 as f64 - centers[assign[*j]].0).powi(2)
                            + (b2 as f64 - centers[assign[*j]].1).powi(2);
                        d1.partial_cmp(&d2).unwrap()
                    })
                    .map(|(_, &s)| s)
                    .unwrap();
                centers[ci] = (far.0 as f64, far.1 as f64);
            }
        }
    }
    Ok(centers.iter().map(|&(a, b)| (a as f32, b as f32)).collect())
}
