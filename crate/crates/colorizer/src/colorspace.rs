//! sRGB ⇄ CIELAB conversion (D65, 2° observer) plus channel splitting and
//! network-range normalization.
//!
//! All conversion arithmetic runs in double precision; planes are stored in
//! single precision to match the tensor currency of the network.

use crate::error::{Error, Result};
use std::sync::OnceLock;

/// Interleaved 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "rgb data length {} != {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// CIELAB image with separate L, a, b planes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

/// The lightness (L) plane, the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct LightnessPlane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

/// The chroma (a, b) planes, the network target and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct AbPlanes {
    pub width: usize,
    pub height: usize,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

impl AbPlanes {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            a: vec![0.0; width * height],
            b: vec![0.0; width * height],
        }
    }
}

// Standard sRGB -> XYZ matrix (D65). The white point is taken as the exact
// row sums so that neutral inputs land on the neutral axis to within a few
// ulps.
type Mat3 = [[f64; 3]; 3];

const SRGB_TO_XYZ: Mat3 = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn matrices() -> &'static (Mat3, Mat3) {
    static M: OnceLock<(Mat3, Mat3)> = OnceLock::new();
    M.get_or_init(|| {
        // Forward matrix with rows normalized by the white point, so the
        // product directly yields X/Xn, Y/Yn, Z/Zn.
        let mut fwd = [[0.0; 3]; 3];
        for i in 0..3 {
            let wp: f64 = SRGB_TO_XYZ[i].iter().sum();
            for j in 0..3 {
                fwd[i][j] = SRGB_TO_XYZ[i][j] / wp;
            }
        }
        let inv = invert3(&fwd);
        (fwd, inv)
    })
}

fn invert3(m: &Mat3) -> Mat3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |a: usize, b: usize, cc: usize, d: usize| m[a][b] * m[cc][d] - m[a][d] * m[cc][b];
    [
        [c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
        [c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
    ]
}

/// sRGB EOTF: 8-bit channel value to linear intensity in [0, 1].
pub fn srgb_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse EOTF: linear intensity to 8-bit channel value. Input is clamped
/// to [0, 1]; encoding rounds half up.
pub fn linear_to_srgb(l: f64) -> u8 {
    let l = l.clamp(0.0, 1.0);
    let v = if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    };
    let q = (v * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as u8
}

const LAB_DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > LAB_DELTA * LAB_DELTA * LAB_DELTA {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > LAB_DELTA {
        t * t * t
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (t - 4.0 / 29.0)
    }
}

fn rgb_pixel_to_lab(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (fwd, _) = matrices();
    let rl = srgb_to_linear(r);
    let gl = srgb_to_linear(g);
    let bl = srgb_to_linear(b);
    let xr = fwd[0][0] * rl + fwd[0][1] * gl + fwd[0][2] * bl;
    let yr = fwd[1][0] * rl + fwd[1][1] * gl + fwd[1][2] * bl;
    let zr = fwd[2][0] * rl + fwd[2][1] * gl + fwd[2][2] * bl;
    let fx = lab_f(xr);
    let fy = lab_f(yr);
    let fz = lab_f(zr);
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

fn lab_pixel_to_rgb(l: f64, a: f64, b: f64) -> [u8; 3] {
    let (_, inv) = matrices();
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let xr = lab_f_inv(fx);
    let yr = lab_f_inv(fy);
    let zr = lab_f_inv(fz);
    let rl = inv[0][0] * xr + inv[0][1] * yr + inv[0][2] * zr;
    let gl = inv[1][0] * xr + inv[1][1] * yr + inv[1][2] * zr;
    let bl = inv[2][0] * xr + inv[2][1] * yr + inv[2][2] * zr;
    [linear_to_srgb(rl), linear_to_srgb(gl), linear_to_srgb(bl)]
}

/// Convert an 8-bit sRGB image to CIELAB. Neutral pixels (R=G=B) map to
/// a = b = 0 to within a few ulps.
pub fn rgb_to_lab(img: &Rgb8Image) -> LabImage {
    let n = img.width * img.height;
    let mut l = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for px in img.data.chunks_exact(3) {
        let (ll, aa, bb) = rgb_pixel_to_lab(px[0], px[1], px[2]);
        l.push(ll as f32);
        a.push(aa as f32);
        b.push(bb as f32);
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

/// Convert CIELAB back to 8-bit sRGB. Out-of-gamut values are clamped per
/// linear channel, so the output is always valid.
pub fn lab_to_rgb(img: &LabImage) -> Rgb8Image {
    let mut data = Vec::with_capacity(img.width * img.height * 3);
    for i in 0..img.width * img.height {
        let px = lab_pixel_to_rgb(img.l[i] as f64, img.a[i] as f64, img.b[i] as f64);
        data.extend_from_slice(&px);
    }
    Rgb8Image {
        width: img.width,
        height: img.height,
        data,
    }
}

pub fn split_channels(img: &LabImage) -> (LightnessPlane, AbPlanes) {
    (
        LightnessPlane {
            width: img.width,
            height: img.height,
            values: img.l.clone(),
        },
        AbPlanes {
            width: img.width,
            height: img.height,
            a: img.a.clone(),
            b: img.b.clone(),
        },
    )
}

pub fn merge_channels(l: &LightnessPlane, ab: &AbPlanes) -> Result<LabImage> {
    if l.width != ab.width || l.height != ab.height {
        return Err(Error::DimensionMismatch(format!(
            "L plane {}x{} vs ab planes {}x{}",
            l.width, l.height, ab.width, ab.height
        )));
    }
    Ok(LabImage {
        width: l.width,
        height: l.height,
        l: l.values.clone(),
        a: ab.a.clone(),
        b: ab.b.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneKind {
    Lightness,
    Chroma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormDirection {
    ToNet,
    FromNet,
}

/// Map raw CIELAB values to the network range [-1, 1] and back.
/// L uses v/50 - 1; ab uses v/110.
pub fn normalize(kind: PlaneKind, direction: NormDirection, values: &mut [f32]) {
    match (kind, direction) {
        (PlaneKind::Lightness, NormDirection::ToNet) => {
            for v in values {
                *v = *v / 50.0 - 1.0;
            }
        }
        (PlaneKind::Lightness, NormDirection::FromNet) => {
            for v in values {
                *v = (*v + 1.0) * 50.0;
            }
        }
        (PlaneKind::Chroma, NormDirection::ToNet) => {
            for v in values {
                *v /= 110.0;
            }
        }
        (PlaneKind::Chroma, NormDirection::FromNet) => {
            for v in values {
                *v *= 110.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_transfer_endpoints() {
        assert_eq!(srgb_to_linear(0), 0.0);
        assert_eq!(srgb_to_linear(255), 1.0);
        assert_eq!(linear_to_srgb(0.0), 0);
        assert_eq!(linear_to_srgb(1.0), 255);
    }

    #[test]
    fn srgb_transfer_midpoint() {
        // ((128/255 + 0.055) / 1.055)^2.4
        let expected = ((128.0 / 255.0 + 0.055f64) / 1.055).powf(2.4);
        assert!((srgb_to_linear(128) - expected).abs() < 1e-12);
        assert!((srgb_to_linear(128) - 0.21586).abs() < 1e-5);
        assert_eq!(linear_to_srgb(0.21586), 128);
    }

    #[test]
    fn srgb_to_linear_monotone() {
        for c in 0..255u8 {
            assert!(srgb_to_linear(c) < srgb_to_linear(c + 1));
        }
    }

    #[test]
    fn linear_to_srgb_clamps() {
        assert_eq!(linear_to_srgb(-0.5), 0);
        assert_eq!(linear_to_srgb(2.0), 255);
    }

    #[test]
    fn white_and_black() {
        let img = Rgb8Image::new(2, 1, vec![255, 255, 255, 0, 0, 0]).unwrap();
        let lab = rgb_to_lab(&img);
        assert!((lab.l[0] - 100.0).abs() < 1e-4);
        assert!(lab.a[0].abs() < 1e-9);
        assert!(lab.b[0].abs() < 1e-9);
        assert!(lab.l[1].abs() < 1e-9);
        assert!(lab.a[1].abs() < 1e-9);
        assert!(lab.b[1].abs() < 1e-9);
    }

    #[test]
    fn green_reference_value() {
        // Independent evaluation of the CIE formulas for sRGB green.
        let img = Rgb8Image::new(1, 1, vec![0, 255, 0]).unwrap();
        let lab = rgb_to_lab(&img);
        assert!((lab.l[0] - 87.74).abs() < 0.01, "L = {}", lab.l[0]);
        assert!((lab.a[0] + 86.18).abs() < 0.01, "a = {}", lab.a[0]);
        assert!((lab.b[0] - 83.18).abs() < 0.01, "b = {}", lab.b[0]);
    }

    #[test]
    fn neutral_axis_all_grays() {
        for v in 0..=255u8 {
            let (_, a, b) = rgb_pixel_to_lab(v, v, v);
            assert!(a.abs() < 1e-9, "gray {v}: a = {a}");
            assert!(b.abs() < 1e-9, "gray {v}: b = {b}");
        }
    }

    #[test]
    fn lab_ranges() {
        for r in (0..=255u8).step_by(17) {
            for g in (0..=255u8).step_by(17) {
                for b in (0..=255u8).step_by(17) {
                    let (l, a, bb) = rgb_pixel_to_lab(r, g, b);
                    assert!((0.0..=100.0).contains(&l));
                    assert!((-110.0..=110.0).contains(&a));
                    assert!((-110.0..=110.0).contains(&bb));
                }
            }
        }
    }

    #[test]
    fn round_trip_grid() {
        for r in (0..=255u16).step_by(17) {
            for g in (0..=255u16).step_by(17) {
                for b in (0..=255u16).step_by(17) {
                    let (l, a, bb) = rgb_pixel_to_lab(r as u8, g as u8, b as u8);
                    let back = lab_pixel_to_rgb(l, a, bb);
                    assert!((back[0] as i32 - r as i32).abs() <= 1);
                    assert!((back[1] as i32 - g as i32).abs() <= 1);
                    assert!((back[2] as i32 - b as i32).abs() <= 1);
                }
            }
        }
    }

    #[test]
    fn lab_white_to_rgb() {
        let img = LabImage {
            width: 1,
            height: 1,
            l: vec![100.0],
            a: vec![0.0],
            b: vec![0.0],
        };
        assert_eq!(lab_to_rgb(&img).data, vec![255, 255, 255]);
    }

    #[test]
    fn out_of_gamut_clamps_to_valid() {
        let img = LabImage {
            width: 1,
            height: 1,
            l: vec![50.0],
            a: vec![-128.0],
            b: vec![0.0],
        };
        let rgb = lab_to_rgb(&img);
        assert_eq!(rgb.data.len(), 3);
    }

    #[test]
    fn split_merge_round_trip() {
        let img = Rgb8Image::new(2, 2, vec![10, 200, 30, 4, 5, 6, 250, 0, 128, 9, 9, 9]).unwrap();
        let lab = rgb_to_lab(&img);
        let (l, ab) = split_channels(&lab);
        assert_eq!(l.width, lab.width);
        assert_eq!(ab.height, lab.height);
        let merged = merge_channels(&l, &ab).unwrap();
        assert_eq!(merged, lab);
    }

    #[test]
    fn merge_dimension_mismatch() {
        let l = LightnessPlane {
            width: 64,
            height: 64,
            values: vec![0.0; 64 * 64],
        };
        let ab = AbPlanes::zeros(32, 32);
        assert!(matches!(
            merge_channels(&l, &ab),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn merge_neutral_is_grayscale() {
        let l = LightnessPlane {
            width: 2,
            height: 1,
            values: vec![30.0, 70.0],
        };
        let lab = merge_channels(&l, &AbPlanes::zeros(2, 1)).unwrap();
        let rgb = lab_to_rgb(&lab);
        for px in rgb.data.chunks_exact(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn normalize_round_trip() {
        let mut l = vec![0.0f32, 50.0, 100.0, 33.3];
        normalize(PlaneKind::Lightness, NormDirection::ToNet, &mut l);
        assert_eq!(l[1], 0.0);
        assert_eq!(l[0], -1.0);
        assert_eq!(l[2], 1.0);
        normalize(PlaneKind::Lightness, NormDirection::FromNet, &mut l);
        assert!((l[3] - 33.3).abs() < 1e-5);

        let mut ab = vec![-110.0f32, 110.0, 55.0];
        normalize(PlaneKind::Chroma, NormDirection::ToNet, &mut ab);
        assert_eq!(ab[0], -1.0);
        assert_eq!(ab[1], 1.0);
        normalize(PlaneKind::Chroma, NormDirection::FromNet, &mut ab);
        assert_eq!(ab[2], 55.0);
    }
}
