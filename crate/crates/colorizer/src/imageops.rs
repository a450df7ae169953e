//! Resampling helpers shared by the trainer and the inference pipeline:
//! bilinear resize with half-pixel-centered sampling, area-average
//! downsampling for targets, and center cropping.

use crate::colorspace::Rgb8Image;

/// Bilinear resize of a single plane. Sample positions are half-pixel
/// centered: output pixel (x, y) samples source ((x+0.5)*sx - 0.5, ...).
pub fn resize_plane_bilinear(
    src: &[f32],
    sw: usize,
    sh: usize,
    dw: usize,
    dh: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh);
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(dw * dh);
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    for oy in 0..dh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for ox in 0..dw {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let p00 = src[y0 * sw + x0] as f64;
            let p01 = src[y0 * sw + x1] as f64;
            let p10 = src[y1 * sw + x0] as f64;
            let p11 = src[y1 * sw + x1] as f64;
            let top = p00 + (p01 - p00) * wx;
            let bot = p10 + (p11 - p10) * wx;
            out.push((top + (bot - top) * wy) as f32);
        }
    }
    out
}

/// Area-average downsample by an integer factor. Source dims must be exact
/// multiples of the destination dims.
pub fn downsample_plane_area(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh);
    assert!(sw.is_multiple_of(dw) && sh.is_multiple_of(dh), "non-integer area downsample");
    let fx = sw / dw;
    let fy = sh / dh;
    let inv = 1.0 / (fx * fy) as f64;
    let mut out = Vec::with_capacity(dw * dh);
    for oy in 0..dh {
        for ox in 0..dw {
            let mut acc = 0.0f64;
            for iy in 0..fy {
                let row = (oy * fy + iy) * sw + ox * fx;
                for ix in 0..fx {
                    acc += src[row + ix] as f64;
                }
            }
            out.push((acc * inv) as f32);
        }
    }
    out
}

/// Crop the largest centered square out of an RGB image.
pub fn center_crop_square(img: &Rgb8Image) -> Rgb8Image {
    let side = img.width.min(img.height);
    let x0 = (img.width - side) / 2;
    let y0 = (img.height - side) / 2;
    if side == img.width && side == img.height {
        return img.clone();
    }
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        let row = ((y0 + y) * img.width + x0) * 3;
        data.extend_from_slice(&img.data[row..row + side * 3]);
    }
    Rgb8Image {
        width: side,
        height: side,
        data,
    }
}

/// Bilinear resize of an RGB image, per channel.
pub fn resize_rgb_bilinear(img: &Rgb8Image, dw: usize, dh: usize) -> Rgb8Image {
    if img.width == dw && img.height == dh {
        return img.clone();
    }
    let n = img.width * img.height;
    let mut planes = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for px in img.data.chunks_exact(3) {
        planes[0].push(px[0] as f32);
        planes[1].push(px[1] as f32);
        planes[2].push(px[2] as f32);
    }
    let resized: Vec<Vec<f32>> = planes
        .iter()
        .map(|p| resize_plane_bilinear(p, img.width, img.height, dw, dh))
        .collect();
    let mut data = Vec::with_capacity(dw * dh * 3);
    for i in 0..dw * dh {
        for plane in &resized {
            data.push((plane[i] + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    Rgb8Image {
        width: dw,
        height: dh,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity() {
        let src = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(resize_plane_bilinear(&src, 2, 2, 2, 2), src);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let src = vec![7.0; 16];
        let out = resize_plane_bilinear(&src, 4, 4, 7, 3);
        for v in out {
            assert!((v - 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_constant() {
        let src = vec![3.5; 64];
        let out = downsample_plane_area(&src, 8, 8, 4, 4);
        assert_eq!(out, vec![3.5; 16]);
    }

    #[test]
    fn downsample_averages_blocks() {
        let src = vec![0.0, 2.0, 4.0, 6.0];
        let out = downsample_plane_area(&src, 2, 2, 1, 1);
        assert_eq!(out, vec![3.0]);
    }

    #[test]
    fn center_crop_is_centered() {
        // 4x2 image, crop should take columns 1..3
        let mut data = Vec::new();
        for y in 0..2u8 {
            for x in 0..4u8 {
                data.extend_from_slice(&[x * 10 + y, 0, 0]);
            }
        }
        let img = Rgb8Image::new(4, 2, data).unwrap();
        let c = center_crop_square(&img);
        assert_eq!((c.width, c.height), (2, 2));
        assert_eq!(c.pixel(0, 0)[0], 10);
        assert_eq!(c.pixel(1, 1)[0], 21);
    }
}
