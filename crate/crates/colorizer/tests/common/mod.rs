use colorizer::colorspace::{lab_to_rgb, LabImage, Rgb8Image};
use std::path::Path;

/// Synthetic color image: L varies smoothly with position and ab is a fixed
/// smooth function of L, so a network can learn the chroma mapping from the
/// lightness alone and generalize across phases. Values stay well inside the
/// sRGB gamut.
pub fn chroma_image(size: usize, phase: f64) -> Rgb8Image {
    let n = size * size;
    let mut lab = LabImage {
        width: size,
        height: size,
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for y in 0..size {
        for x in 0..size {
            let t = (x + y) as f64 / (2 * (size - 1)) as f64;
            let l = 50.0 + 15.0 * (std::f64::consts::TAU * (t + phase)).sin();
            let a = 30.0 * (l / 10.0).sin();
            let b = 25.0 * (l / 9.0).cos();
            lab.l.push(l as f32);
            lab.a.push(a as f32);
            lab.b.push(b as f32);
        }
    }
    lab_to_rgb(&lab)
}

pub fn save_png(img: &Rgb8Image, path: &Path) {
    image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .unwrap()
        .save(path)
        .unwrap();
}

pub fn write_dataset(dir: &Path, count: usize, size: usize, phase_offset: f64) {
    for i in 0..count {
        let phase = phase_offset + i as f64 * 0.613;
        save_png(
            &chroma_image(size, phase),
            &dir.join(format!("img{i:04}.png")),
        );
    }
}
