//! 8-bit RGB PNG input/output. Quantization happens only here.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Image;

pub fn load_rgb<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8<T: Scalar>(img: &RgbImage) -> Image<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = T::one() / T::lit(255.0);
    Image::from_fn(&[3, h, w], |i| {
        T::from_u8(img.get_pixel(i[2] as u32, i[1] as u32)[i[0]]).unwrap() * scale
    })
}

pub fn to_rgb8<T: Scalar>(img: &Image<T>) -> RgbImage {
    let (c, h, w) = img.chw();
    assert!(c == 3 || c == 1, "expected 1 or 3 channels, got {c}");
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let q = |ch: usize| quantize(img.at(ch.min(c - 1), y as usize, x as usize));
        Rgb([q(0), q(1), q(2)])
    })
}

/// Rounds a `[0, 1]` value to the nearest 8-bit level, clamping out-of-range input.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let f = v.to_f64_lossy();
    if f.is_nan() {
        return 0;
    }
    (f.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    to_rgb8(img).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Horizontal concatenation of equally tall images.
pub fn hstack<T: Scalar>(images: &[&Image<T>]) -> Result<Image<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("no images to stack".into()))?;
    let h = first.height();
    if images.iter().any(|i| i.height() != h || i.channels() != 3) {
        return Err(Error::Shape("contact sheet images must share height".into()));
    }
    let total_w: usize = images.iter().map(|i| i.width()).sum();
    let mut out = Image::zeros(&[3, h, total_w]);
    let mut x0 = 0;
    for img in images {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..img.width() {
                    *out.at_mut(c, y, x0 + x) = img.at(c, y, x);
                }
            }
        }
        x0 += img.width();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(0.0f32), 0);
        assert_eq!(quantize(1.0f32), 255);
        assert_eq!(quantize(2.0f64), 255);
        assert_eq!(quantize(-1.0f64), 0);
        assert_eq!(quantize(0.5f64), 128);
    }

    #[test]
    fn png_round_trip_within_half_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::<f64>::from_fn(&[3, 5, 7], |i| ((i[0] * 31 + i[1] * 7 + i[2]) % 17) as f64 / 16.0);
        save_rgb(&path, &img).unwrap();
        let back: Image<f64> = load_rgb(&path).unwrap();
        assert!(img.max_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn hstack_widths_add() {
        let a = Image::<f32>::zeros(&[3, 4, 2]);
        let b = Image::<f32>::full(&[3, 4, 3], 1.0);
        let s = hstack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[3, 4, 5]);
        assert_eq!(s.at(1, 2, 2), 1.0);
        assert!(hstack(&[&a, &Image::<f32>::zeros(&[3, 5, 2])]).is_err());
    }
}
