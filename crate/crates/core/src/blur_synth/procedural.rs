//! Seeded synthetic sources: textured panoramas and moving-scene videos.
//!
//! Used for tests, demos and desk-scale runs when no real panoramas or
//! high-speed footage are at hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{sphere_direction, EquirectPanorama};
use crate::scalar::Scalar;
use crate::tensor::Image;

struct Wave {
    freq: [f64; 3],
    phase: f64,
    amp: [f64; 3],
}

struct Blob {
    center: [f64; 3],
    radius: f64,
    color: [f64; 3],
}

/// Panorama of height `height` (width `2 * height`) built from smooth
/// waves over the sphere plus a scattering of hard-edged discs.
///
/// Everything is a function of the viewing direction, so the texture is
/// continuous across the longitude seam and at the poles.
pub fn panorama<T: Scalar>(height: usize, seed: u64) -> EquirectPanorama<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
        v.map(|c| c / n)
    };
    let waves: Vec<Wave> = (0..12)
        .map(|i| {
            let dir = unit(&mut rng);
            let f = 2.0 + 2.5 * i as f64;
            Wave {
                freq: dir.map(|c| c * f),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                amp: [
                    rng.gen_range(0.02..0.12),
                    rng.gen_range(0.02..0.12),
                    rng.gen_range(0.02..0.12),
                ],
            }
        })
        .collect();
    let blobs: Vec<Blob> = (0..40)
        .map(|_| Blob {
            center: unit(&mut rng),
            radius: rng.gen_range(0.05..0.3),
            color: [rng.gen(), rng.gen(), rng.gen()],
        })
        .collect();
    let width = 2 * height;
    let mut img = Image::<T>::zeros(&[3, height, width]);
    let plane = width * height;
    for y in 0..height {
        for x in 0..width {
            let theta = std::f64::consts::TAU * x as f64 / width as f64;
            let phi = std::f64::consts::PI * y as f64 / height as f64 - std::f64::consts::FRAC_PI_2;
            let d = sphere_direction(theta, phi);
            let mut rgb = [0.5; 3];
            for wv in &waves {
                let s = (wv.freq[0] * d[0] + wv.freq[1] * d[1] + wv.freq[2] * d[2] + wv.phase).sin();
                for c in 0..3 {
                    rgb[c] += wv.amp[c] * s;
                }
            }
            for b in &blobs {
                let dot = b.center[0] * d[0] + b.center[1] * d[1] + b.center[2] * d[2];
                let dist = dot.clamp(-1.0, 1.0).acos();
                if dist < b.radius {
                    for c in 0..3 {
                        rgb[c] = 0.35 * rgb[c] + 0.65 * b.color[c];
                    }
                }
            }
            let idx = y * width + x;
            for (c, v) in rgb.iter().enumerate() {
                img.data_mut()[c * plane + idx] = T::lit(v.clamp(0.0, 1.0));
            }
        }
    }
    EquirectPanorama::new(img).expect("procedural panorama is valid")
}

/// `count` frames of a scene whose textured background pans with a constant
/// velocity while a square object moves independently.
pub fn video<T: Scalar>(height: usize, width: usize, count: usize, seed: u64) -> Vec<Image<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg_vel: (f64, f64) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    let obj_vel: (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let obj_size = (height.min(width) as f64 * 0.25).max(2.0);
    let obj_start = (
        rng.gen_range(0.0..(height as f64 - obj_size).max(1.0)),
        rng.gen_range(0.0..(width as f64 - obj_size).max(1.0)),
    );
    let obj_color: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let waves: Vec<([f64; 2], f64, [f64; 3])> = (0..8)
        .map(|i| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let f = 0.05 + 0.06 * i as f64;
            (
                [a.cos() * f, a.sin() * f],
                rng.gen_range(0.0..std::f64::consts::TAU),
                [
                    rng.gen_range(0.03..0.12),
                    rng.gen_range(0.03..0.12),
                    rng.gen_range(0.03..0.12),
                ],
            )
        })
        .collect();
    (0..count)
        .map(|t| {
            let t = t as f64;
            let (oy, ox) = (obj_start.0 + obj_vel.0 * t, obj_start.1 + obj_vel.1 * t);
            Image::from_fn(&[3, height, width], |i| {
                let (c, y, x) = (i[0], i[1] as f64, i[2] as f64);
                let (sy, sx) = (y + bg_vel.0 * t, x + bg_vel.1 * t);
                let mut v = 0.5;
                for (f, p, amp) in &waves {
                    v += amp[c] * (f[0] * sx + f[1] * sy + p).sin();
                }
                if y >= oy && y < oy + obj_size && x >= ox && x < ox + obj_size {
                    v = obj_color[c];
                }
                T::lit(v.clamp(0.0, 1.0))
            })
        })
        .collect()
}
