//! Blurred/sharp training pair synthesis.
//!
//! Rotational samples sweep a virtual camera across a panorama and average
//! the rendered frames; dynamic samples average a window of consecutive
//! video frames.

pub mod dataset;
pub mod procedural;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    euler_to_quaternion, render_view, EquirectPanorama, EulerRotation, UnitQuaternion, VirtualCamera,
};
use crate::scalar::Scalar;
use crate::tensor::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Rotational,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub mode: SynthMode,
    /// Range of each Euler component of the blur rotation, degrees.
    pub rotation_range: [f64; 2],
    /// Frame-count offset in `n = round(c + |beta| / 3)`.
    pub c: f64,
    /// Window length for dynamic blur (odd, >= 3).
    pub n_dynamic: usize,
    /// Square crop taken from video frames in dynamic mode.
    pub crop_size: usize,
    /// Square render size in rotational mode.
    pub output_size: usize,
    pub fov_deg: f64,
    /// Pitch range of the random initial camera orientation, degrees.
    pub init_pitch_range: [f64; 2],
    pub samples_per_panorama: usize,
    pub window_stride: usize,
    pub crops_per_window: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: SynthMode::Rotational,
            rotation_range: [-10.0, 10.0],
            c: 10.0,
            n_dynamic: 7,
            crop_size: 256,
            output_size: 128,
            fov_deg: 60.0,
            init_pitch_range: [-30.0, 30.0],
            samples_per_panorama: 26,
            window_stride: 1,
            crops_per_window: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.rotation_range;
        if !(lo <= hi && lo >= -180.0 && hi <= 180.0) {
            return Err(Error::Config(format!(
                "rotation_range {:?} must be ordered and within [-180, 180]",
                self.rotation_range
            )));
        }
        let [plo, phi] = self.init_pitch_range;
        if !(plo <= phi && plo >= -90.0 && phi <= 90.0) {
            return Err(Error::Config(format!(
                "init_pitch_range {:?} must be ordered and within [-90, 90]",
                self.init_pitch_range
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if self.n_dynamic < 3 || self.n_dynamic % 2 == 0 {
            return Err(Error::Config(format!(
                "n_dynamic must be odd and >= 3, got {}",
                self.n_dynamic
            )));
        }
        if self.crop_size == 0 || self.output_size == 0 {
            return Err(Error::Config("crop_size and output_size must be positive".into()));
        }
        if self.window_stride == 0 {
            return Err(Error::Config("window_stride must be positive".into()));
        }
        self.camera().map(|_| ())
    }

    pub fn camera(&self) -> Result<VirtualCamera> {
        VirtualCamera::new(self.fov_deg, self.output_size, self.output_size)
    }
}

/// A blurred image with its ordered sharp frames.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurSample<T> {
    pub blurred: Image<T>,
    pub frames: Vec<Image<T>>,
    /// Blur rotation (rotational mode only).
    pub rotation: Option<EulerRotation>,
    pub seed: u64,
    /// Top-left corner `(y, x)` of the crop (dynamic mode only).
    pub crop_origin: Option<(usize, usize)>,
}

impl<T: Scalar> BlurSample<T> {
    pub fn n(&self) -> usize {
        self.frames.len()
    }

    /// Indices of the (initial, middle, final) frames.
    pub fn key_indices(&self) -> [usize; 3] {
        key_indices(self.n())
    }

    /// Ground-truth sequence of `count` frames: indices
    /// `round(i * (n - 1) / (count - 1))`, which for `count = 3` is the
    /// (initial, middle, final) triple and for `count = n` the full sequence.
    pub fn gt_sequence(&self, count: usize) -> Result<Vec<&Image<T>>> {
        Ok(sequence_indices(self.n(), count)?
            .into_iter()
            .map(|i| &self.frames[i])
            .collect())
    }
}

pub fn key_indices(n: usize) -> [usize; 3] {
    let middle = ((n as f64 - 1.0) / 2.0).round() as usize;
    [0, middle, n.saturating_sub(1)]
}

/// Evenly spread indices of `count` frames out of `n`.
pub fn sequence_indices(n: usize, count: usize) -> Result<Vec<usize>> {
    if count < 2 || count > n {
        return Err(Error::Input(format!(
            "cannot select {count} ground-truth frames from a sequence of {n}"
        )));
    }
    Ok((0..count)
        .map(|i| ((i * (n - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect())
}

/// `round(c + |beta| / 3)`, clamped to at least 3 frames.
pub fn frame_count(beta: &EulerRotation, c: f64) -> usize {
    let n = (c + beta.magnitude() / 3.0).round();
    (n.max(3.0)) as usize
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Renders a rotational-blur sample.
///
/// The initial orientation has uniform yaw and a pitch from
/// `init_pitch_range`; the blur rotation `beta` has each component uniform in
/// `rotation_range` and is applied in the camera frame. Frames are rendered
/// at `slerp(q_init, q_final, i / (n - 1))`.
pub fn generate_rotational_sample<T: Scalar>(
    pano: &EquirectPanorama<T>,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<BlurSample<T>> {
    if cfg.mode != SynthMode::Rotational {
        return Err(Error::Input("generate_rotational_sample needs rotational mode".into()));
    }
    cfg.validate()?;
    let cam = cfg.camera()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw = rng.gen_range(0.0..360.0);
    let pitch = uniform(&mut rng, cfg.init_pitch_range);
    let beta = EulerRotation::new(
        uniform(&mut rng, cfg.rotation_range),
        uniform(&mut rng, cfg.rotation_range),
        uniform(&mut rng, cfg.rotation_range),
    );
    let q_yaw = UnitQuaternion::from_axis_angle([T::zero(), T::one(), T::zero()], T::lit(f64::to_radians(yaw)));
    let q_pitch = UnitQuaternion::from_axis_angle([T::one(), T::zero(), T::zero()], T::lit(f64::to_radians(pitch)));
    let q_init = q_yaw.mul(&q_pitch);
    let q_final = q_init.mul(&euler_to_quaternion(&beta));
    let n = frame_count(&beta, cfg.c);
    let frames: Vec<Image<T>> = (0..n)
        .map(|i| {
            let t = T::lit(i as f64 / (n - 1) as f64);
            render_view(pano, &q_init.slerp(&q_final, t), &cam)
        })
        .collect();
    let blurred = Image::mean_of(&frames)?;
    Ok(BlurSample {
        blurred,
        frames,
        rotation: Some(beta),
        seed,
        crop_origin: None,
    })
}

/// Start indices of the windows of `n` consecutive frames in a clip of
/// `len`, every `stride` frames.
pub fn dynamic_windows(len: usize, n: usize, stride: usize) -> Vec<usize> {
    if n == 0 || stride == 0 || len < n {
        return Vec::new();
    }
    (0..=len - n).step_by(stride).collect()
}

fn check_dynamic<T: Scalar>(frames_in: &[Image<T>], cfg: &SynthConfig) -> Result<()> {
    if cfg.mode != SynthMode::Dynamic {
        return Err(Error::Input("dynamic synthesis needs dynamic mode".into()));
    }
    let n = cfg.n_dynamic;
    if n < 3 || n % 2 == 0 {
        return Err(Error::Input(format!(
            "dynamic window must be odd and >= 3 so a middle frame exists, got {n}"
        )));
    }
    if frames_in.len() < n {
        return Err(Error::Input(format!(
            "window of {n} frames exceeds the {} available",
            frames_in.len()
        )));
    }
    let shape = frames_in[0].shape();
    if frames_in.iter().any(|f| f.shape() != shape) {
        return Err(Error::Input("video frames must share dimensions".into()));
    }
    let (_, h, w) = frames_in[0].chw();
    if cfg.crop_size > h || cfg.crop_size > w {
        return Err(Error::Input(format!(
            "crop {} exceeds frame size {w}x{h}",
            cfg.crop_size
        )));
    }
    Ok(())
}

/// Averages a random window of `cfg.n_dynamic` consecutive frames inside a
/// random `crop_size` square.
pub fn generate_dynamic_sample<T: Scalar>(
    frames_in: &[Image<T>],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<BlurSample<T>> {
    check_dynamic(frames_in, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..=frames_in.len() - cfg.n_dynamic);
    dynamic_crop(frames_in, cfg, start, seed, &mut rng)
}

/// Averages the window starting at `start` inside a random `crop_size` square.
pub fn generate_dynamic_window<T: Scalar>(
    frames_in: &[Image<T>],
    cfg: &SynthConfig,
    start: usize,
    seed: u64,
) -> Result<BlurSample<T>> {
    check_dynamic(frames_in, cfg)?;
    if start + cfg.n_dynamic > frames_in.len() {
        return Err(Error::Input(format!(
            "window at {start} of {} frames runs past the {} available",
            cfg.n_dynamic,
            frames_in.len()
        )));
    }
    dynamic_crop(frames_in, cfg, start, seed, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn dynamic_crop<T: Scalar>(
    frames_in: &[Image<T>],
    cfg: &SynthConfig,
    start: usize,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<BlurSample<T>> {
    let (n, crop) = (cfg.n_dynamic, cfg.crop_size);
    let (_, h, w) = frames_in[0].chw();
    let y0 = rng.gen_range(0..=h - crop);
    let x0 = rng.gen_range(0..=w - crop);
    let frames = frames_in[start..start + n]
        .iter()
        .map(|f| f.crop(y0, x0, crop, crop))
        .collect::<Result<Vec<_>>>()?;
    let blurred = Image::mean_of(&frames)?;
    Ok(BlurSample {
        blurred,
        frames,
        rotation: None,
        seed,
        crop_origin: Some((y0, x0)),
    })
}
