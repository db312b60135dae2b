//! Spherical panorama geometry and virtual-camera rendering.
//!
//! Conventions:
//! - Camera frame: `+x` right, `+y` down, `+z` along the optical axis.
//! - A panorama pixel coordinate `(x, y)` maps linearly to longitude
//!   `theta = 2*pi*x/W` and latitude `phi = pi*y/H - pi/2`; the viewing
//!   direction of `(theta, phi)` is `(cos(phi) sin(theta), sin(phi), cos(phi) cos(theta))`.
//! - Euler angles compose as `R = Rz(bz) * Ry(by) * Rx(bx)`, so `bz` rolls
//!   the camera about its optical axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Image;

/// Full-sphere equirectangular RGB panorama, width exactly twice the height.
#[derive(Clone, Debug)]
pub struct EquirectPanorama<T> {
    pixels: Image<T>,
}

impl<T: Scalar> EquirectPanorama<T> {
    pub fn new(pixels: Image<T>) -> Result<Self> {
        if pixels.shape().len() != 3 || pixels.channels() != 3 {
            return Err(Error::Input(format!(
                "panorama must be [3, H, W], got {:?}",
                pixels.shape()
            )));
        }
        let (_, h, w) = pixels.chw();
        if h == 0 || w != 2 * h {
            return Err(Error::Input(format!("panorama must have 2:1 aspect, got {w}x{h}")));
        }
        if pixels
            .data()
            .iter()
            .any(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
        {
            return Err(Error::Input("panorama values must be finite and in [0, 1]".into()));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Image<T> {
        &self.pixels
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    /// Bilinear sample at continuous pixel coordinates; longitude wraps,
    /// latitude clamps to the first/last row.
    pub fn sample(&self, x: T, y: T, out: &mut [T; 3]) {
        let (_, h, w) = self.pixels.chw();
        let wf = T::from_usize(w).unwrap();
        let mut xw = x % wf;
        if xw < T::zero() {
            xw += wf;
        }
        let yc = y.max(T::zero()).min(T::from_usize(h - 1).unwrap());
        let x0f = xw.floor();
        let y0f = yc.floor();
        let fx = xw - x0f;
        let fy = yc - y0f;
        let x0 = x0f.to_usize().unwrap_or(0) % w;
        let x1 = (x0 + 1) % w;
        let y0 = y0f.to_usize().unwrap_or(0).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let one = T::one();
        for (c, o) in out.iter_mut().enumerate() {
            let plane = self.pixels.channel(c);
            let top = plane[y0 * w + x0] * (one - fx) + plane[y0 * w + x1] * fx;
            let bot = plane[y1 * w + x0] * (one - fx) + plane[y1 * w + x1] * fx;
            *o = top * (one - fy) + bot * fy;
        }
    }
}

/// Maps a panorama pixel coordinate to `(theta, phi)` in radians.
pub fn equirect_to_sphere<T: Scalar>(x: T, y: T, width: usize, height: usize) -> Result<(T, T)> {
    let (wf, hf) = (T::from_usize(width).unwrap(), T::from_usize(height).unwrap());
    if !(x >= T::zero() && x < wf && y >= T::zero() && y < hf) {
        return Err(Error::Domain(format!(
            "pixel ({x}, {y}) outside {width}x{height} panorama"
        )));
    }
    let theta = T::TAU() * x / wf;
    let phi = T::PI() * (y / hf) - T::FRAC_PI_2();
    Ok((theta, phi))
}

/// Inverse of [`equirect_to_sphere`] for `theta` in `[0, 2pi)` and `phi` in `[-pi/2, pi/2)`.
pub fn sphere_to_equirect<T: Scalar>(theta: T, phi: T, width: usize, height: usize) -> Result<(T, T)> {
    if !(theta >= T::zero() && theta < T::TAU() && phi >= -T::FRAC_PI_2() && phi < T::FRAC_PI_2()) {
        return Err(Error::Domain(format!(
            "spherical coordinate ({theta}, {phi}) outside [0, 2pi) x [-pi/2, pi/2)"
        )));
    }
    let (wf, hf) = (T::from_usize(width).unwrap(), T::from_usize(height).unwrap());
    Ok((theta * wf / T::TAU(), (phi + T::FRAC_PI_2()) * hf / T::PI()))
}

/// Unit viewing direction for spherical coordinates.
pub fn sphere_direction<T: Scalar>(theta: T, phi: T) -> [T; 3] {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    [cp * st, sp, cp * ct]
}

/// Spherical coordinates `(theta in [0, 2pi), phi in [-pi/2, pi/2])` of a direction.
pub fn direction_to_sphere<T: Scalar>(d: [T; 3]) -> (T, T) {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let mut theta = d[0].atan2(d[2]);
    if theta < T::zero() {
        theta += T::TAU();
    }
    if theta >= T::TAU() {
        theta = T::zero();
    }
    let phi = (d[1] / norm).max(-T::one()).min(T::one()).asin();
    (theta, phi)
}

/// Euler angles in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EulerRotation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EulerRotation {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Euclidean norm of the angle vector, in degrees.
    pub fn magnitude(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> UnitQuaternion<T> {
    pub fn identity() -> Self {
        Self {
            w: T::one(),
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    /// Normalizes `(w, x, y, z)`; fails on a zero or non-finite input.
    pub fn new_normalize(w: T, x: T, y: T, z: T) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n <= T::epsilon() {
            return Err(Error::Domain(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: [T; 3], angle: T) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle / T::lit(2.0)).sin_cos();
        Self {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn neg(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * o` (apply `o` first, then `self`).
    pub fn mul(&self, o: &Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// Row-major rotation matrix. Quadratic in the components, hence identical for `q` and `-q`.
    pub fn to_matrix(&self) -> [[T; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two = T::lit(2.0);
        let one = T::one();
        [
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ]
    }

    pub fn rotate(&self, v: [T; 3]) -> [T; 3] {
        apply_matrix(&self.to_matrix(), v)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> T {
        T::lit(2.0) * self.w.abs().min(T::one()).acos()
    }

    /// Spherical linear interpolation along the shorter arc.
    ///
    /// Falls back to normalized linear interpolation when the endpoints are
    /// nearly parallel (`dot > 1 - 1e-7`).
    pub fn slerp(&self, other: &Self, t: T) -> Self {
        let mut q1 = *other;
        let mut d = self.dot(&q1);
        if d < T::zero() {
            q1 = q1.neg();
            d = -d;
        }
        if d > T::one() - T::lit(1e-7) {
            let lerp = |a: T, b: T| a + t * (b - a);
            return Self::new_normalize(
                lerp(self.w, q1.w),
                lerp(self.x, q1.x),
                lerp(self.y, q1.y),
                lerp(self.z, q1.z),
            )
            .unwrap_or(*self);
        }
        let omega = d.min(T::one()).acos();
        let s = omega.sin();
        let a = ((T::one() - t) * omega).sin() / s;
        let b = (t * omega).sin() / s;
        let q = Self {
            w: a * self.w + b * q1.w,
            x: a * self.x + b * q1.x,
            y: a * self.y + b * q1.y,
            z: a * self.z + b * q1.z,
        };
        Self::new_normalize(q.w, q.x, q.y, q.z).unwrap_or(q)
    }
}

/// Free-function form of [`UnitQuaternion::slerp`].
pub fn slerp<T: Scalar>(q0: &UnitQuaternion<T>, q1: &UnitQuaternion<T>, t: T) -> UnitQuaternion<T> {
    q0.slerp(q1, t)
}

fn apply_matrix<T: Scalar>(m: &[[T; 3]; 3], v: [T; 3]) -> [T; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Quaternion of `R = Rz(z) * Ry(y) * Rx(x)` for angles in degrees.
pub fn euler_to_quaternion<T: Scalar>(rot: &EulerRotation) -> UnitQuaternion<T> {
    let axis_rot =
        |axis: [f64; 3], deg: f64| UnitQuaternion::<T>::from_axis_angle(axis.map(T::lit), T::lit(deg.to_radians()));
    let qx = axis_rot([1.0, 0.0, 0.0], rot.x);
    let qy = axis_rot([0.0, 1.0, 0.0], rot.y);
    let qz = axis_rot([0.0, 0.0, 1.0], rot.z);
    qz.mul(&qy).mul(&qx)
}

/// Pinhole camera with square pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualCamera {
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for VirtualCamera {
    fn default() -> Self {
        Self {
            fov_deg: 60.0,
            width: 128,
            height: 128,
        }
    }
}

impl VirtualCamera {
    pub fn new(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { fov_deg, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Input(format!(
                "field of view must lie in (0, 180), got {}",
                self.fov_deg
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Input("camera size must be positive".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Unnormalized camera-frame ray through pixel center `(u, v)`.
    pub fn ray<T: Scalar>(&self, u: T, v: T) -> [T; 3] {
        let f = T::lit(self.focal());
        let cx = T::lit((self.width as f64 - 1.0) / 2.0);
        let cy = T::lit((self.height as f64 - 1.0) / 2.0);
        [(u - cx) / f, (v - cy) / f, T::one()]
    }
}

/// Renders the view seen by a camera with the given orientation.
///
/// A camera ray `r` is rotated into the world as `R(q) r`; the panorama is
/// sampled bilinearly at the spherical coordinates of that direction.
pub fn render_view<T: Scalar>(
    pano: &EquirectPanorama<T>,
    orientation: &UnitQuaternion<T>,
    cam: &VirtualCamera,
) -> Image<T> {
    let m = orientation.to_matrix();
    let (pw, ph) = (pano.width(), pano.height());
    let mut out = Image::zeros(&[3, cam.height, cam.width]);
    let plane = cam.height * cam.width;
    let mut rgb = [T::zero(); 3];
    for v in 0..cam.height {
        for u in 0..cam.width {
            let ray = cam.ray(T::from_usize(u).unwrap(), T::from_usize(v).unwrap());
            let d = apply_matrix(&m, ray);
            let (px, py) = direction_to_pixel(d, pw, ph);
            pano.sample(px, py, &mut rgb);
            let idx = v * cam.width + u;
            let data = out.data_mut();
            data[idx] = rgb[0];
            data[plane + idx] = rgb[1];
            data[2 * plane + idx] = rgb[2];
        }
    }
    out
}

fn direction_to_pixel<T: Scalar>(d: [T; 3], w: usize, h: usize) -> (T, T) {
    let (theta, phi) = direction_to_sphere(d);
    let wf = T::from_usize(w).unwrap();
    let hf = T::from_usize(h).unwrap();
    (theta * wf / T::TAU(), (phi + T::FRAC_PI_2()) * hf / T::PI())
}

/// Resamples a panorama so that `rotate_panorama(P, q)(d) = P(R(q) d)`.
///
/// Consequently `render_view(rotate_panorama(P, q1), q0) = render_view(P, q1 * q0)`
/// up to resampling error.
pub fn rotate_panorama<T: Scalar>(pano: &EquirectPanorama<T>, q: &UnitQuaternion<T>) -> EquirectPanorama<T> {
    let m = q.to_matrix();
    let (w, h) = (pano.width(), pano.height());
    let mut out = Image::zeros(&[3, h, w]);
    let plane = w * h;
    let mut rgb = [T::zero(); 3];
    for y in 0..h {
        for x in 0..w {
            let theta = T::TAU() * T::from_usize(x).unwrap() / T::from_usize(w).unwrap();
            let phi = T::PI() * T::from_usize(y).unwrap() / T::from_usize(h).unwrap() - T::FRAC_PI_2();
            let d = apply_matrix(&m, sphere_direction(theta, phi));
            let (px, py) = direction_to_pixel(d, w, h);
            pano.sample(px, py, &mut rgb);
            let idx = y * w + x;
            let data = out.data_mut();
            data[idx] = rgb[0];
            data[plane + idx] = rgb[1];
            data[2 * plane + idx] = rgb[2];
        }
    }
    EquirectPanorama { pixels: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sphere_mapping_endpoints() {
        let (w, h) = (400usize, 200usize);
        let (t, p) = equirect_to_sphere(0.0, h as f64 / 2.0, w, h).unwrap();
        assert_eq!((t, p), (0.0, 0.0));
        let (t, p) = equirect_to_sphere(w as f64 / 2.0, 0.0, w, h).unwrap();
        assert!((t - PI).abs() < 1e-15 && (p + PI / 2.0).abs() < 1e-15);
        let (t, p) = equirect_to_sphere(w as f64 / 4.0, 3.0 * h as f64 / 4.0, w, h).unwrap();
        assert!((t - PI / 2.0).abs() < 1e-15 && (p - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_mapping_rejects_out_of_range() {
        assert!(equirect_to_sphere(400.0, 10.0, 400, 200).is_err());
        assert!(equirect_to_sphere(-0.5, 10.0, 400, 200).is_err());
        assert!(equirect_to_sphere(1.0, 200.0, 400, 200).is_err());
        assert!(sphere_to_equirect(7.0, 0.0, 400, 200).is_err());
    }

    #[test]
    fn euler_identity_and_half_turn() {
        let q: UnitQuaternion<f64> = euler_to_quaternion(&EulerRotation::new(0.0, 0.0, 0.0));
        assert_eq!(q, UnitQuaternion::identity());
        let q: UnitQuaternion<f64> = euler_to_quaternion(&EulerRotation::new(180.0, 0.0, 0.0));
        let s = q.x.signum();
        assert!((q.w * s).abs() < 1e-15);
        assert!((q.x * s - 1.0).abs() < 1e-15);
        assert!(q.y.abs() < 1e-15 && q.z.abs() < 1e-15);
    }

    #[test]
    fn slerp_endpoints() {
        let q0: UnitQuaternion<f64> = euler_to_quaternion(&EulerRotation::new(5.0, -3.0, 8.0));
        let q1: UnitQuaternion<f64> = euler_to_quaternion(&EulerRotation::new(-7.0, 2.0, 1.0));
        let a = q0.slerp(&q1, 0.0);
        let b = q0.slerp(&q1, 1.0);
        assert!(a.dot(&q0) > 1.0 - 1e-12);
        assert!(b.dot(&q1) > 1.0 - 1e-12);
    }

    #[test]
    fn slerp_takes_short_arc() {
        let q0 = UnitQuaternion::<f64>::identity();
        let q1 = UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], 0.4).neg();
        let mid = q0.slerp(&q1, 0.5);
        assert!((mid.angle() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn panorama_validation() {
        assert!(EquirectPanorama::new(Image::<f32>::zeros(&[3, 10, 20])).is_ok());
        assert!(EquirectPanorama::new(Image::<f32>::zeros(&[3, 10, 21])).is_err());
        assert!(EquirectPanorama::new(Image::<f32>::full(&[3, 10, 20], 1.5)).is_err());
    }

    #[test]
    fn camera_validation() {
        assert!(VirtualCamera::new(60.0, 8, 8).is_ok());
        assert!(VirtualCamera::new(180.0, 8, 8).is_err());
        assert!(VirtualCamera::new(0.0, 8, 8).is_err());
        assert!(VirtualCamera::new(60.0, 0, 8).is_err());
    }

    #[test]
    fn longitude_wraps_in_sampling() {
        let pano =
            EquirectPanorama::new(Image::<f64>::from_fn(&[3, 4, 8], |i| if i[2] == 0 { 1.0 } else { 0.0 })).unwrap();
        let mut rgb = [0.0; 3];
        pano.sample(7.5, 1.0, &mut rgb);
        assert!((rgb[0] - 0.5).abs() < 1e-12);
        pano.sample(-0.25, 1.0, &mut rgb);
        assert!((rgb[0] - 0.75).abs() < 1e-12);
    }
}
