//! Differentiable bilinear warping of feature maps.
//!
//! Both operators resample a `[C, H, W]` feature at per-pixel source
//! locations with zero padding outside the grid and return the exact
//! gradients with respect to the feature and to the geometric parameters.
//!
//! Normalized coordinates span `[-1, 1]` with `-1` at the first pixel center
//! and `+1` at the last (align-corners). Source positions are computed as a
//! displacement from the output pixel so that identity parameters and zero
//! flow reproduce the input bit-exactly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Row-major 2x3 affine matrix `[a11, a12, t1, a21, a22, t2]` acting on
/// normalized output coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams<T>(pub [T; 6]);

impl<T: Scalar> AffineParams<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self([o, z, z, z, o, z])
    }

    pub fn from_slice(v: &[T]) -> Result<Self> {
        let arr: [T; 6] = v
            .try_into()
            .map_err(|_| Error::Shape(format!("affine parameters need 6 values, got {}", v.len())))?;
        Ok(Self(arr))
    }

    /// Translation by whole or fractional pixels on an `h x w` grid.
    pub fn translation_pixels(dx: T, dy: T, h: usize, w: usize) -> Self {
        let mut p = Self::identity();
        p.0[2] = dx * T::lit(2.0) / T::from_usize(w.max(2) - 1).unwrap();
        p.0[5] = dy * T::lit(2.0) / T::from_usize(h.max(2) - 1).unwrap();
        p
    }

    fn check_finite(&self) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("affine parameters {:?}", self.0)))
        }
    }
}

/// Per-pixel displacement field `[2, H, W]` in pixels (channel 0 = dx, 1 = dy).
pub type MotionFlow<T> = FeatureMap<T>;

fn normalized<T: Scalar>(i: usize, len: usize) -> T {
    if len <= 1 {
        T::zero()
    } else {
        T::lit(2.0) * T::from_usize(i).unwrap() / T::from_usize(len - 1).unwrap() - T::one()
    }
}

fn half_extent<T: Scalar>(len: usize) -> T {
    T::from_usize(len.saturating_sub(1)).unwrap() / T::lit(2.0)
}

fn affine_coords<T: Scalar>(h: usize, w: usize, theta: &AffineParams<T>) -> Vec<(T, T)> {
    let [a11, a12, t1, a21, a22, t2] = theta.0;
    let (sx, sy) = (half_extent::<T>(w), half_extent::<T>(h));
    let one = T::one();
    let mut coords = Vec::with_capacity(h * w);
    for y in 0..h {
        let vn: T = normalized(y, h);
        for x in 0..w {
            let un: T = normalized(x, w);
            let dx = ((a11 - one) * un + a12 * vn + t1) * sx;
            let dy = (a21 * un + (a22 - one) * vn + t2) * sy;
            coords.push((T::from_usize(x).unwrap() + dx, T::from_usize(y).unwrap() + dy));
        }
    }
    coords
}

fn flow_coords<T: Scalar>(flow: &MotionFlow<T>) -> Vec<(T, T)> {
    let (_, h, w) = flow.chw();
    let (fx, fy) = (flow.channel(0), flow.channel(1));
    let mut coords = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            coords.push((T::from_usize(x).unwrap() + fx[i], T::from_usize(y).unwrap() + fy[i]));
        }
    }
    coords
}

#[derive(Clone, Copy)]
struct Taps<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

#[inline]
fn taps<T: Scalar>(xs: T, ys: T) -> Taps<T> {
    let x0f = xs.floor();
    let y0f = ys.floor();
    Taps {
        x0: x0f.to_isize().unwrap_or(isize::MIN / 2),
        y0: y0f.to_isize().unwrap_or(isize::MIN / 2),
        fx: xs - x0f,
        fy: ys - y0f,
    }
}

#[inline]
fn fetch<T: Scalar>(plane: &[T], h: usize, w: usize, x: isize, y: isize) -> T {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

/// Samples every channel of `u` at the given source coordinates.
pub fn sample_at<T: Scalar>(u: &FeatureMap<T>, coords: &[(T, T)]) -> FeatureMap<T> {
    let (c, h, w) = u.chw();
    assert_eq!(coords.len(), h * w);
    let one = T::one();
    let mut out = FeatureMap::zeros(&[c, h, w]);
    let taps: Vec<Taps<T>> = coords.iter().map(|&(xs, ys)| taps(xs, ys)).collect();
    for ch in 0..c {
        let plane = u.channel(ch);
        let dst = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for (o, t) in dst.iter_mut().zip(&taps) {
            let v00 = fetch(plane, h, w, t.x0, t.y0);
            let v10 = fetch(plane, h, w, t.x0 + 1, t.y0);
            let v01 = fetch(plane, h, w, t.x0, t.y0 + 1);
            let v11 = fetch(plane, h, w, t.x0 + 1, t.y0 + 1);
            *o = (v00 * (one - t.fx) + v10 * t.fx) * (one - t.fy) + (v01 * (one - t.fx) + v11 * t.fx) * t.fy;
        }
    }
    out
}

/// Adjoint of [`sample_at`]: gradient with respect to the feature and to each
/// source coordinate (summed over channels).
pub fn sample_at_backward<T: Scalar>(
    u: &FeatureMap<T>,
    coords: &[(T, T)],
    grad_out: &FeatureMap<T>,
) -> (FeatureMap<T>, Vec<(T, T)>) {
    let (c, h, w) = u.chw();
    assert_eq!(grad_out.shape(), u.shape());
    let one = T::one();
    let mut grad_u = FeatureMap::zeros(&[c, h, w]);
    let mut grad_xy = vec![(T::zero(), T::zero()); h * w];
    let taps: Vec<Taps<T>> = coords.iter().map(|&(xs, ys)| taps(xs, ys)).collect();
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < w as isize && y < h as isize;
    for ch in 0..c {
        let plane = u.channel(ch);
        let go = grad_out.channel(ch);
        let gu = &mut grad_u.data_mut()[ch * h * w..(ch + 1) * h * w];
        for (p, t) in taps.iter().enumerate() {
            let g = go[p];
            if g == T::zero() {
                continue;
            }
            let v00 = fetch(plane, h, w, t.x0, t.y0);
            let v10 = fetch(plane, h, w, t.x0 + 1, t.y0);
            let v01 = fetch(plane, h, w, t.x0, t.y0 + 1);
            let v11 = fetch(plane, h, w, t.x0 + 1, t.y0 + 1);
            let dx = (v10 - v00) * (one - t.fy) + (v11 - v01) * t.fy;
            let dy = (v01 - v00) * (one - t.fx) + (v11 - v10) * t.fx;
            grad_xy[p].0 += g * dx;
            grad_xy[p].1 += g * dy;
            let corners = [
                (t.x0, t.y0, (one - t.fx) * (one - t.fy)),
                (t.x0 + 1, t.y0, t.fx * (one - t.fy)),
                (t.x0, t.y0 + 1, (one - t.fx) * t.fy),
                (t.x0 + 1, t.y0 + 1, t.fx * t.fy),
            ];
            for (x, y, wgt) in corners {
                if inside(x, y) {
                    gu[y as usize * w + x as usize] += g * wgt;
                }
            }
        }
    }
    (grad_u, grad_xy)
}

/// Spatial-transformer sampling: `out(p) = U(A p)` with zero padding.
pub fn affine_grid_sample<T: Scalar>(u: &FeatureMap<T>, theta: &AffineParams<T>) -> Result<FeatureMap<T>> {
    theta.check_finite()?;
    check_rank3(u)?;
    let (_, h, w) = u.chw();
    Ok(sample_at(u, &affine_coords(h, w, theta)))
}

/// Gradients of [`affine_grid_sample`] with respect to `u` and `theta`.
pub fn affine_grid_sample_backward<T: Scalar>(
    u: &FeatureMap<T>,
    theta: &AffineParams<T>,
    grad_out: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, [T; 6])> {
    theta.check_finite()?;
    check_rank3(u)?;
    u.expect_same_shape(grad_out)?;
    let (_, h, w) = u.chw();
    let coords = affine_coords(h, w, theta);
    let (grad_u, grad_xy) = sample_at_backward(u, &coords, grad_out);
    let (sx, sy) = (half_extent::<T>(w), half_extent::<T>(h));
    let mut g = [T::zero(); 6];
    for y in 0..h {
        let vn: T = normalized(y, h);
        for x in 0..w {
            let un: T = normalized(x, w);
            let (gx, gy) = grad_xy[y * w + x];
            let gx = gx * sx;
            let gy = gy * sy;
            g[0] += gx * un;
            g[1] += gx * vn;
            g[2] += gx;
            g[3] += gy * un;
            g[4] += gy * vn;
            g[5] += gy;
        }
    }
    Ok((grad_u, g))
}

/// Local warping: `out(x, y) = U(x + dx(x, y), y + dy(x, y))` with zero padding.
pub fn local_warp<T: Scalar>(u: &FeatureMap<T>, flow: &MotionFlow<T>) -> Result<FeatureMap<T>> {
    check_flow(u, flow)?;
    Ok(sample_at(u, &flow_coords(flow)))
}

/// Gradients of [`local_warp`] with respect to `u` and the flow field.
pub fn local_warp_backward<T: Scalar>(
    u: &FeatureMap<T>,
    flow: &MotionFlow<T>,
    grad_out: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, MotionFlow<T>)> {
    check_flow(u, flow)?;
    u.expect_same_shape(grad_out)?;
    let (_, h, w) = u.chw();
    let (grad_u, grad_xy) = sample_at_backward(u, &flow_coords(flow), grad_out);
    let mut grad_flow = MotionFlow::zeros(&[2, h, w]);
    let data = grad_flow.data_mut();
    for (i, (gx, gy)) in grad_xy.into_iter().enumerate() {
        data[i] = gx;
        data[h * w + i] = gy;
    }
    Ok((grad_u, grad_flow))
}

fn check_rank3<T: Scalar>(u: &FeatureMap<T>) -> Result<()> {
    if u.shape().len() != 3 {
        return Err(Error::Shape(format!("expected [C, H, W], got {:?}", u.shape())));
    }
    Ok(())
}

fn check_flow<T: Scalar>(u: &FeatureMap<T>, flow: &MotionFlow<T>) -> Result<()> {
    check_rank3(u)?;
    check_rank3(flow)?;
    let (_, h, w) = u.chw();
    if flow.shape() != [2, h, w] {
        return Err(Error::Shape(format!(
            "flow {:?} does not match feature {:?}",
            flow.shape(),
            u.shape()
        )));
    }
    if !flow.all_finite() {
        return Err(Error::NonFinite("motion flow".into()));
    }
    Ok(())
}
