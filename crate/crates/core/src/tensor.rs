//! Dense row-major tensors.
//!
//! Feature maps and images are rank-3 tensors stored channel-major as
//! `[channels, height, width]`. Convolution weights are rank 4, linear
//! weights rank 2, biases and transform parameters rank 1.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// A rank-3 `[C, H, W]` tensor. RGB images have `C = 3` and values in `[0, 1]`.
pub type FeatureMap<T> = Tensor<T>;
pub type Image<T> = Tensor<T>;

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for axis in (0..shape.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected [C, H, W], got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn channels(&self) -> usize {
        self.chw().0
    }

    pub fn height(&self) -> usize {
        self.chw().1
    }

    pub fn width(&self) -> usize {
        self.chw().2
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut T {
        let (h, w) = (self.shape[1], self.shape[2]);
        &mut self.data[(c * h + y) * w + x]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Channel-wise concatenation of rank-3 tensors with equal spatial size.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (_, h, w) = first.chw();
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.chw();
            if (ph, pw) != (h, w) {
                return Err(Error::Shape(format!("concat spatial mismatch {h}x{w} vs {ph}x{pw}")));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![channels, h, w],
            data,
        })
    }

    /// Copies the window `[y0, y0 + h) x [x0, x0 + w)` of a rank-3 tensor.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let (c, sh, sw) = self.chw();
        if y0 + h > sh || x0 + w > sw {
            return Err(Error::Input(format!("crop {h}x{w} at ({y0}, {x0}) exceeds {sh}x{sw}")));
        }
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in y0..y0 + h {
                let row = (ch * sh + y) * sw;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Ok(Self {
            shape: vec![c, h, w],
            data,
        })
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    ///
    /// Halving an even dimension averages exact 2x2 blocks.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Self {
        let (c, h, w) = self.chw();
        let sy = h as f64 / out_h as f64;
        let sx = w as f64 / out_w as f64;
        let taps = |o: usize, scale: f64, len: usize| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let f = T::lit(src - i0 as f64);
            (i0, i1, f)
        };
        let ytaps: Vec<_> = (0..out_h).map(|y| taps(y, sy, h)).collect();
        let xtaps: Vec<_> = (0..out_w).map(|x| taps(x, sx, w)).collect();
        let mut data = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            let plane = self.channel(ch);
            for &(y0, y1, fy) in &ytaps {
                for &(x0, x1, fx) in &xtaps {
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    data.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
        Self {
            shape: vec![c, out_h, out_w],
            data,
        }
    }

    /// Pixel-wise arithmetic mean of equally shaped tensors.
    pub fn mean_of(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Input("mean of zero tensors".into()))?;
        let mut acc = Self::zeros(first.shape());
        for it in items {
            first.expect_same_shape(it)?;
            acc.add_assign(it);
        }
        acc.scale_assign(T::one() / T::from_usize(items.len()).unwrap());
        Ok(acc)
    }
}

/// Downsampling pyramid from coarsest to full scale, `levels` entries,
/// each level half the size of the next (bilinear 2x reduction).
pub fn image_pyramid<T: Scalar>(img: &Image<T>, levels: usize) -> Vec<Image<T>> {
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let (_, h, w) = prev.chw();
        out.push(prev.resize_bilinear(h / 2, w / 2));
    }
    out.reverse();
    out
}
