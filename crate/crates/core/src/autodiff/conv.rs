//! im2col-based convolution kernels and their adjoints.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn transposed_out_len(&self, len: usize) -> usize {
        (len - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

/// Output columns `lo..hi` whose input column `ox * stride + kx - pad` lies in `[0, w)`.
fn valid_columns(g: ConvGeometry, kx: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let hi = (w + g.pad).saturating_sub(kx).div_ceil(g.stride).min(wo);
    (lo, hi.max(lo))
}

/// Unfolds `x` (`[C, H, W]`) into `[C*k*k, ho*wo]` patches.
fn im2col<T: Scalar>(x: &[T], (c, h, w): (usize, usize, usize), g: ConvGeometry, (ho, wo): (usize, usize)) -> Vec<T> {
    let k = g.kernel;
    let p = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * p];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_columns(g, kx, w, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for ox in lo..hi {
                            drow[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patches back, accumulating overlaps.
fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    g: ConvGeometry,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let k = g.kernel;
    let p = ho * wo;
    let mut x = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_columns(g, kx, w, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            for (d, &v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                                *d += v;
                            }
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox * g.stride + kx - g.pad] += srow[ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], p: usize) {
    for (o, &b) in bias.iter().enumerate() {
        for v in &mut y[o * p..(o + 1) * p] {
            *v += b;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], channels: usize, p: usize) -> Vec<T> {
    (0..channels)
        .map(|o| dy[o * p..(o + 1) * p].iter().copied().sum())
        .collect()
}

/// `y = conv(x, w) + b` with `x: [C, H, W]`, `w: [O, C, k, k]`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: ConvGeometry) -> Tensor<T> {
    let (c, h, wd) = x.chw();
    let o = w.shape()[0];
    assert_eq!(w.shape(), [o, c, g.kernel, g.kernel], "conv weight shape");
    let (ho, wo) = (g.out_len(h), g.out_len(wd));
    let p = ho * wo;
    let ck = c * g.kernel * g.kernel;
    let cols = im2col(x.data(), (c, h, wd), g, (ho, wo));
    let mut y = vec![T::zero(); o * p];
    T::gemm(
        o,
        ck,
        p,
        T::one(),
        w.data(),
        ck as isize,
        1,
        &cols,
        p as isize,
        1,
        T::zero(),
        &mut y,
        p as isize,
        1,
    );
    if let Some(b) = b {
        add_bias(&mut y, b.data(), p);
    }
    Tensor::from_vec(&[o, ho, wo], y).unwrap()
}

/// Gradients `(dx, dw, db)` of [`conv2d_forward`]. `dx` is skipped when not needed.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: ConvGeometry,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (c, h, wd) = x.chw();
    let (o, ho, wo) = dy.chw();
    let p = ho * wo;
    let ck = c * g.kernel * g.kernel;
    let cols = im2col(x.data(), (c, h, wd), g, (ho, wo));
    let mut dw = vec![T::zero(); o * ck];
    T::gemm(
        o,
        p,
        ck,
        T::one(),
        dy.data(),
        p as isize,
        1,
        &cols,
        1,
        p as isize,
        T::zero(),
        &mut dw,
        ck as isize,
        1,
    );
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); ck * p];
        T::gemm(
            ck,
            o,
            p,
            T::one(),
            w.data(),
            1,
            ck as isize,
            dy.data(),
            p as isize,
            1,
            T::zero(),
            &mut dcols,
            p as isize,
            1,
        );
        Tensor::from_vec(&[c, h, wd], col2im(&dcols, (c, h, wd), g, (ho, wo))).unwrap()
    });
    let db = bias_grad(dy.data(), o, p);
    (
        dx,
        Tensor::from_vec(w.shape(), dw).unwrap(),
        Tensor::from_vec(&[o], db).unwrap(),
    )
}

/// Transposed convolution with `x: [Cin, H, W]`, `w: [Cin, Cout, k, k]`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: ConvGeometry,
) -> Tensor<T> {
    let (cin, h, wd) = x.chw();
    let cout = w.shape()[1];
    assert_eq!(w.shape(), [cin, cout, g.kernel, g.kernel], "deconv weight shape");
    let (ho, wo) = (g.transposed_out_len(h), g.transposed_out_len(wd));
    let p = h * wd;
    let rk = cout * g.kernel * g.kernel;
    let mut cols = vec![T::zero(); rk * p];
    T::gemm(
        rk,
        cin,
        p,
        T::one(),
        w.data(),
        1,
        rk as isize,
        x.data(),
        p as isize,
        1,
        T::zero(),
        &mut cols,
        p as isize,
        1,
    );
    let mut y = col2im(&cols, (cout, ho, wo), g, (h, wd));
    if let Some(b) = b {
        add_bias(&mut y, b.data(), ho * wo);
    }
    Tensor::from_vec(&[cout, ho, wo], y).unwrap()
}

/// Gradients `(dx, dw, db)` of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: ConvGeometry,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (cin, h, wd) = x.chw();
    let (cout, ho, wo) = dy.chw();
    let p = h * wd;
    let rk = cout * g.kernel * g.kernel;
    let dcols = im2col(dy.data(), (cout, ho, wo), g, (h, wd));
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); cin * p];
        T::gemm(
            cin,
            rk,
            p,
            T::one(),
            w.data(),
            rk as isize,
            1,
            &dcols,
            p as isize,
            1,
            T::zero(),
            &mut dx,
            p as isize,
            1,
        );
        Tensor::from_vec(&[cin, h, wd], dx).unwrap()
    });
    let mut dw = vec![T::zero(); cin * rk];
    T::gemm(
        cin,
        p,
        rk,
        T::one(),
        x.data(),
        p as isize,
        1,
        &dcols,
        1,
        p as isize,
        T::zero(),
        &mut dw,
        rk as isize,
        1,
    );
    let db = bias_grad(dy.data(), cout, ho * wo);
    (
        dx,
        Tensor::from_vec(w.shape(), dw).unwrap(),
        Tensor::from_vec(&[cout], db).unwrap(),
    )
}
