//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly (values are computed on
//! insertion) and [`Graph::backward`] walks the tape in reverse. Graphs are
//! built per sample and thrown away after the backward pass.

mod conv;

pub use conv::{conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, ConvGeometry};

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::warp::{self, AffineParams};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Concat {
        parts: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    AffineSample {
        x: Var,
        theta: Var,
    },
    LocalWarp {
        x: Var,
        flow: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    L1Mean {
        x: Var,
        target: Tensor<T>,
    },
    SqDist {
        a: Var,
        b: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable input whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "node {v:?} is not a scalar");
        val.data()[0]
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let kernel = self.value(w).shape()[2];
        let geom = ConvGeometry { kernel, stride, pad };
        let value = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(value, Op::Conv2d { x, w, b, geom }, rg)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let kernel = self.value(w).shape()[2];
        let geom = ConvGeometry { kernel, stride, pad };
        let value = conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(value, Op::ConvTranspose2d { x, w, b, geom }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    /// Channel-wise concatenation of rank-3 nodes.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&refs).expect("concat shapes");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Concat { parts: parts.to_vec() }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y).expect("add shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add { a, b }, rg)
    }

    /// Spatial-transformer sampling of `x` with the 6-vector `theta`.
    pub fn affine_sample(&mut self, x: Var, theta: Var) -> Var {
        let params = AffineParams::from_slice(self.value(theta).data()).expect("theta shape");
        let value = warp::affine_grid_sample(self.value(x), &params).expect("affine sample");
        let rg = self.rg(x) || self.rg(theta);
        self.push(value, Op::AffineSample { x, theta }, rg)
    }

    pub fn local_warp(&mut self, x: Var, flow: Var) -> Var {
        let value = warp::local_warp(self.value(x), self.value(flow)).expect("local warp");
        let rg = self.rg(x) || self.rg(flow);
        self.push(value, Op::LocalWarp { x, flow }, rg)
    }

    /// Spatial mean per channel: `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let inv = T::one() / T::from_usize(h * w).unwrap();
        let v: Vec<T> = (0..c)
            .map(|ch| self.value(x).channel(ch).iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&[c], v).unwrap(), Op::GlobalAvgPool { x }, rg)
    }

    /// `w x + b` with `w: [O, I]`, `x: [I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (o, i) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.len(), i, "linear input size");
        let mut out = bv.data().to_vec();
        T::gemm(
            o,
            i,
            1,
            T::one(),
            wv.data(),
            i as isize,
            1,
            xv.data(),
            1,
            1,
            T::one(),
            &mut out,
            1,
            1,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::from_vec(&[o], out).unwrap(), Op::Linear { x, w, b }, rg)
    }

    /// Mean absolute difference to a constant target.
    pub fn l1_mean(&mut self, x: Var, target: Tensor<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "l1 target shape");
        let n = T::from_usize(xv.len()).unwrap();
        let s: T = xv.data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let rg = self.rg(x);
        self.push(
            Tensor::from_vec(&[1], vec![s / n]).unwrap(),
            Op::L1Mean { x, target },
            rg,
        )
    }

    /// Squared Euclidean distance `sum (a - b)^2`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sq_dist shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&[1], vec![s]).unwrap(), Op::SqDist { a, b }, rg)
    }

    /// `sum c_i x_i` over scalar nodes. An empty sum is zero.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let s: T = terms.iter().map(|&(v, c)| self.scalar(v) * c).sum();
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(
            Tensor::from_vec(&[1], vec![s]).unwrap(),
            Op::WeightedSum { terms: terms.to_vec() },
            rg,
        )
    }

    /// Reverse pass from a scalar `root`, seeded with `d root = 1`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(&[1], T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(&node.op, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = conv2d_backward(self.value(*x), self.value(*w), g, *geom, self.rg(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) = conv_transpose2d_backward(self.value(*x), self.value(*w), g, *geom, self.rg(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |v, gv| if v > T::zero() { gv } else { gv * *slope })
                    .unwrap();
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let (_, h, w) = g.chw();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).channels();
                    let len = c * h * w;
                    if self.rg(p) {
                        let slice = g.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, p, Tensor::from_vec(&[c, h, w], slice).unwrap());
                    }
                    offset += len;
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AffineSample { x, theta } => {
                let params = AffineParams::from_slice(self.value(*theta).data()).unwrap();
                let (dx, dtheta) = warp::affine_grid_sample_backward(self.value(*x), &params, g).unwrap();
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *theta, Tensor::from_vec(&[6], dtheta.to_vec()).unwrap());
            }
            Op::LocalWarp { x, flow } => {
                let (dx, dflow) = warp::local_warp_backward(self.value(*x), self.value(*flow), g).unwrap();
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *flow, dflow);
            }
            Op::GlobalAvgPool { x } => {
                let (c, h, w) = self.value(*x).chw();
                let inv = T::one() / T::from_usize(h * w).unwrap();
                let dx = Tensor::from_fn(&[c, h, w], |i| g.data()[i[0]] * inv);
                self.accumulate(grads, *x, dx);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (o, i) = (wv.shape()[0], wv.shape()[1]);
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); i];
                    T::gemm(
                        i,
                        o,
                        1,
                        T::one(),
                        wv.data(),
                        1,
                        i as isize,
                        g.data(),
                        1,
                        1,
                        T::zero(),
                        &mut dx,
                        1,
                        1,
                    );
                    self.accumulate(grads, *x, Tensor::from_vec(&[i], dx).unwrap());
                }
                let dw = Tensor::from_fn(&[o, i], |idx| g.data()[idx[0]] * xv.data()[idx[1]]);
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, g.clone());
            }
            Op::L1Mean { x, target } => {
                let xv = self.value(*x);
                let scale = g.data()[0] / T::from_usize(xv.len()).unwrap();
                let dx = xv
                    .zip_map(target, |a, b| {
                        let d = a - b;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .unwrap();
                self.accumulate(grads, *x, dx);
            }
            Op::SqDist { a, b } => {
                let two_g = T::lit(2.0) * g.data()[0];
                let da = self.value(*a).zip_map(self.value(*b), |x, y| two_g * (x - y)).unwrap();
                let db = da.map(|v| -v);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::WeightedSum { terms } => {
                for &(v, c) in terms {
                    self.accumulate(grads, v, Tensor::full(&[1], g.data()[0] * c));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += eps;
                let mut m = x.clone();
                m.data_mut()[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_close(analytic: &Tensor<f64>, numeric: &[f64]) {
        for (a, n) in analytic.data().iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    /// Builds `sum_i r_i * op(x)_i` so every output element influences the root.
    fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
        let r = pseudo(g.value(y).shape(), seed);
        let zero = g.constant(Tensor::zeros(g.value(y).shape()));
        let rc = g.constant(r);
        // (y - 0)^2 weighted through sq_dist keeps the probe quadratic and smooth.
        let sq = g.sq_dist(y, zero);
        let lin = g.sq_dist(y, rc);
        g.weighted_sum(&[(sq, 0.5), (lin, -0.5)])
    }

    #[test]
    fn conv_and_bias_gradients() {
        let x0 = pseudo(&[2, 5, 4], 1);
        let w0 = pseudo(&[3, 2, 3, 3], 2);
        let b0 = pseudo(&[3], 3);
        for stride in [1, 2] {
            let eval = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
                let mut g = Graph::new();
                let (x, w, b) = (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
                let y = g.conv2d(x, w, Some(b), stride, 1);
                let y = g.leaky_relu(y, 0.2);
                let root = probe(&mut g, y, 4);
                (g.scalar(root), g.backward(root), x, w, b)
            };
            let (_, grads, xv, wv, bv) = eval(&x0, &w0, &b0);
            assert_close(grads.get(xv).unwrap(), &numeric_grad(&x0, |x| eval(x, &w0, &b0).0));
            assert_close(grads.get(wv).unwrap(), &numeric_grad(&w0, |w| eval(&x0, w, &b0).0));
            assert_close(grads.get(bv).unwrap(), &numeric_grad(&b0, |b| eval(&x0, &w0, b).0));
        }
    }

    #[test]
    fn deconv_gradients() {
        let x0 = pseudo(&[2, 3, 3], 5);
        let w0 = pseudo(&[2, 3, 4, 4], 6);
        let eval = |x: &Tensor<f64>, w: &Tensor<f64>| {
            let mut g = Graph::new();
            let (x, w) = (g.param(x.clone()), g.param(w.clone()));
            let y = g.conv_transpose2d(x, w, None, 2, 1);
            let root = probe(&mut g, y, 7);
            (g.scalar(root), g.backward(root), x, w)
        };
        let (_, grads, xv, wv) = eval(&x0, &w0);
        assert_close(grads.get(xv).unwrap(), &numeric_grad(&x0, |x| eval(x, &w0).0));
        assert_close(grads.get(wv).unwrap(), &numeric_grad(&w0, |w| eval(&x0, w).0));
    }

    #[test]
    fn pool_linear_concat_add_gradients() {
        let x0 = pseudo(&[3, 4, 4], 8);
        let w0 = pseudo(&[2, 6], 9);
        let b0 = pseudo(&[2], 10);
        let eval = |x: &Tensor<f64>, w: &Tensor<f64>| {
            let mut g = Graph::new();
            let (x, w) = (g.param(x.clone()), g.param(w.clone()));
            let b = g.constant(b0.clone());
            let doubled = g.add(x, x);
            let cat = g.concat(&[x, doubled]);
            let pooled = g.global_avg_pool(cat);
            let y = g.linear(pooled, w, b);
            let root = probe(&mut g, y, 11);
            (g.scalar(root), g.backward(root), x, w)
        };
        let (_, grads, xv, wv) = eval(&x0, &w0);
        assert_close(grads.get(xv).unwrap(), &numeric_grad(&x0, |x| eval(x, &w0).0));
        assert_close(grads.get(wv).unwrap(), &numeric_grad(&w0, |w| eval(&x0, w).0));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(pseudo(&[1, 2, 2], 1));
        let p = g.param(pseudo(&[1, 2, 2], 2));
        let s = g.sq_dist(c, p);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_some());
    }

    #[test]
    fn l1_and_weighted_sum_gradients() {
        let x0 = pseudo(&[1, 3, 3], 12);
        let t = pseudo(&[1, 3, 3], 13);
        let eval = |x: &Tensor<f64>| {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let l = g.l1_mean(xv, t.clone());
            let root = g.weighted_sum(&[(l, -2.5)]);
            (g.scalar(root), g.backward(root), xv)
        };
        let (_, grads, xv) = eval(&x0);
        assert_close(grads.get(xv).unwrap(), &numeric_grad(&x0, |x| eval(x).0));
    }
}
