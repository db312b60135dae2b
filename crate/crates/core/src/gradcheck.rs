//! Central finite-difference checks of every analytic gradient in float64.
//!
//! Each operator is reduced to a scalar function of a flat input vector with
//! an analytic gradient. Instances are drawn at random and rejected when
//! they sit within a small margin of a non-differentiable point (an integer
//! sample coordinate for bilinear warps, a zero residual for L1 terms), so
//! the finite-difference stencil never straddles a kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Graph;
use crate::network::{Model, NetworkConfig};
use crate::objectives::losses::{
    consistency_graph, multiscale_photometric, penalty_graph, photometric_graph, symmetric_penalty, total_graph,
    total_loss, transformation_consistency, LossComponents, LossWeights,
};
use crate::tensor::{image_pyramid, FeatureMap, Image, Tensor};
use crate::trainer::sequence_loss;
use crate::warp::{self, AffineParams};

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A scalar function of a flat parameter vector with its analytic gradient.
pub trait GradOperator {
    fn name(&self) -> &str;
    /// Draws a random admissible point, or `None` to reject the draw.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>>;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Coordinates to probe; all of them by default.
    fn probe_indices(&self, x: &[f64], _rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..x.len()).collect()
    }
    fn tolerance(&self) -> f64 {
        1e-3
    }
    fn eps(&self) -> f64 {
        1e-5
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorResult {
    pub name: String,
    pub instances: usize,
    pub probes: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub results: Vec<OperatorResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.as_str())
            .collect()
    }
}

const REL_FLOOR: f64 = 1e-6;
const MAX_DRAWS: usize = 10_000;

pub fn check_operator(op: &dyn GradOperator, instances: usize, seed: u64) -> OperatorResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = op.eps();
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut done = 0;
    let mut draws = 0;
    while done < instances && draws < MAX_DRAWS {
        draws += 1;
        let Some(x) = op.sample(&mut rng) else { continue };
        let grad = op.gradient(&x);
        let mut xp = x.clone();
        for i in op.probe_indices(&x, &mut rng) {
            xp[i] = x[i] + eps;
            let fp = op.value(&xp);
            xp[i] = x[i] - eps;
            let fm = op.value(&xp);
            xp[i] = x[i];
            let numeric = (fp - fm) / (2.0 * eps);
            let e = rel_err(grad[i], numeric, REL_FLOOR);
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
            probes += 1;
        }
        done += 1;
    }
    OperatorResult {
        name: op.name().to_string(),
        instances: done,
        probes,
        max_rel_err: worst,
        tolerance: op.tolerance(),
        passed: done >= instances && worst < op.tolerance(),
    }
}

/// Wraps an operator and negates its analytic gradient; used to prove the
/// harness catches wrong gradients.
pub struct SignFlipped<'a>(pub &'a dyn GradOperator);

impl GradOperator for SignFlipped<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        self.0.sample(rng)
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.0.gradient(x).into_iter().map(|g| -g).collect()
    }
    fn probe_indices(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
        self.0.probe_indices(x, rng)
    }
    fn tolerance(&self) -> f64 {
        self.0.tolerance()
    }
    fn eps(&self) -> f64 {
        self.0.eps()
    }
}

fn normal_ish(rng: &mut ChaCha8Rng) -> f64 {
    // Sum of uniforms: cheap, smooth, bounded.
    (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.5
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// True when every coordinate is at least `margin` away from an integer.
fn off_grid(coords: &[(f64, f64)], margin: f64) -> bool {
    let ok = |v: f64| (v - v.round()).abs() > margin;
    coords.iter().all(|&(x, y)| ok(x) && ok(y))
}

const GRID_MARGIN: f64 = 1e-3;
const RESIDUAL_MARGIN: f64 = 1e-3;

/// `sum(r * affine_grid_sample(U, theta))` over `U` and `theta`.
pub struct AffineSampleOp {
    pub shape: [usize; 3],
}

impl AffineSampleOp {
    fn split(&self, x: &[f64]) -> (FeatureMap<f64>, AffineParams<f64>, Tensor<f64>) {
        let n: usize = self.shape.iter().product();
        let u = Tensor::from_vec(&self.shape, x[..n].to_vec()).unwrap();
        let theta = AffineParams::from_slice(&x[n..n + 6]).unwrap();
        let r = Tensor::from_vec(&self.shape, x[n + 6..].to_vec()).unwrap();
        (u, theta, r)
    }

    /// Pixel coordinates sampled by `theta`.
    fn coords(&self, theta: &AffineParams<f64>) -> Vec<(f64, f64)> {
        let [_, h, w] = self.shape;
        let norm = |i: usize, len: usize| 2.0 * i as f64 / (len - 1) as f64 - 1.0;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (xn, yn) = (norm(x, w), norm(y, h));
                let t = theta.0;
                let xs = t[0] * xn + t[1] * yn + t[2];
                let ys = t[3] * xn + t[4] * yn + t[5];
                out.push(((xs + 1.0) * (w - 1) as f64 / 2.0, (ys + 1.0) * (h - 1) as f64 / 2.0));
            }
        }
        out
    }
}

impl GradOperator for AffineSampleOp {
    fn name(&self) -> &str {
        "affine_grid_sample"
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let u = random_tensor(rng, &self.shape, -1.0, 1.0);
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let theta: Vec<f64> = id.iter().map(|v| v + 0.3 * normal_ish(rng)).collect();
        if !off_grid(&self.coords(&AffineParams::from_slice(&theta).unwrap()), GRID_MARGIN) {
            return None;
        }
        let r = random_tensor(rng, &self.shape, -1.0, 1.0);
        Some([u.into_data(), theta, r.into_data()].concat())
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (u, theta, r) = self.split(x);
        let out = warp::affine_grid_sample(&u, &theta).unwrap();
        out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (u, theta, r) = self.split(x);
        let (gu, gt) = warp::affine_grid_sample_backward(&u, &theta, &r).unwrap();
        let mut g = [gu.into_data(), gt.to_vec()].concat();
        // `r` is a fixed weighting; its gradient is the forward output.
        g.extend(warp::affine_grid_sample(&u, &theta).unwrap().into_data());
        g
    }

    fn probe_indices(&self, x: &[f64], _: &mut ChaCha8Rng) -> Vec<usize> {
        (0..x.len() - self.shape.iter().product::<usize>()).collect()
    }
}

/// `sum(r * local_warp(U, flow))` over `U` and `flow`.
pub struct LocalWarpOp {
    pub shape: [usize; 3],
}

impl LocalWarpOp {
    fn split(&self, x: &[f64]) -> (FeatureMap<f64>, Tensor<f64>, Tensor<f64>) {
        let n: usize = self.shape.iter().product();
        let [_, h, w] = self.shape;
        let u = Tensor::from_vec(&self.shape, x[..n].to_vec()).unwrap();
        let flow = Tensor::from_vec(&[2, h, w], x[n..n + 2 * h * w].to_vec()).unwrap();
        let r = Tensor::from_vec(&self.shape, x[n + 2 * h * w..].to_vec()).unwrap();
        (u, flow, r)
    }
}

impl GradOperator for LocalWarpOp {
    fn name(&self) -> &str {
        "local_warp"
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let [_, h, w] = self.shape;
        let u = random_tensor(rng, &self.shape, -1.0, 1.0);
        let flow = random_tensor(rng, &[2, h, w], -2.0, 2.0);
        let coords: Vec<(f64, f64)> = (0..h * w)
            .map(|i| ((i % w) as f64 + flow.data()[i], (i / w) as f64 + flow.data()[h * w + i]))
            .collect();
        if !off_grid(&coords, GRID_MARGIN) {
            return None;
        }
        let r = random_tensor(rng, &self.shape, -1.0, 1.0);
        Some([u.into_data(), flow.into_data(), r.into_data()].concat())
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (u, flow, r) = self.split(x);
        let out = warp::local_warp(&u, &flow).unwrap();
        out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (u, flow, r) = self.split(x);
        let (gu, gf) = warp::local_warp_backward(&u, &flow, &r).unwrap();
        let mut g = [gu.into_data(), gf.into_data()].concat();
        g.extend(warp::local_warp(&u, &flow).unwrap().into_data());
        g
    }

    fn probe_indices(&self, x: &[f64], _: &mut ChaCha8Rng) -> Vec<usize> {
        (0..x.len() - self.shape.iter().product::<usize>()).collect()
    }
}

/// Shared layout for the loss operators: `frames` predictions at `levels`
/// scales with full size `size`, fixed random ground truth, and per-frame
/// affine parameters at every level.
pub struct LossLayout {
    pub frames: usize,
    pub levels: usize,
    pub size: usize,
    pub weights: LossWeights,
}

impl LossLayout {
    fn small() -> Self {
        Self {
            frames: 3,
            levels: 2,
            size: 4,
            weights: LossWeights {
                levels: vec![0.5, 1.0],
                lambda_tc: 0.1,
                lambda_p: 0.01,
            },
        }
    }

    fn scale_sizes(&self) -> Vec<usize> {
        (0..self.levels).map(|l| self.size >> (self.levels - 1 - l)).collect()
    }

    fn pred_len(&self) -> usize {
        self.frames * self.scale_sizes().iter().map(|s| 3 * s * s).sum::<usize>()
    }

    fn theta_len(&self) -> usize {
        (self.frames - 1) * self.levels * 6
    }

    fn gt_len(&self) -> usize {
        self.frames * 3 * self.size * self.size
    }

    /// Splits `[pred | thetas | gt]`.
    fn split(&self, x: &[f64]) -> (Vec<Vec<Image<f64>>>, Vec<Vec<[f64; 6]>>, Vec<Image<f64>>) {
        let mut off = 0;
        let mut pred = Vec::new();
        for _ in 0..self.frames {
            let mut scales = Vec::new();
            for s in self.scale_sizes() {
                let n = 3 * s * s;
                scales.push(Tensor::from_vec(&[3, s, s], x[off..off + n].to_vec()).unwrap());
                off += n;
            }
            pred.push(scales);
        }
        let mut thetas = Vec::new();
        for _ in 0..self.frames - 1 {
            let mut lv = Vec::new();
            for _ in 0..self.levels {
                lv.push(x[off..off + 6].try_into().unwrap());
                off += 6;
            }
            thetas.push(lv);
        }
        let n = 3 * self.size * self.size;
        let gt = (0..self.frames)
            .map(|_| {
                let t = Tensor::from_vec(&[3, self.size, self.size], x[off..off + n].to_vec()).unwrap();
                off += n;
                t
            })
            .collect();
        (pred, thetas, gt)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let mut x: Vec<f64> = (0..self.pred_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        x.extend((0..self.theta_len()).map(|_| normal_ish(rng)));
        x.extend((0..self.gt_len()).map(|_| rng.gen_range(0.0..1.0)));
        let (pred, _, gt) = self.split(&x);
        let n = self.frames;
        let far = |a: &Image<f64>, b: &Image<f64>| {
            a.data()
                .iter()
                .zip(b.data())
                .all(|(p, q)| (p - q).abs() > RESIDUAL_MARGIN)
        };
        for (j, scales) in pred.iter().enumerate() {
            let pyr = image_pyramid(&gt[j], self.levels);
            if !scales.iter().zip(&pyr).all(|(p, g)| far(p, g)) {
                return None;
            }
            if j != n / 2 && !far(scales.last().unwrap(), &gt[n - 1 - j]) {
                return None;
            }
        }
        Some(x)
    }

    fn components(&self, x: &[f64]) -> LossComponents {
        let (pred, thetas, gt) = self.split(x);
        let full: Vec<Image<f64>> = pred.iter().map(|s| s.last().unwrap().clone()).collect();
        LossComponents {
            photometric: multiscale_photometric(&pred, &gt, &self.weights.levels).unwrap(),
            consistency: transformation_consistency(&thetas).unwrap(),
            penalty: symmetric_penalty(&full, &gt).unwrap(),
        }
    }

    /// Analytic gradient from the graph builders, `which` selecting the root.
    fn graph_gradient(&self, x: &[f64], which: LossTerm) -> Vec<f64> {
        let (pred, thetas, gt) = self.split(x);
        let mut g = Graph::new();
        let pv: Vec<Vec<_>> = pred
            .iter()
            .map(|s| s.iter().map(|t| g.param(t.clone())).collect())
            .collect();
        let tv: Vec<Vec<_>> = thetas
            .iter()
            .map(|lv| {
                lv.iter()
                    .map(|t| g.param(Tensor::from_vec(&[6], t.to_vec()).unwrap()))
                    .collect()
            })
            .collect();
        let pyramids: Vec<Vec<Image<f64>>> = gt.iter().map(|y| image_pyramid(y, self.levels)).collect();
        let lmp = photometric_graph(&mut g, &pv, &pyramids, &self.weights.levels);
        let ltc = consistency_graph(&mut g, &tv);
        let full: Vec<_> = pv.iter().map(|s| *s.last().unwrap()).collect();
        let lp = penalty_graph(&mut g, &full, &gt);
        let root = match which {
            LossTerm::Photometric => lmp,
            LossTerm::Consistency => ltc,
            LossTerm::Penalty => lp,
            LossTerm::Total => total_graph(&mut g, lmp, ltc, lp, self.weights.lambda_tc, self.weights.lambda_p),
        };
        let grads = g.backward(root);
        let mut out = Vec::with_capacity(x.len());
        for v in pv.iter().flatten().chain(tv.iter().flatten()) {
            match grads.get(*v) {
                Some(t) => out.extend_from_slice(t.data()),
                None => out.extend(std::iter::repeat(0.0).take(g.value(*v).len())),
            }
        }
        // Ground truth is data, not a variable; its entries are never probed.
        out.extend(std::iter::repeat(0.0).take(self.gt_len()));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Photometric,
    Consistency,
    Penalty,
    Total,
}

pub struct LossOp {
    pub layout: LossLayout,
    pub term: LossTerm,
}

impl LossOp {
    pub fn new(term: LossTerm) -> Self {
        Self {
            layout: LossLayout::small(),
            term,
        }
    }
}

impl GradOperator for LossOp {
    fn name(&self) -> &str {
        match self.term {
            LossTerm::Photometric => "multiscale_photometric",
            LossTerm::Consistency => "transformation_consistency",
            LossTerm::Penalty => "symmetric_penalty",
            LossTerm::Total => "total_loss",
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        self.layout.sample(rng)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let c = self.layout.components(x);
        match self.term {
            LossTerm::Photometric => c.photometric,
            LossTerm::Consistency => c.consistency,
            LossTerm::Penalty => c.penalty,
            LossTerm::Total => total_loss(&c, self.layout.weights.lambda_tc, self.layout.weights.lambda_p),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.layout.graph_gradient(x, self.term)
    }

    fn probe_indices(&self, x: &[f64], _: &mut ChaCha8Rng) -> Vec<usize> {
        (0..x.len() - self.layout.gt_len()).collect()
    }
}

/// End-to-end check of the total training loss with respect to a random
/// subset of network parameters drawn from every submodule.
pub struct NetworkOp {
    pub config: NetworkConfig,
    pub size: usize,
    pub per_group: usize,
    base: Model<f64>,
    input: Image<f64>,
    gt: Vec<Image<f64>>,
    weights: LossWeights,
}

/// Parameter-name prefixes of the submodules covered by [`NetworkOp`].
pub const NETWORK_GROUPS: [&str; 7] = ["enc.", "dec_mid.", "dec0.", ".stn.", ".lw.", "itn", "ref."];

impl NetworkOp {
    pub fn new(seed: u64) -> Self {
        let config = NetworkConfig {
            levels: 2,
            frames: 3,
            base_widths: vec![4, 6],
            dense_layers: 2,
            ..NetworkConfig::default()
        };
        let size = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut base = Model::<f64>::new(config.clone(), seed).unwrap();
        // Identity-initialized heads would zero the gradient of everything
        // upstream of them; give them random values so every path is live.
        for (name, t) in base.params_mut().iter_mut() {
            let head = name.contains(".fc.")
                || name.contains(".lw.c2")
                || name.starts_with("ref.c3")
                || name.contains(".img.w");
            if head {
                let scale = if name.contains(".fc.w") { 0.05 } else { 0.1 };
                for v in t.data_mut() {
                    *v += scale * normal_ish(&mut rng);
                }
            }
        }
        let input = Tensor::from_fn(&[3, size, size], |_| rng.gen_range(0.0..1.0));
        let gt = (0..3)
            .map(|_| Tensor::from_fn(&[3, size, size], |_| rng.gen_range(0.0..1.0)))
            .collect();
        Self {
            per_group: 8,
            base,
            input,
            gt,
            weights: LossWeights {
                levels: vec![0.5, 1.0],
                lambda_tc: 0.1,
                lambda_p: 0.01,
            },
            config,
            size,
        }
    }

    /// Flat index -> (parameter name, element) for the current probe set.
    fn flat_names(&self) -> Vec<(String, usize)> {
        self.base
            .params()
            .iter()
            .flat_map(|(n, t)| (0..t.len()).map(move |i| (n.clone(), i)))
            .collect()
    }

    fn model_at(&self, x: &[f64]) -> Model<f64> {
        let mut m = self.base.clone();
        let mut it = x.iter();
        for (_, t) in m.params_mut().iter_mut() {
            for v in t.data_mut() {
                *v = *it.next().unwrap();
            }
        }
        m
    }

    fn loss_and_grad(&self, x: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let model = self.model_at(x);
        let mut g = Graph::new();
        let inp = g.constant(self.input.clone());
        let mut s = model.session(&mut g, want_grad);
        let fv = s.forward(inp).unwrap();
        let bindings = s.into_bindings();
        let gt: Vec<&Image<f64>> = self.gt.iter().collect();
        let loss = sequence_loss(&mut g, &fv, &gt, &self.weights, false).unwrap();
        let value = g.scalar(loss.total);
        if !want_grad {
            return (value, Vec::new());
        }
        let grads = g.backward(loss.total);
        let mut out = Vec::with_capacity(x.len());
        for (name, t) in model.params().iter() {
            match bindings.get(name).and_then(|v| grads.get(*v)) {
                Some(gt) => out.extend_from_slice(gt.data()),
                None => out.extend(std::iter::repeat(0.0).take(t.len())),
            }
        }
        (value, out)
    }
}

impl GradOperator for NetworkOp {
    fn name(&self) -> &str {
        "network_total_loss"
    }

    fn sample(&self, _: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        Some(self.base.params().iter().flat_map(|(_, t)| t.data().to_vec()).collect())
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.loss_and_grad(x, false).0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.loss_and_grad(x, true).1
    }

    fn probe_indices(&self, _: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let names = self.flat_names();
        let mut out = Vec::new();
        for group in NETWORK_GROUPS {
            let members: Vec<usize> = names
                .iter()
                .enumerate()
                .filter(|(_, (n, _))| n.contains(group))
                .map(|(i, _)| i)
                .collect();
            for _ in 0..self.per_group.min(members.len()) {
                out.push(members[rng.gen_range(0..members.len())]);
            }
        }
        out
    }

    fn tolerance(&self) -> f64 {
        1e-2
    }

    fn eps(&self) -> f64 {
        1e-6
    }
}

impl NetworkOp {
    /// Name of the parameter behind flat index `i`.
    pub fn parameter_name(&self, i: usize) -> String {
        self.flat_names()[i].0.clone()
    }

    pub fn input_size(&self) -> usize {
        self.size
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub seed: u64,
    /// Operator whose analytic gradient is negated (harness self-test).
    pub flip: Option<String>,
    pub include_network: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            flip: None,
            include_network: true,
        }
    }
}

pub fn operators(include_network: bool) -> Vec<Box<dyn GradOperator>> {
    let mut ops: Vec<Box<dyn GradOperator>> = vec![
        Box::new(AffineSampleOp { shape: [2, 5, 5] }),
        Box::new(LocalWarpOp { shape: [2, 5, 5] }),
        Box::new(LossOp::new(LossTerm::Photometric)),
        Box::new(LossOp::new(LossTerm::Consistency)),
        Box::new(LossOp::new(LossTerm::Penalty)),
        Box::new(LossOp::new(LossTerm::Total)),
    ];
    if include_network {
        ops.push(Box::new(NetworkOp::new(0)));
    }
    ops
}

/// Runs every operator. The network check runs a single instance because
/// each probe needs two full forward passes; it probes `>= 50` parameters.
pub fn run(opts: &GradcheckOptions) -> GradcheckReport {
    let results = operators(opts.include_network)
        .iter()
        .enumerate()
        .map(|(i, op)| {
            let instances = if op.name() == "network_total_loss" {
                1
            } else {
                opts.instances
            };
            let seed = opts.seed.wrapping_add(i as u64);
            if opts.flip.as_deref() == Some(op.name()) {
                check_operator(&SignFlipped(op.as_ref()), instances, seed)
            } else {
                check_operator(op.as_ref(), instances, seed)
            }
        })
        .collect();
    GradcheckReport { results }
}
