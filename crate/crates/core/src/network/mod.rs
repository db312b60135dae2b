//! The restoration network.
//!
//! A shared encoder produces a `k`-level feature pyramid from the blurred
//! input. The middle frame is decoded directly from it. Every other frame
//! gets its own feature transformers (a global affine STN and, optionally, a
//! per-pixel local warp) at each encoder level, its own image transformer
//! acting on the middle frame's predictions, and its own decoder. A small
//! residual block refines every full-scale frame.
//!
//! Frames are indexed from 0, so the middle frame is `n / 2`. Decoder block
//! `b = 1..=k` emits the image at `1 / 2^(k - b)` of the input size.

mod checkpoint;
mod config;
mod params;

use std::collections::BTreeMap;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointHeader};
pub use config::NetworkConfig;
pub use params::{Init, ParamSpec, ParamStore};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Image};
use crate::warp::MotionFlow;

/// Encoder outputs `U_e^l` for `l = 1..=k`, finest first.
pub type FeaturePyramid<T> = Vec<FeatureMap<T>>;

/// Transformer outputs recorded for each frame. Entries for the middle frame
/// are empty, as are disabled branches.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformSet<T> {
    /// Feature-transformer affine parameters per level, finest encoder level first.
    pub ftn_theta: Vec<Vec<[T; 6]>>,
    /// Image-transformer affine parameters per decoder scale, coarsest first.
    pub itn_theta: Vec<Vec<[T; 6]>>,
    /// Local-warp flows per level, finest encoder level first.
    pub flows: Vec<Vec<MotionFlow<T>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequencePrediction<T> {
    /// `scales[j]` holds frame `j` from coarsest to full scale (before refinement).
    pub scales: Vec<Vec<Image<T>>>,
    /// Refined full-scale frames.
    pub refined: Vec<Image<T>>,
    pub transforms: TransformSet<T>,
}

impl<T> SequencePrediction<T> {
    pub fn frames(&self) -> usize {
        self.refined.len()
    }

    pub fn middle(&self) -> usize {
        self.refined.len() / 2
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub pyramid: Vec<Var>,
    pub scales: Vec<Vec<Var>>,
    pub last_features: Vec<Var>,
    pub refined: Vec<Var>,
    pub ftn_theta: Vec<Vec<Var>>,
    pub itn_theta: Vec<Vec<Var>>,
    pub flows: Vec<Vec<Var>>,
}

impl ForwardVars {
    /// Per-frame images with the full scale replaced by the refined frame.
    pub fn supervised_scales(&self) -> Vec<Vec<Var>> {
        self.scales
            .iter()
            .zip(&self.refined)
            .map(|(s, &r)| {
                let mut s = s.clone();
                *s.last_mut().unwrap() = r;
                s
            })
            .collect()
    }
}

fn middle_decoder() -> String {
    "dec_mid".into()
}

fn ftn_prefix(j: usize, l: usize) -> String {
    format!("ftn{j}.l{l}")
}

fn itn_prefix(j: usize, b: usize) -> String {
    format!("itn{j}.s{b}")
}

struct Layout<'a> {
    cfg: &'a NetworkConfig,
    widths: Vec<usize>,
}

impl<'a> Layout<'a> {
    fn new(cfg: &'a NetworkConfig) -> Self {
        Self {
            cfg,
            widths: cfg.widths(),
        }
    }

    fn k(&self) -> usize {
        self.cfg.levels
    }

    /// Width of encoder level `l` (1-based).
    fn enc(&self, l: usize) -> usize {
        self.widths[l - 1]
    }

    fn dec(&self, b: usize) -> usize {
        if b < self.k() {
            self.enc(self.k() - b)
        } else {
            self.enc(1)
        }
    }

    /// Channels of `U_t ⊕ U_e` relative to `U_e`.
    fn ctx_factor(&self) -> usize {
        2 + usize::from(self.cfg.use_lw)
    }

    fn top_channels(&self, middle: bool) -> usize {
        self.enc(self.k()) * if middle { 1 } else { self.ctx_factor() }
    }

    fn skip_channels(&self, middle: bool, b: usize) -> usize {
        let itn = if middle { 0 } else { 3 * usize::from(self.cfg.use_itn) };
        if b < self.k() {
            let c = self.enc(self.k() - b);
            if middle {
                c
            } else {
                c * self.ctx_factor() + itn
            }
        } else {
            3 + itn
        }
    }

    /// Channels of the same-scale context fed to an image transformer.
    fn itn_context(&self, b: usize) -> usize {
        if b < self.k() {
            self.enc(self.k() - b)
        } else {
            3
        }
    }

    fn refiner_width(&self) -> usize {
        self.dec(self.k()).max(8)
    }
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
    slope: f64,
}

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.specs.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, init: Init) {
        self.push(format!("{name}.w"), vec![cout, cin, 3, 3], init);
        self.push(format!("{name}.b"), vec![cout], Init::Zeros);
    }

    fn conv_act(&mut self, name: &str, cin: usize, cout: usize) {
        let init = Init::He {
            fan_in: cin * 9,
            slope: self.slope,
        };
        self.conv(name, cin, cout, init);
    }

    fn deconv(&mut self, name: &str, cin: usize, cout: usize) {
        // Each output pixel of a stride-2 4x4 transposed conv sees 2x2 taps per input channel.
        let init = Init::He {
            fan_in: cin * 4,
            slope: self.slope,
        };
        self.push(format!("{name}.w"), vec![cin, cout, 4, 4], init);
        self.push(format!("{name}.b"), vec![cout], Init::Zeros);
    }

    fn affine_head(&mut self, name: &str, cin: usize, hidden: usize) {
        self.conv_act(&format!("{name}.c"), cin, hidden);
        self.push(format!("{name}.fc.w"), vec![6, hidden], Init::Zeros);
        self.push(
            format!("{name}.fc.b"),
            vec![6],
            Init::Values(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        );
    }
}

fn decoder_specs(sb: &mut SpecBuilder, lay: &Layout, prefix: &str, middle: bool) {
    let k = lay.k();
    for b in 1..=k {
        let dw = lay.dec(b);
        let up_in = if b == 1 {
            lay.top_channels(middle)
        } else {
            lay.dec(b - 1)
        };
        sb.deconv(&format!("{prefix}.b{b}.up"), up_in, dw);
        if b > 1 {
            sb.push(format!("{prefix}.b{b}.upimg.w"), vec![3, 3, 4, 4], Init::Bilinear);
            sb.push(format!("{prefix}.b{b}.upimg.b"), vec![3], Init::Zeros);
        }
        let x0 = dw + if b > 1 { 3 } else { 0 } + lay.skip_channels(middle, b);
        let g = NetworkConfig::growth(dw);
        let layers = lay.cfg.dense_layers;
        for i in 0..layers {
            let cout = if i + 1 == layers { dw } else { g };
            sb.conv_act(&format!("{prefix}.b{b}.d{i}"), x0 + g * i, cout);
        }
        // Image heads start at mid-gray so every scale begins inside [0, 1].
        sb.push(format!("{prefix}.b{b}.img.w"), vec![3, dw, 3, 3], Init::Zeros);
        sb.push(format!("{prefix}.b{b}.img.b"), vec![3], Init::Values(vec![0.5; 3]));
    }
}

/// Every parameter of a model with configuration `cfg`, in initialization order.
pub fn parameter_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let lay = Layout::new(cfg);
    let k = cfg.levels;
    let mut sb = SpecBuilder {
        specs: Vec::new(),
        slope: cfg.leaky_slope,
    };
    for l in 1..=k {
        let cin = if l == 1 { 3 } else { lay.enc(l - 1) };
        sb.conv_act(&format!("enc.l{l}.c1"), cin, lay.enc(l));
        sb.conv_act(&format!("enc.l{l}.c2"), lay.enc(l), lay.enc(l));
    }
    decoder_specs(&mut sb, &lay, &middle_decoder(), true);
    let mut seen = Vec::new();
    for j in (0..cfg.frames).filter(|&j| j != cfg.middle()) {
        let prefix = decoder_prefix(cfg, j);
        if !seen.contains(&prefix) {
            decoder_specs(&mut sb, &lay, &prefix, false);
            seen.push(prefix);
        }
        for l in 1..=k {
            let c = lay.enc(l);
            let p = ftn_prefix(j, l);
            sb.affine_head(&format!("{p}.stn"), c, c);
            if cfg.use_lw {
                sb.conv_act(&format!("{p}.lw.c1"), c, c);
                sb.conv(&format!("{p}.lw.c2"), c, 2, Init::Zeros);
            }
        }
        if cfg.use_itn {
            for b in 1..=k {
                let cs = lay.itn_context(b);
                sb.affine_head(&itn_prefix(j, b), 3 + cs, cs.max(8));
            }
        }
    }
    if cfg.use_refiner {
        let r = lay.refiner_width();
        sb.conv_act("ref.c1", 3 + lay.dec(k), r);
        sb.conv_act("ref.c2", r, r);
        sb.conv("ref.c3", r, 3, Init::Zeros);
    }
    sb.specs
}

fn decoder_prefix(cfg: &NetworkConfig, j: usize) -> String {
    if j == cfg.middle() {
        middle_decoder()
    } else if cfg.share_nonmiddle_decoders {
        "dec_nm".into()
    } else {
        format!("dec{j}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: NetworkConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::from_specs(&parameter_specs(&config), seed);
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes against `config`.
    pub fn from_params(config: NetworkConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = parameter_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for s in &specs {
            match params.get(&s.name) {
                Some(t) if t.shape() == s.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                None => return Err(Error::Shape(format!("missing parameter {}", s.name))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Starts recording a forward pass on `graph`. With `trainable`, every
    /// parameter becomes a gradient-carrying leaf.
    pub fn session<'a>(&'a self, graph: &'a mut Graph<T>, trainable: bool) -> Session<'a, T> {
        Session {
            model: self,
            graph,
            bound: BTreeMap::new(),
            trainable,
        }
    }

    fn check_image(&self, img: &Image<T>) -> Result<()> {
        let s = img.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Shape(format!("expected a [3, H, W] image, got {s:?}")));
        }
        self.config.check_input(s[1], s[2])
    }

    pub fn encode(&self, blurred: &Image<T>) -> Result<FeaturePyramid<T>> {
        self.check_image(blurred)?;
        let mut g = Graph::new();
        let x = g.constant(blurred.clone());
        let mut s = self.session(&mut g, false);
        let pyr = s.encode(x)?;
        Ok(pyr.iter().map(|&v| g.value(v).clone()).collect())
    }

    pub fn forward(&self, blurred: &Image<T>) -> Result<SequencePrediction<T>> {
        let mut g = Graph::new();
        let x = g.constant(blurred.clone());
        let fv = self.session(&mut g, false).forward(x)?;
        let vals = |vs: &Vec<Var>| -> Vec<Image<T>> { vs.iter().map(|&v| g.value(v).clone()).collect() };
        let theta = |vs: &Vec<Var>| -> Vec<[T; 6]> {
            vs.iter()
                .map(|&v| g.value(v).data().try_into().expect("theta has 6 entries"))
                .collect()
        };
        Ok(SequencePrediction {
            scales: fv.scales.iter().map(vals).collect(),
            refined: fv.refined.iter().map(|&v| g.value(v).clone()).collect(),
            transforms: TransformSet {
                ftn_theta: fv.ftn_theta.iter().map(theta).collect(),
                itn_theta: fv.itn_theta.iter().map(theta).collect(),
                flows: fv.flows.iter().map(vals).collect(),
            },
        })
    }
}

/// One forward pass being recorded on a graph.
pub struct Session<'a, T: Scalar> {
    model: &'a Model<T>,
    graph: &'a mut Graph<T>,
    bound: BTreeMap<String, Var>,
    trainable: bool,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn graph(&mut self) -> &mut Graph<T> {
        self.graph
    }

    /// Parameter name to graph node for every parameter used so far.
    pub fn bindings(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn into_bindings(self) -> BTreeMap<String, Var> {
        self.bound
    }

    fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let t = self
            .model
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from the store"))
            .clone();
        let v = if self.trainable {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.insert(name.to_owned(), v);
        v
    }

    fn slope(&self) -> T {
        T::lit(self.model.config.leaky_slope)
    }

    fn conv(&mut self, name: &str, x: Var, stride: usize) -> Var {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        self.graph.conv2d(x, w, Some(b), stride, 1)
    }

    fn conv_act(&mut self, name: &str, x: Var, stride: usize) -> Var {
        let y = self.conv(name, x, stride);
        let s = self.slope();
        self.graph.leaky_relu(y, s)
    }

    fn deconv(&mut self, name: &str, x: Var) -> Var {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        self.graph.conv_transpose2d(x, w, Some(b), 2, 1)
    }

    fn affine_head(&mut self, name: &str, x: Var) -> Var {
        let h = self.conv_act(&format!("{name}.c"), x, 1);
        let pooled = self.graph.global_avg_pool(h);
        let w = self.p(&format!("{name}.fc.w"));
        let b = self.p(&format!("{name}.fc.b"));
        self.graph.linear(pooled, w, b)
    }

    /// Encoder pyramid `U_e^1..U_e^k`; level `l` has `1 / 2^l` of the input size.
    pub fn encode(&mut self, x: Var) -> Result<Vec<Var>> {
        let s = self.graph.value(x).shape().to_vec();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Shape(format!("expected a [3, H, W] image, got {s:?}")));
        }
        self.model.config.check_input(s[1], s[2])?;
        let mut h = x;
        let mut out = Vec::with_capacity(self.model.config.levels);
        for l in 1..=self.model.config.levels {
            h = self.conv_act(&format!("enc.l{l}.c1"), h, 2);
            h = self.conv_act(&format!("enc.l{l}.c2"), h, 1);
            out.push(h);
        }
        Ok(out)
    }

    /// Shared decoder topology. `skips[b - 1]` is concatenated into block `b`.
    /// Returns images from coarsest to full scale and the last block's feature.
    fn decode(&mut self, prefix: &str, top: Var, skips: &[Var]) -> (Vec<Var>, Var) {
        let k = self.model.config.levels;
        let layers = self.model.config.dense_layers;
        let mut feat = top;
        let mut images: Vec<Var> = Vec::with_capacity(k);
        for b in 1..=k {
            let up = self.deconv(&format!("{prefix}.b{b}.up"), feat);
            let s = self.slope();
            let up = self.graph.leaky_relu(up, s);
            let mut parts = vec![up];
            if let Some(&prev) = images.last() {
                parts.push(self.deconv(&format!("{prefix}.b{b}.upimg"), prev));
            }
            parts.push(skips[b - 1]);
            let mut dense = vec![self.graph.concat(&parts)];
            for i in 0..layers {
                let inp = if dense.len() == 1 {
                    dense[0]
                } else {
                    self.graph.concat(&dense)
                };
                let o = self.conv_act(&format!("{prefix}.b{b}.d{i}"), inp, 1);
                dense.push(o);
            }
            feat = *dense.last().unwrap();
            images.push(self.conv(&format!("{prefix}.b{b}.img"), feat, 1));
        }
        (images, feat)
    }

    /// Middle-frame images at every scale plus the last decoder feature.
    pub fn decode_middle(&mut self, input: Var, pyramid: &[Var]) -> (Vec<Var>, Var) {
        let k = self.model.config.levels;
        let skips: Vec<Var> = (1..=k)
            .map(|b| if b < k { pyramid[k - b - 1] } else { input })
            .collect();
        self.decode(&middle_decoder(), pyramid[k - 1], &skips)
    }

    /// Feature transformer for frame `j` at encoder level `l` (1-based):
    /// `U_t = STN(U_e) ⊕ LW(U_e)`. Returns `(U_t, theta, flow)`.
    pub fn ftn(&mut self, j: usize, l: usize, ue: Var) -> (Var, Var, Option<Var>) {
        let p = ftn_prefix(j, l);
        let theta = self.affine_head(&format!("{p}.stn"), ue);
        let st = self.graph.affine_sample(ue, theta);
        if !self.model.config.use_lw {
            return (st, theta, None);
        }
        let h = self.conv_act(&format!("{p}.lw.c1"), ue, 1);
        let flow = self.conv(&format!("{p}.lw.c2"), h, 1);
        let lw = self.graph.local_warp(ue, flow);
        (self.graph.concat(&[st, lw]), theta, Some(flow))
    }

    /// Image transformer for frame `j` at decoder scale `b`: an affine warp of
    /// the middle image `im` whose parameters are regressed from `im ⊕ context`.
    pub fn itn(&mut self, j: usize, b: usize, im: Var, context: Var) -> (Var, Var) {
        let loc = self.graph.concat(&[im, context]);
        let theta = self.affine_head(&itn_prefix(j, b), loc);
        (self.graph.affine_sample(im, theta), theta)
    }

    /// Decoder for non-middle frame `j` fed with `U_t ⊕ U_e (⊕ I_t)` at every scale.
    /// `ut` is indexed by encoder level, `it` by decoder scale (either may be empty
    /// for `it` when the image transformer is disabled).
    pub fn decode_nonmiddle(
        &mut self,
        j: usize,
        input: Var,
        pyramid: &[Var],
        ut: &[Var],
        it: &[Var],
    ) -> (Vec<Var>, Var) {
        let k = self.model.config.levels;
        let top = self.graph.concat(&[ut[k - 1], pyramid[k - 1]]);
        let skips: Vec<Var> = (1..=k)
            .map(|b| {
                let mut parts = if b < k {
                    vec![ut[k - b - 1], pyramid[k - b - 1]]
                } else {
                    vec![input]
                };
                if let Some(&i) = it.get(b - 1) {
                    parts.push(i);
                }
                self.graph.concat(&parts)
            })
            .collect();
        self.decode(&decoder_prefix(&self.model.config, j), top, &skips)
    }

    /// Residual refinement; identity when the refiner is disabled.
    pub fn refine(&mut self, image: Var, feature: Var) -> Var {
        if !self.model.config.use_refiner {
            return image;
        }
        let x = self.graph.concat(&[image, feature]);
        let h = self.conv_act("ref.c1", x, 1);
        let h = self.conv_act("ref.c2", h, 1);
        let corr = self.conv("ref.c3", h, 1);
        self.graph.add(image, corr)
    }

    pub fn forward(&mut self, input: Var) -> Result<ForwardVars> {
        let cfg = self.model.config.clone();
        let (n, k, m) = (cfg.frames, cfg.levels, cfg.middle());
        let pyramid = self.encode(input)?;
        let (mid_images, mid_feat) = self.decode_middle(input, &pyramid);
        let mut scales = vec![Vec::new(); n];
        let mut last_features = vec![mid_feat; n];
        let mut ftn_theta = vec![Vec::new(); n];
        let mut itn_theta = vec![Vec::new(); n];
        let mut flows = vec![Vec::new(); n];
        for j in (0..n).filter(|&j| j != m) {
            let mut ut = Vec::with_capacity(k);
            for l in 1..=k {
                let (u, th, fl) = self.ftn(j, l, pyramid[l - 1]);
                ut.push(u);
                ftn_theta[j].push(th);
                flows[j].extend(fl);
            }
            let mut it = Vec::new();
            if cfg.use_itn {
                for b in 1..=k {
                    let ctx = if b < k { pyramid[k - b - 1] } else { input };
                    let (i, th) = self.itn(j, b, mid_images[b - 1], ctx);
                    it.push(i);
                    itn_theta[j].push(th);
                }
            }
            let (imgs, feat) = self.decode_nonmiddle(j, input, &pyramid, &ut, &it);
            scales[j] = imgs;
            last_features[j] = feat;
        }
        scales[m] = mid_images;
        let refined = (0..n)
            .map(|j| self.refine(*scales[j].last().unwrap(), last_features[j]))
            .collect();
        Ok(ForwardVars {
            pyramid,
            scales,
            last_features,
            refined,
            ftn_theta,
            itn_theta,
            flows,
        })
    }
}
