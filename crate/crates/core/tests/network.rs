use blurvid::autodiff::Graph;
use blurvid::gradcheck::{check_operator, GradOperator, NetworkOp};
use blurvid::network::{Model, NetworkConfig};
use blurvid::warp::AffineParams;
use blurvid::{Error, Image, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(levels: usize, frames: usize) -> NetworkConfig {
    NetworkConfig {
        levels,
        frames,
        base_widths: vec![4, 6, 8, 8, 8],
        dense_layers: 2,
        ..NetworkConfig::default()
    }
}

fn input(h: usize, w: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
}

#[test]
fn encoder_halving_schedule() {
    let cfg = NetworkConfig {
        width_multiplier: 0.125,
        ..NetworkConfig::default()
    };
    let model = Model::<f32>::new(cfg, 0).unwrap();
    for (size, want) in [(256, [128, 64, 32, 16, 8]), (128, [64, 32, 16, 8, 4])] {
        let pyr = model.encode(&input(size, size, 0).cast()).unwrap();
        let got: Vec<usize> = pyr.iter().map(|f| f.height()).collect();
        assert_eq!(got, want);
        assert!(pyr.iter().all(|f| f.width() == f.height()));
    }
}

#[test]
fn indivisible_input_names_the_multiple() {
    let model = Model::<f64>::new(small(5, 3), 0).unwrap();
    match model.encode(&input(100, 100, 0)) {
        Err(Error::Input(msg)) => assert!(msg.contains("32"), "{msg}"),
        other => panic!("expected input error, got {other:?}"),
    }
}

#[test]
fn decoder_outputs_follow_the_scale_schedule() {
    let model = Model::<f64>::new(small(3, 3), 1).unwrap();
    let p = model.forward(&input(32, 24, 1)).unwrap();
    for scales in &p.scales {
        assert_eq!(scales.len(), 3);
        assert_eq!(scales[0].shape(), &[3, 8, 6]);
        assert_eq!(scales[2].shape(), &[3, 32, 24]);
        assert!(scales.iter().all(Tensor::all_finite));
    }
    assert!(p.refined.iter().all(|r| r.shape() == [3, 32, 24] && r.all_finite()));
}

#[test]
fn frame_counts_and_middle_index() {
    let p3 = Model::<f64>::new(small(2, 3), 0)
        .unwrap()
        .forward(&input(8, 8, 2))
        .unwrap();
    assert_eq!((p3.frames(), p3.middle()), (3, 1));
    let p7 = Model::<f64>::new(small(2, 7), 0)
        .unwrap()
        .forward(&input(8, 8, 2))
        .unwrap();
    assert_eq!((p7.frames(), p7.middle()), (7, 3));
    // The middle frame carries no transforms.
    assert!(p7.transforms.ftn_theta[3].is_empty() && p7.transforms.itn_theta[3].is_empty());
    assert_eq!(p7.transforms.ftn_theta[0].len(), 2);
}

#[test]
fn forward_is_deterministic() {
    let model = Model::<f64>::new(small(2, 3), 4).unwrap();
    let x = input(16, 16, 4);
    assert_eq!(model.forward(&x).unwrap().refined, model.forward(&x).unwrap().refined);
}

#[test]
fn identity_start() {
    let cfg = small(3, 3);
    let model = Model::<f64>::new(cfg.clone(), 2).unwrap();
    let x = input(16, 16, 3);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut s = model.session(&mut g, false);
    let pyr = s.encode(xv).unwrap();
    let (mid, _) = s.decode_middle(xv, &pyr);
    for j in [0, 2] {
        for (l, &ue) in pyr.iter().enumerate() {
            let (ut, theta, flow) = s.ftn(j, l + 1, ue);
            let ue_val = s.graph().value(ue).clone();
            let want = Tensor::concat_channels(&[&ue_val, &ue_val]).unwrap();
            assert_eq!(s.graph().value(ut), &want);
            assert_eq!(s.graph().value(theta).data(), &AffineParams::<f64>::identity().0);
            assert!(s.graph().value(flow.unwrap()).data().iter().all(|&v| v == 0.0));
        }
        for b in 1..=3 {
            let ctx = if b < 3 { pyr[3 - b - 1] } else { xv };
            let (it, _) = s.itn(j, b, mid[b - 1], ctx);
            let (a, m) = (s.graph().value(it).clone(), s.graph().value(mid[b - 1]).clone());
            assert_eq!(a, m, "frame {j} scale {b}");
        }
    }
}

#[test]
fn refiner_is_residual_identity_at_init_and_when_disabled() {
    let x = input(16, 16, 5);
    let on = Model::<f64>::new(small(2, 3), 0).unwrap().forward(&x).unwrap();
    for (r, s) in on.refined.iter().zip(&on.scales) {
        assert_eq!(r, s.last().unwrap());
    }
    let cfg = NetworkConfig {
        use_refiner: false,
        ..small(2, 3)
    };
    let model = Model::<f64>::new(cfg, 0).unwrap();
    assert!(model.params().names().all(|n| !n.starts_with("ref.")));
    let off = model.forward(&x).unwrap();
    for (r, s) in off.refined.iter().zip(&off.scales) {
        assert_eq!(r, s.last().unwrap());
    }
}

#[test]
fn itn_translation_matches_shift() {
    // Put a one-pixel translation into the full-scale ITN bias of frame 0.
    let mut model = Model::<f64>::new(small(2, 3), 0).unwrap();
    let t = AffineParams::translation_pixels(1.0, 0.0, 17, 17);
    let bias = model.params_mut().get_mut("itn0.s2.fc.b").expect("itn bias");
    bias.data_mut().copy_from_slice(&t.0);
    let mut g = Graph::new();
    let mut s = model.session(&mut g, false);
    let im = s.graph().constant(input(17, 17, 7));
    let ctx = s.graph().constant(input(17, 17, 8));
    let (it, _) = s.itn(0, 2, im, ctx);
    let out = s.graph().value(it).clone();
    let src = input(17, 17, 7);
    for c in 0..3 {
        for y in 1..16 {
            for xx in 1..16 {
                assert_eq!(out.at(c, y, xx), src.at(c, y, xx + 1));
            }
        }
    }
}

#[test]
fn disabling_itn_and_lw_drops_their_parameters() {
    let full = Model::<f64>::new(small(2, 3), 0).unwrap();
    let cfg = NetworkConfig {
        use_itn: false,
        use_lw: false,
        ..small(2, 3)
    };
    let ablated = Model::<f64>::new(cfg, 0).unwrap();
    assert!(ablated
        .params()
        .names()
        .all(|n| !n.starts_with("itn") && !n.contains(".lw.")));
    assert!(ablated.params().scalar_count() < full.params().scalar_count());
    assert_eq!(ablated.forward(&input(8, 8, 0)).unwrap().refined.len(), 3);
}

#[test]
fn nonmiddle_decoders_are_independent() {
    let model = Model::<f64>::new(small(2, 3), 0).unwrap();
    let names: Vec<&String> = model.params().names().collect();
    assert!(names.iter().any(|n| n.starts_with("dec0.")));
    assert!(names.iter().any(|n| n.starts_with("dec2.")));
    assert!(names.iter().any(|n| n.starts_with("dec_mid.")));
}

/// `|U_t - R|^2` as a function of one FTN's parameters.
struct FtnOp {
    model: Model<f64>,
    names: Vec<String>,
    ue: Image<f64>,
    target: Image<f64>,
}

impl FtnOp {
    fn new() -> Self {
        let mut model = Model::<f64>::new(small(2, 3), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Move the zero-initialized heads off identity so every parameter
        // receives gradient and samples avoid integer grid points.
        for (name, t) in model.params_mut().iter_mut() {
            if name.starts_with("ftn0.l1.") && (name.contains(".fc.") || name.contains(".lw.c2")) {
                for v in t.data_mut() {
                    *v += rng.gen_range(-0.05..0.05);
                }
            }
        }
        let names = model
            .params()
            .names()
            .filter(|n| n.starts_with("ftn0.l1."))
            .cloned()
            .collect();
        let c = model.config().widths()[0];
        let ue = Tensor::from_fn(&[c, 8, 8], |_| rng.gen_range(-1.0..1.0));
        let target = Tensor::from_fn(&[2 * c, 8, 8], |_| rng.gen_range(-1.0..1.0));
        Self {
            model,
            names,
            ue,
            target,
        }
    }

    fn model_at(&self, x: &[f64]) -> Model<f64> {
        let mut m = self.model.clone();
        let mut off = 0;
        for n in &self.names {
            let t = m.params_mut().get_mut(n).unwrap();
            let len = t.len();
            t.data_mut().copy_from_slice(&x[off..off + len]);
            off += len;
        }
        m
    }

    fn eval(&self, x: &[f64], grad: bool) -> (f64, Vec<f64>) {
        let model = self.model_at(x);
        let mut g = Graph::new();
        let ue = g.constant(self.ue.clone());
        let target = g.constant(self.target.clone());
        let mut s = model.session(&mut g, true);
        let (ut, _, _) = s.ftn(0, 1, ue);
        let loss = s.graph().sq_dist(ut, target);
        let bindings = s.into_bindings();
        let value = g.scalar(loss);
        if !grad {
            return (value, Vec::new());
        }
        let grads = g.backward(loss);
        let mut out = Vec::new();
        for n in &self.names {
            let len = model.params().get(n).unwrap().len();
            match bindings.get(n).and_then(|v| grads.get(*v)) {
                Some(t) => out.extend_from_slice(t.data()),
                None => out.extend(std::iter::repeat(0.0).take(len)),
            }
        }
        (value, out)
    }
}

impl GradOperator for FtnOp {
    fn name(&self) -> &str {
        "ftn"
    }
    fn sample(&self, _: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        Some(
            self.names
                .iter()
                .flat_map(|n| self.model.params().get(n).unwrap().data().to_vec())
                .collect(),
        )
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x, false).0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x, true).1
    }
}

#[test]
fn ftn_gradients_reach_both_branches() {
    let op = FtnOp::new();
    assert!(op.names.iter().any(|n| n.contains(".stn.")) && op.names.iter().any(|n| n.contains(".lw.")));
    let r = check_operator(&op, 1, 0);
    assert!(r.passed && r.max_rel_err < 1e-3, "{r:?}");
    // Both branches carry non-zero gradient.
    let x = op.sample(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let g = op.gradient(&x);
    let mut off = 0;
    for n in &op.names {
        let len = op.model.params().get(n).unwrap().len();
        assert!(g[off..off + len].iter().any(|&v| v != 0.0), "{n} has no gradient");
        off += len;
    }
}

#[test]
fn end_to_end_gradient_check() {
    let op = NetworkOp::new(1);
    assert_eq!(op.input_size(), 32);
    let r = check_operator(&op, 1, 1);
    assert!(r.probes >= 50, "{r:?}");
    assert!(r.passed, "{r:?}");
}
