use blurvid::gradcheck::{check_operator, LossOp, LossTerm};
use blurvid::objectives::{
    multiscale_photometric, order_invariant_eval, psnr, ssim, symmetric_penalty, total_loss,
    transformation_consistency, Direction, LossComponents, LossConfig, PSNR_CAP_DB,
};
use blurvid::{Image, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full(h: usize, v: f64) -> Image<f64> {
    Image::full(&[3, h, h], v)
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image<f64> {
    Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
}

// Closed-form test images shared with the reference SSIM computation.
fn smooth(k: f64) -> Image<f64> {
    Tensor::from_fn(&[3, 32, 40], |i| {
        let (c, y, x) = (i[0] as f64, i[1] as f64, i[2] as f64);
        0.5 + 0.35 * (0.31 * x * (k + 1.0) + 0.17 * y + 1.3 * c).sin() * (0.23 * y - 0.11 * x * k).cos()
    })
}

fn perturbed() -> Image<f64> {
    let a = smooth(0.0);
    Tensor::from_fn(&[3, 32, 40], |i| {
        let (y, x) = (i[1] as f64, i[2] as f64);
        (a.at(i[0], i[1], i[2]) + 0.1 * (0.5 * x).sin() * (0.4 * y).cos()).clamp(0.0, 1.0)
    })
}

fn noise(s: f64) -> Image<f64> {
    Tensor::from_fn(&[3, 32, 40], |i| {
        let (c, y, x) = (i[0] as f64, i[1] as f64, i[2] as f64);
        let v = (x * 12.9898 + y * 78.233 + c * 37.719 + s * 4.1414).sin() * 43758.5453;
        v - v.floor()
    })
}

#[test]
fn photometric_hand_arithmetic() {
    let y = full(4, 0.5);
    assert_eq!(
        multiscale_photometric(&[vec![y.clone()]], &[y.clone()], &[1.0]).unwrap(),
        0.0
    );
    let l = multiscale_photometric(&[vec![full(4, 0.6)]], &[y.clone()], &[1.0]).unwrap();
    assert!((l - 0.1).abs() < 1e-9);
    // Coarse scale off by 0.2, full scale by 0.1. A constant image
    // downsamples to the same constant.
    let l = multiscale_photometric(&[vec![full(2, 0.7), full(4, 0.6)]], &[y], &[0.5, 1.0]).unwrap();
    assert!((l - 0.2).abs() < 1e-9);
}

#[test]
fn consistency_hand_arithmetic() {
    let id: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    assert_eq!(transformation_consistency(&[vec![id; 4], vec![id; 4]]).unwrap(), 0.0);
    let mut moved = id;
    moved[0] += 0.1;
    assert!((transformation_consistency(&[vec![id, moved]]).unwrap() - 0.01).abs() < 1e-9);
    let mut third = moved;
    third[2] += 0.2;
    assert!((transformation_consistency(&[vec![id, moved, third]]).unwrap() - 0.05).abs() < 1e-9);
    assert!(transformation_consistency(&[vec![id]]).is_err());
}

#[test]
fn penalty_hand_arithmetic() {
    let gt = vec![full(4, 0.2), full(4, 0.5), full(4, 0.8)];
    let symmetric = vec![gt[2].clone(), gt[1].clone(), gt[0].clone()];
    assert_eq!(symmetric_penalty(&symmetric, &gt).unwrap(), 0.0);
    // Static scene: correct frames coincide with their mirror.
    let static_gt = vec![full(4, 0.3); 3];
    assert_eq!(symmetric_penalty(&static_gt, &static_gt).unwrap(), 0.0);
    let pred = vec![full(4, 0.8 - 0.2), full(4, 0.5), full(4, 0.2 + 0.1)];
    assert!((symmetric_penalty(&pred, &gt).unwrap() + 0.3).abs() < 1e-9);
}

#[test]
fn penalty_is_never_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let pred: Vec<_> = (0..5).map(|_| random_image(&mut rng, 4, 4)).collect();
        let gt: Vec<_> = (0..5).map(|_| random_image(&mut rng, 4, 4)).collect();
        assert!(symmetric_penalty(&pred, &gt).unwrap() <= 0.0);
    }
}

#[test]
fn total_hand_arithmetic() {
    let c = LossComponents {
        photometric: 0.2,
        consistency: 0.05,
        penalty: -0.3,
    };
    assert!((total_loss(&c, 0.1, 0.01) - 0.202).abs() < 1e-9);
    assert_eq!(total_loss(&c, 0.0, 0.0), 0.2);
    let exact = LossComponents {
        photometric: 0.0,
        consistency: 0.0,
        penalty: -0.4,
    };
    assert!(total_loss(&exact, 0.1, 0.01) <= 0.0);
}

#[test]
fn default_weights_and_ablation_flags() {
    let w = LossConfig::default().weights(3).unwrap();
    assert_eq!(w.levels, vec![0.25, 0.5, 1.0]);
    assert_eq!((w.lambda_tc, w.lambda_p), (0.1, 0.01));
    let off = LossConfig {
        use_tcl: false,
        use_pt: false,
        ..LossConfig::default()
    };
    let w = off.weights(3).unwrap();
    assert_eq!((w.lambda_tc, w.lambda_p), (0.0, 0.0));
}

#[test]
fn loss_gradients_match_finite_differences() {
    for term in [
        LossTerm::Photometric,
        LossTerm::Consistency,
        LossTerm::Penalty,
        LossTerm::Total,
    ] {
        let r = check_operator(&LossOp::new(term), 20, 7);
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn psnr_closed_forms() {
    let a = full(8, 0.3);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    assert!((psnr(&a, &full(8, 0.4)).unwrap() - 20.0).abs() < 1e-6);
    assert!(psnr(&full(8, 0.0), &full(8, 1.0)).unwrap().abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = (random_image(&mut rng, 8, 8), random_image(&mut rng, 8, 8));
    assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    assert!(psnr(&x, &full(9, 0.0)).is_err());
}

#[test]
fn ssim_matches_reference_values() {
    // scikit-image structural_similarity(gaussian_weights=True, sigma=1.5,
    // use_sample_covariance=False, data_range=1.0, channel_axis=0).
    let cases = [
        (smooth(0.0), smooth(1.0), 0.052518395768043),
        (smooth(0.0), perturbed(), 0.910359832748020),
        (smooth(0.0), smooth(0.0).map(|v| 1.0 - v), -0.779508976116573),
        (noise(0.0), noise(1.0), 0.025906512564429),
    ];
    for (a, b, want) in cases {
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!((ssim(&b, &a).unwrap() - got).abs() < 1e-12);
    }
    assert!((ssim(&smooth(0.0), &smooth(0.0)).unwrap() - 1.0).abs() < 1e-12);
    assert!(ssim(&full(10, 0.5), &full(10, 0.5)).is_err());
}

#[test]
fn protocol_direction_flip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gt: Vec<_> = (0..3).map(|_| random_image(&mut rng, 16, 16)).collect();
    let g: Vec<&Image<f64>> = gt.iter().collect();
    let fwd = order_invariant_eval(&g, &g).unwrap();
    assert_eq!(fwd.direction, Direction::Forward);
    assert!(fwd.psnr.iter().all(|&p| p == PSNR_CAP_DB));
    let rev_pred: Vec<&Image<f64>> = gt.iter().rev().collect();
    let rev = order_invariant_eval(&rev_pred, &g).unwrap();
    assert_eq!(rev.direction, Direction::Reverse);
    assert_eq!(rev.psnr, fwd.psnr);
    assert_eq!(rev.ssim, fwd.ssim);
    assert!(order_invariant_eval(&g[..2], &g).is_err());
}

#[test]
fn protocol_uses_mean_psnr_not_frame_votes() {
    let gt = [full(16, 0.1), full(16, 0.5), full(16, 0.9)];
    // Frames 0 and 2 sit slightly closer to the reversed GT, but frame 1 is
    // far worse in that alignment, so forward wins on the mean.
    let pred = [full(16, 0.52), full(16, 0.5), full(16, 0.48)];
    let p: Vec<&Image<f64>> = pred.iter().collect();
    let g: Vec<&Image<f64>> = gt.iter().collect();
    let report = order_invariant_eval(&p, &g).unwrap();

    let mean = |pairs: &[(usize, usize)]| pairs.iter().map(|&(i, j)| psnr(p[i], g[j]).unwrap()).sum::<f64>() / 3.0;
    let forward = mean(&[(0, 0), (1, 1), (2, 2)]);
    let reverse = mean(&[(2, 0), (1, 1), (0, 2)]);
    let want = if reverse > forward {
        Direction::Reverse
    } else {
        Direction::Forward
    };
    assert_eq!(report.direction, want);
    assert!((report.mean_psnr() - forward.max(reverse)).abs() < 1e-9);
}

#[test]
fn protocol_brute_force_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let gt: Vec<_> = (0..3).map(|_| random_image(&mut rng, 12, 12)).collect();
        let mut pred = Vec::new();
        for f in &gt {
            pred.push(Tensor::from_fn(f.shape(), |i| {
                (f.at(i[0], i[1], i[2]) + rng.gen_range(-0.3..0.3)).clamp(0.0, 1.0)
            }));
        }
        let pred: Vec<_> = if rng.gen_bool(0.5) {
            pred.into_iter().rev().collect()
        } else {
            pred
        };
        let p: Vec<&Image<f64>> = pred.iter().collect();
        let g: Vec<&Image<f64>> = gt.iter().collect();
        let forward: Vec<f64> = (0..3).map(|i| psnr(p[i], g[i]).unwrap()).collect();
        let reverse: Vec<f64> = (0..3).map(|i| psnr(p[2 - i], g[i]).unwrap()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / 3.0;
        let report = order_invariant_eval(&p, &g).unwrap();
        if mean(&reverse) > mean(&forward) {
            assert_eq!(report.direction, Direction::Reverse);
            assert_eq!(report.psnr, reverse);
        } else {
            assert_eq!(report.direction, Direction::Forward);
            assert_eq!(report.psnr, forward);
        }
        // Reversing the prediction flips the direction and keeps the scores.
        let p_rev: Vec<&Image<f64>> = p.iter().rev().copied().collect();
        let flipped = order_invariant_eval(&p_rev, &g).unwrap();
        assert!((flipped.mean_psnr() - report.mean_psnr()).abs() < 1e-12);
    }
}
