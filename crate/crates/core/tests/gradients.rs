//! Analytic gradients against central finite differences.

mod support;

use advcf_core::filter::{apply_filter, filter_param_gradient, FilterParams};
use advcf_core::losses::{cross_entropy, cw_loss, pixelwise_ce, style_cw_loss, threshold_loss, LogitLoss};
use advcf_core::model::{input_gradient, TinyCnn, TinyCnnShape};
use advcf_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{
    central_diff, check_logit_loss, five_point_diff, random_image, random_params, rel_err, separated_logits, RefCnn,
};

fn weighted_sum(image: &Image, weights: &[f64]) -> f64 {
    image.data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

#[test]
fn filter_gradient_over_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..120 {
        let pieces = rng.random_range(2..=24);
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let image = random_image(&mut rng, h, w);
        let params = random_params(&mut rng, pieces, 16.0, 0.05, 2.0);
        let upstream: Vec<f64> = (0..image.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = filter_param_gradient(&image, &params, &upstream).unwrap();
        for j in 0..params.theta().len() {
            let loss = |t: f64| {
                let mut theta = params.theta().to_vec();
                theta[j] = t;
                let p = FilterParams::new(pieces, 16.0, theta).unwrap();
                weighted_sum(&apply_filter(&image, &p).unwrap(), &upstream)
            };
            let numeric = central_diff(loss, params.theta()[j], 1e-6);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn chain_through_the_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..4 {
        let net = TinyCnn::new(TinyCnnShape::default(), seed).unwrap();
        let reference = RefCnn::from_model(&net);
        let image = random_image(&mut rng, 32, 32);
        let params = random_params(&mut rng, 8, 4.0, 0.2, 0.45);
        let label = rng.random_range(0..10);

        let filtered = apply_filter(&image, &params).unwrap();
        let pixel = input_gradient(&net, &filtered, LogitLoss::CrossEntropy, label).unwrap();
        let analytic = filter_param_gradient(&image, &params, &pixel.grad).unwrap();
        for _ in 0..10 {
            let j = rng.random_range(0..params.theta().len());
            let loss = |t: f64| {
                let mut theta = params.theta().to_vec();
                theta[j] = t;
                let p = params.with_theta(theta).unwrap();
                let logits = reference.logits(&apply_filter(&image, &p).unwrap());
                cross_entropy(&logits, label).unwrap().0
            };
            // the oracle runs in f64, so a small step keeps the probe off ReLU and pooling kinks
            let numeric = central_diff(loss, params.theta()[j], 1e-7);
            worst = worst.max(rel_err(analytic[j], numeric));
            checked += 1;
        }
    }
    assert_eq!(checked, 40);
    assert!(worst < 1e-2, "max relative error {worst:e}");
}

#[test]
fn reference_network_agrees_with_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = TinyCnn::new(TinyCnnShape::default(), 5).unwrap();
    let reference = RefCnn::from_model(&net);
    for _ in 0..3 {
        let image = random_image(&mut rng, 32, 32);
        let fast = advcf_core::Classifier::logits(&net, &image).unwrap();
        for (a, b) in fast.iter().zip(reference.logits(&image)) {
            assert!((a - b).abs() < 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn margin_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let n = rng.random_range(2..12);
        let z = separated_logits(&mut rng, n);
        let label = rng.random_range(0..n);
        let err = check_logit_loss(|z| cw_loss(z, label, 0.0).unwrap(), &z);
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let n = rng.random_range(2..12);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let label = rng.random_range(0..n);
        let err = check_logit_loss(|z| cross_entropy(z, label).unwrap(), &z);
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn pixelwise_cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let (classes, pixels) = (rng.random_range(2..6), rng.random_range(1..10));
        let labels: Vec<usize> = (0..pixels).map(|_| rng.random_range(0..classes)).collect();
        let z: Vec<f64> = (0..classes * pixels).map(|_| rng.random_range(-4.0..4.0)).collect();
        let err = check_logit_loss(|z| pixelwise_ce(z, classes, &labels).unwrap(), &z);
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn style_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..50 {
        // interior pixels so every probe stays inside [0, 1]
        let data = (0..36).map(|_| rng.random_range(0.05..0.95)).collect();
        let current = Image::new(3, 4, data).unwrap();
        let target = random_image(&mut rng, 3, 4);
        let z = separated_logits(&mut rng, 5);
        let label = rng.random_range(0..5);
        let lambda = rng.random_range(1e-4..2.0);
        let s = style_cw_loss(&current, &z, label, 0.0, lambda, &target).unwrap();

        let err = check_logit_loss(
            |z| {
                let s = style_cw_loss(&current, z, label, 0.0, lambda, &target).unwrap();
                (s.value, s.logit_grad)
            },
            &z,
        );
        assert!(err < 1e-6, "{err:e}");

        for j in 0..current.data().len() {
            let numeric = five_point_diff(
                |t| {
                    let mut data = current.data().to_vec();
                    data[j] = t;
                    let img = Image::new(3, 4, data).unwrap();
                    style_cw_loss(&img, &z, label, 0.0, lambda, &target).unwrap().value
                },
                current.data()[j],
                1e-3,
            );
            let err = rel_err(s.pixel_grad[j], numeric);
            assert!(err < 1e-6, "{err:e}");
        }
    }
}

#[test]
fn threshold_loss_gradient_above_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..100 {
        let t = rng.random_range(-3.0..8.0);
        let score = t + rng.random_range(0.01..5.0);
        let (_, g) = threshold_loss(score, t);
        let numeric = central_diff(|s| threshold_loss(s, t).0, score, 1e-6);
        assert!(rel_err(g, numeric) < 1e-6);
        let below = t - rng.random_range(0.01..5.0);
        assert_eq!(threshold_loss(below, t), (t, 0.0));
    }
}

proptest::proptest! {
    // multiples of 1/8 in a narrow range add without rounding
    #[test]
    fn margin_loss_ignores_a_common_shift(
        raw in proptest::collection::vec(-64i32..64, 2..12),
        shift in -64i32..64,
        pick in 0usize..12,
    ) {
        let z: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 8.0).collect();
        let moved: Vec<f64> = z.iter().map(|v| v + f64::from(shift) / 8.0).collect();
        let label = pick % z.len();
        let a = cw_loss(&z, label, 0.5).unwrap();
        let b = cw_loss(&moved, label, 0.5).unwrap();
        proptest::prop_assert_eq!(a, b);
    }
}
