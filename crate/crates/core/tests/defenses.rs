//! Defense transforms against brute-force oracles and a reference JPEG codec.

use std::path::PathBuf;

use advcf_core::defenses::{
    grayscale, jpeg_roundtrip, median_filter3, random_resize_pad, resize_pad_with, Defense,
};
use advcf_core::image::ppm::read_ppm;
use advcf_core::Image;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn psnr(a: &Image, b: &Image) -> f64 {
    let mse = a.squared_l2_distance(b) / a.data().len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Median of the 3x3 window with mirrored borders (edge pixel repeated), by
/// sorting the nine samples.
fn brute_median(image: &Image) -> Image {
    let (h, w) = image.dims();
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i - 1) as usize
        } else if i as usize >= n {
            2 * n - 1 - i as usize
        } else {
            i as usize
        }
        .min(n - 1)
    };
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut window = Vec::with_capacity(9);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let yy = reflect(y as isize + dy, h);
                        let xx = reflect(x as isize + dx, w);
                        window.push(image.get(c, yy, xx));
                    }
                }
                window.sort_by(f64::total_cmp);
                data.push(window[4]);
            }
        }
    }
    Image::new(h, w, data).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    use rand::Rng;
    Image::new(h, w, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn median_matches_sorting_oracle_on_5x5() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let image = random_image(&mut rng, 5, 5);
        assert_eq!(median_filter3(&image).data(), brute_median(&image).data());
    }
}

proptest! {
    #[test]
    fn median_matches_sorting_oracle(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let image = random_image(&mut ChaCha8Rng::seed_from_u64(seed), h, w);
        prop_assert_eq!(median_filter3(&image), brute_median(&image));
    }

    #[test]
    fn defenses_keep_images_valid(side in 4usize..20, seed in any::<u64>(), pick in 0usize..5) {
        let image = random_image(&mut ChaCha8Rng::seed_from_u64(seed), side, side);
        let defense = [
            Defense::Identity,
            Defense::Grayscale,
            Defense::Median3,
            Defense::Jpeg { quality: 30 },
            Defense::ResizePad,
        ][pick];
        let out = defense.apply(&image, seed).unwrap();
        prop_assert_eq!(out.dims(), image.dims());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn grayscale_is_idempotent(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let once = grayscale(&random_image(&mut ChaCha8Rng::seed_from_u64(seed), h, w));
        prop_assert_eq!(grayscale(&once), once);
    }
}

#[test]
fn grayscale_of_pure_red() {
    let out = grayscale(&Image::new(1, 1, vec![1.0, 0.0, 0.0]).unwrap());
    for c in 0..3 {
        assert!((out.channel(c)[0] - 0.299).abs() < 1e-12);
    }
}

#[test]
fn jpeg_tracks_the_reference_codec() {
    let scene = read_ppm(fixture("scene.ppm")).unwrap();
    for (quality, file) in [(30u8, "scene_q30_pillow.ppm"), (90, "scene_q90_pillow.ppm")] {
        let reference = read_ppm(fixture(file)).unwrap();
        let ours = jpeg_roundtrip(&scene, quality).unwrap();
        let (ours_db, ref_db) = (psnr(&scene, &ours), psnr(&scene, &reference));
        let agreement = psnr(&ours, &reference);
        // integer vs float DCT is the remaining difference
        assert!((ours_db - ref_db).abs() < 0.25, "Q{quality}: {ours_db} vs {ref_db}");
        assert!(agreement > 40.0, "Q{quality}: {agreement}");
    }
}

#[test]
fn jpeg_lower_quality_loses_more_on_noise() {
    let noise = random_image(&mut ChaCha8Rng::seed_from_u64(4), 32, 32);
    let q30 = psnr(&noise, &jpeg_roundtrip(&noise, 30).unwrap());
    let q90 = psnr(&noise, &jpeg_roundtrip(&noise, 90).unwrap());
    assert!(q30 < q90, "{q30} vs {q90}");
}

#[test]
fn jpeg_rejects_out_of_range_quality() {
    let image = Image::filled(8, 8, 0.5).unwrap();
    assert!(jpeg_roundtrip(&image, 0).is_err());
    assert!(jpeg_roundtrip(&image, 101).is_err());
}

#[test]
fn resize_pad_degenerate_draw_is_identity() {
    let image = random_image(&mut ChaCha8Rng::seed_from_u64(2), 32, 32);
    let out = resize_pad_with(&image, 32, 32, 0, 0).unwrap();
    assert!(image.linf_distance(&out) < 1e-6);
}

#[test]
fn resize_pad_is_seeded() {
    let image = random_image(&mut ChaCha8Rng::seed_from_u64(3), 32, 32);
    let a = random_resize_pad(&image, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let b = random_resize_pad(&image, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dims(), (32, 32));
    assert!(random_resize_pad(&random_image(&mut ChaCha8Rng::seed_from_u64(3), 4, 5), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}
