use flic_core::codec::image::RgbImage;
use flic_core::codec::metrics::{bd_rate, ms_ssim, mse, psnr};
use flic_core::codec::spectrum::{fft2, luma, spectrum};
use flic_core::numerics::Tensor;
use flic_core::FlicError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Smooth content plus mild texture, kept inside [0, 1].
    Tensor::from_fn(&[3, h, w], |i| {
        let (y, x) = ((i / w) % h, i % w);
        0.5 + 0.3 * ((x as f64) * 0.3).sin() * ((y as f64) * 0.2).cos() + 0.1 * rng.random::<f64>()
    })
}

#[test]
fn identical_images() {
    let a = image(1, 32, 32);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn black_versus_white() {
    let a = Tensor::<f64>::zeros(&[3, 8, 8]);
    let b = Tensor::<f64>::full(&[3, 8, 8], 1.0);
    assert_eq!(mse(&a, &b).unwrap(), 1.0);
    assert_eq!(psnr(&a, &b).unwrap(), 0.0);
}

#[test]
fn psnr_of_a_constant_offset() {
    // mse = 0.1^2 = 0.01 -> 20 dB
    let a = image(2, 16, 16);
    let b = a.map(|v| v + 0.1);
    assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn shape_mismatch_is_rejected() {
    let a = Tensor::<f64>::zeros(&[3, 8, 8]);
    let b = Tensor::<f64>::zeros(&[3, 8, 9]);
    assert!(matches!(mse(&a, &b), Err(FlicError::InvalidArgument(_))));
    assert!(matches!(psnr(&a, &b), Err(FlicError::InvalidArgument(_))));
    assert!(matches!(ms_ssim(&a, &b), Err(FlicError::InvalidArgument(_))));
}

#[test]
fn ms_ssim_decreases_with_noise() {
    let a = image(3, 64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<f64> = (0..a.len())
        .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
        .collect();
    let scores: Vec<f64> = [0.02, 0.08, 0.2]
        .iter()
        .map(|&sigma| {
            let noisy = Tensor::new(a.shape(), a.data().iter().zip(&base).map(|(v, n)| v + sigma * n).collect())
                .unwrap();
            ms_ssim(&a, &noisy).unwrap()
        })
        .collect();
    assert!(scores[0] < 1.0 && scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    assert!(scores[2] > 0.0);
}

#[test]
fn ms_ssim_handles_small_images() {
    let a = image(5, 8, 12);
    let b = a.map(|v| v * 0.9);
    let s = ms_ssim(&a, &b).unwrap();
    assert!(s > 0.0 && s < 1.0);
}

fn curve() -> Vec<(f64, f64)> {
    vec![(0.1, 26.0), (0.25, 29.5), (0.5, 32.0), (1.0, 35.2), (1.6, 37.0)]
}

#[test]
fn bd_rate_of_identical_curves_is_zero() {
    assert!(bd_rate(&curve(), &curve()).unwrap().abs() < 1e-12);
}

#[test]
fn bd_rate_of_a_constant_rate_ratio() {
    // ln(0.9 r) - ln r is constant, so the average log difference is ln 0.9 exactly.
    for k in [0.9, 0.5, 1.25] {
        let scaled: Vec<_> = curve().into_iter().map(|(r, q)| (k * r, q)).collect();
        let forward = bd_rate(&curve(), &scaled).unwrap();
        let backward = bd_rate(&scaled, &curve()).unwrap();
        assert!((forward - (k - 1.0) * 100.0).abs() < 0.01, "{k}: {forward}");
        assert!((backward - (1.0 / k - 1.0) * 100.0).abs() < 0.1, "{k}: {backward}");
        assert!(forward.signum() == -backward.signum());
    }
}

#[test]
fn bd_rate_errors() {
    assert!(bd_rate(&curve()[..3], &curve()).is_err());
    let shifted: Vec<_> = curve().into_iter().map(|(r, q)| (r, q + 20.0)).collect();
    assert!(matches!(bd_rate(&curve(), &shifted), Err(FlicError::InvalidArgument(_))));
    let mut bad = curve();
    bad[0].0 = 0.0;
    assert!(bd_rate(&bad, &curve()).is_err());
}

fn naive_dft(data: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    re += data[y * w + x] * phase.cos();
                    im += data[y * w + x] * phase.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

#[test]
fn fft_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<f64> = (0..256).map(|_| rng.random()).collect();
    let fast = fft2(&data, 16, 16).unwrap();
    let slow = naive_dft(&data, 16, 16);
    let err = fast
        .iter()
        .zip(&slow)
        .map(|(a, &(re, im))| (a.re - re).abs().max((a.im - im).abs()))
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> RgbImage {
    let mut data = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&[f(x, y); 3]);
        }
    }
    RgbImage::new(w, h, data).unwrap()
}

#[test]
fn luma_uses_601_weights() {
    let img = RgbImage::new(1, 1, vec![255, 0, 0]).unwrap();
    assert!((luma(&img).data[0] - 0.299).abs() < 1e-12);
    let img = RgbImage::new(1, 1, vec![10, 20, 30]).unwrap();
    assert!((luma(&img).data[0] - (0.299 * 10.0 + 0.587 * 20.0 + 0.114 * 30.0) / 255.0).abs() < 1e-12);
}

#[test]
fn constant_image_has_a_single_centred_peak() {
    let s = spectrum(&gray(16, 16, |_, _| 200)).unwrap();
    assert_eq!((s.width, s.height), (16, 16));
    for y in 0..16 {
        for x in 0..16 {
            let want = if (x, y) == (8, 8) { 1.0 } else { 0.0 };
            assert!((s.get(x, y) - want).abs() < 1e-9, "({x}, {y}) = {}", s.get(x, y));
        }
    }
}

#[test]
fn horizontal_sinusoid_gives_symmetric_horizontal_peaks() {
    let f = 4.0;
    let img = gray(32, 32, |x, _| (127.5 + 100.0 * (2.0 * std::f64::consts::PI * f * x as f64 / 32.0).cos()).round() as u8);
    let s = spectrum(&img).unwrap();
    let centre = s.get(16, 16);
    let (left, right) = (s.get(12, 16), s.get(20, 16));
    assert!((left - right).abs() < 1e-9);
    // Away from the DC row, columns of a horizontally varying image carry nothing.
    for y in (0..32).filter(|&y| y != 16) {
        for x in 0..32 {
            assert!(s.get(x, y) < 1e-6);
        }
    }
    for x in (0..32).filter(|&x| ![12, 16, 20].contains(&x)) {
        assert!(s.get(x, 16) < left, "x = {x}");
    }
    assert!(centre > 0.0 && left > 0.5);
}

#[test]
fn spectrum_pads_to_powers_of_two() {
    let s = spectrum(&gray(20, 12, |x, y| (x * 9 + y * 5) as u8)).unwrap();
    assert_eq!((s.width, s.height), (32, 16));
    let max = s.data.iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, 1.0);
    assert!(s.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(s.to_image().is_ok());
}
