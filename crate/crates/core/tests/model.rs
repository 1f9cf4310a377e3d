use flic_core::layers::{Boundary, Direction};
use flic_core::model::{FlicConfig, FlicModel, LatentPair};
use flic_core::numerics::Tensor;
use flic_core::wavelet::{haar_filter_tensor, HaarBand};
use flic_core::FlicError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[3, h, w], |_| rng.random::<f32>())
}

fn tiny() -> FlicModel<f32> {
    FlicModel::new(FlicConfig::tiny(), 3).unwrap()
}

/// Parameter count of a config, from the layer definitions alone.
fn census(channels: &[usize]) -> usize {
    let rb_down = |cin: usize, cout: usize| 9 * cin * cout + 9 * cout * cout + cin * cout;
    let rb_up = |cin: usize, cout: usize| 36 * cin * cout + 9 * cout * cout + 36 * cin * cout;
    let gdn = |c: usize| c + c * c;
    let density = |c: usize| c * (3 + 9 + 9 + 3) + c * (3 + 3 + 3 + 1) + c * (3 + 3 + 3);
    let s = channels.len();
    let latent = channels[s - 1];
    let mut total = 0;
    let mut cin = 3;
    for (i, &cout) in channels.iter().enumerate() {
        total += if i == 0 {
            rb_down(cin, cout) + 9 * cin * cout
        } else {
            2 * rb_down(cin, cout) + 2 * 9 * cin * cout
        };
        cin = cout;
    }
    total += 2 * gdn(latent) + 2 * 9 * latent * latent + 2 * gdn(latent);
    for i in 0..s {
        let cin = channels[s - 1 - i];
        total += if i + 1 == s {
            rb_up(cin, 3) + 36 * cin * 3
        } else {
            let cout = channels[s - 2 - i];
            2 * rb_up(cin, cout) + 2 * 36 * cin * cout
        };
    }
    total + 2 * density(latent)
}

#[test]
fn toy_shapes_for_even_sizes() {
    let m = FlicModel::<f32>::new(FlicConfig::toy(), 0).unwrap();
    for (h, w) in [(64, 64), (96, 128), (128, 96)] {
        let x = random_image(h, w, 1);
        let y = m.analyze(&x).unwrap();
        assert_eq!(y.low.shape(), &[128, h / 16, w / 16]);
        assert_eq!(y.high.shape(), y.low.shape());
        assert_eq!(m.synthesize(&y, h, w).unwrap().shape(), &[3, h, w]);
    }
}

#[test]
fn odd_sizes_pad_and_crop() {
    let m = tiny();
    for (h, w) in [(5, 9), (7, 4), (13, 13), (4, 17)] {
        let x = random_image(h, w, 2);
        let y = m.analyze(&x).unwrap();
        assert_eq!(y.low.shape(), &[6, h.div_ceil(4), w.div_ceil(4)]);
        assert_eq!(m.synthesize(&y, h, w).unwrap().shape(), &[3, h, w]);
    }
}

#[test]
fn too_small_or_misshaped_inputs_are_rejected() {
    let m = tiny();
    assert!(matches!(m.analyze(&random_image(3, 8, 0)), Err(FlicError::InvalidArgument(_))));
    assert!(m.analyze(&Tensor::zeros(&[1, 8, 8])).is_err());
    let y = m.analyze(&random_image(8, 8, 0)).unwrap();
    assert!(m.synthesize(&y, 16, 8).is_err());
    let bad = LatentPair::new(Tensor::<f32>::zeros(&[5, 2, 2]), Tensor::zeros(&[5, 2, 2])).unwrap();
    assert!(m.synthesize(&bad, 8, 8).is_err());
    assert!(LatentPair::new(Tensor::<f32>::zeros(&[6, 2, 2]), Tensor::zeros(&[6, 2, 3])).is_err());
}

#[test]
fn boundary_layers_have_single_ports() {
    let m = FlicModel::<f32>::new(FlicConfig::toy(), 0).unwrap();
    let first = &m.analysis_layers()[0];
    assert_eq!((first.boundary, first.cin, first.direction), (Boundary::First, 3, Direction::Down));
    assert!(first.intra_low.is_none() && first.low_to_high.is_none());
    let last = m.synthesis_layers().last().unwrap();
    assert_eq!((last.boundary, last.cout, last.direction), (Boundary::Last, 3, Direction::Up));
    assert!(last.intra_low.is_none() && last.high_to_low.is_none());
    for l in &m.analysis_layers()[1..] {
        assert_eq!(l.boundary, Boundary::Interior);
    }
}

#[test]
fn analysis_is_deterministic() {
    let m = tiny();
    let x = random_image(16, 16, 4);
    assert_eq!(m.analyze(&x).unwrap(), m.analyze(&x.clone()).unwrap());
    let again = FlicModel::<f32>::new(FlicConfig::tiny(), 3).unwrap();
    assert_eq!(m.weights_bytes(), again.weights_bytes());
    let other = FlicModel::<f32>::new(FlicConfig::tiny(), 4).unwrap();
    assert_ne!(m.model_id(), other.model_id());
}

#[test]
fn constant_gray_input_has_no_high_pass_content_in_first_layer() {
    let m = FlicModel::<f32>::new(FlicConfig::toy(), 0).unwrap();
    let x = Tensor::full(&[3, 64, 64], 0.5f32);
    assert!(haar_filter_tensor(&x, HaarBand::HH).unwrap().data().iter().all(|&v| v == 0.0));
    let mut probe = Vec::new();
    m.analyze_probed(&x, Some(&mut probe)).unwrap();
    assert_eq!(probe.len(), 4);
    assert!(probe[0].low_to_high.is_none());
    // The LL path of a constant image is a constant 1.0 map convolved with zero padding.
    let h2l = probe[0].high_to_low.as_ref().unwrap();
    assert_eq!(h2l.shape(), &[32, 32, 32]);
    assert!(probe[1..].iter().all(|t| t.low_to_high.is_some() && t.high_to_low.is_some()));
}

#[test]
fn parameter_census() {
    let toy = FlicModel::<f32>::new(FlicConfig::toy(), 0).unwrap();
    assert_eq!(toy.num_parameters(), census(&[32, 64, 96, 128]));
    assert_eq!(toy.num_parameters(), 6_387_953);
    let tiny = tiny();
    assert_eq!(tiny.num_parameters(), census(&[4, 6]));
    let large = census(&FlicConfig::large().channels) as f64;
    assert!((large - 30e6).abs() / 30e6 < 0.1, "{large}");

    let gdns = toy
        .params()
        .iter()
        .filter(|p| p.name().starts_with("analysis.gdn") && p.name().ends_with(".beta"))
        .count();
    assert_eq!(gdns, 2);
    for p in toy.params().iter() {
        let name = p.name();
        if !name.starts_with("entropy.") && !name.contains("gdn") {
            assert_eq!(p.value().shape().len(), 4, "{name} is not a convolution kernel");
        }
    }
}

#[test]
fn weights_round_trip_bit_exact() {
    let m = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.flcw");
    m.save_weights(&path).unwrap();
    let back = FlicModel::<f32>::load_weights(&path).unwrap();
    assert_eq!(back.weights_bytes(), m.weights_bytes());
    assert_eq!(back.config(), m.config());
    for (a, b) in back.params().iter().zip(m.params().iter()) {
        assert_eq!(a.name(), b.name());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.value()), bits(b.value()));
    }
    let x = random_image(8, 8, 9);
    assert_eq!(back.analyze(&x).unwrap(), m.analyze(&x).unwrap());
}

#[test]
fn weight_file_layout() {
    let bytes = tiny().weights_bytes();
    assert_eq!(&bytes[..5], b"FLCW\x01");
    let entries = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    assert_eq!(entries, tiny().params().len() + 2);
    // First entry: "config.channels", f32, rank 1, dims [2], values [4, 6].
    assert_eq!(u16::from_le_bytes([bytes[9], bytes[10]]), 15);
    assert_eq!(&bytes[11..26], b"config.channels");
    assert_eq!(&bytes[26..28], &[0, 1]);
    assert_eq!(&bytes[28..32], &2u32.to_le_bytes());
    assert_eq!(&bytes[32..36], &4f32.to_le_bytes());
    assert_eq!(&bytes[36..40], &6f32.to_le_bytes());
}

#[test]
fn truncated_weight_files_fail_with_offsets() {
    let bytes = tiny().weights_bytes();
    for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        match FlicModel::<f32>::from_weights_bytes(&bytes[..cut]) {
            Err(FlicError::Format { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut {cut}: {:?}", other.map(|_| ())),
        }
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(FlicModel::<f32>::from_weights_bytes(&extra), Err(FlicError::Format { .. })));
}

#[test]
fn bad_header_and_dtype_are_reported() {
    let mut bytes = tiny().weights_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(FlicModel::<f32>::from_weights_bytes(&bad), Err(FlicError::Format { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(FlicModel::<f32>::from_weights_bytes(&bad), Err(FlicError::Format { offset: 4, .. })));
    bytes[26] = 7;
    match FlicModel::<f32>::from_weights_bytes(&bytes) {
        Err(FlicError::Format { offset, message }) => {
            assert_eq!(offset, 26);
            assert!(message.contains("dtype code 7"), "{message}");
        }
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn random_weight_files_never_panic() {
    let bytes = tiny().weights_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let mut b = bytes.clone();
        for _ in 0..rng.random_range(1..4) {
            let i = rng.random_range(0..64.min(b.len()));
            b[i] = rng.random();
        }
        let _ = FlicModel::<f32>::from_weights_bytes(&b);
    }
}
