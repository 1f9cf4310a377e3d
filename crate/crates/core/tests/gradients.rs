#[allow(dead_code)]
mod support;

use support::gradient_suite::{self as suite, TOLERANCE};

fn assert_all(results: Vec<(String, flic_core::gradcheck::GradCheckReport)>) {
    for (name, r) in &results {
        assert!(r.checked > 0, "{name}: nothing checked");
        assert!(r.max_rel_error < TOLERANCE, "{name}: {r:?}");
    }
}

#[test]
fn conv2d() {
    assert_all(suite::conv2d().unwrap());
}

#[test]
fn pixel_shuffle() {
    assert_all(suite::pixel_shuffle().unwrap());
}

#[test]
fn leaky_relu() {
    assert_all(suite::leaky_relu().unwrap());
}

#[test]
fn haar_filter() {
    assert_all(suite::haar().unwrap());
}

#[test]
fn gdn_and_igdn() {
    assert_all(suite::gdn_igdn().unwrap());
}

#[test]
fn residual_blocks() {
    assert_all(suite::residual_blocks().unwrap());
}

#[test]
fn octave_layers() {
    assert_all(suite::octave_layers().unwrap());
}

#[test]
fn likelihood() {
    assert_all(suite::likelihood().unwrap());
}

#[test]
fn toy_loss_mse() {
    assert_all(suite::toy_loss(flic_core::training::Metric::Mse).unwrap());
}

#[test]
fn toy_loss_ms_ssim() {
    assert_all(suite::toy_loss(flic_core::training::Metric::MsSsim).unwrap());
}
