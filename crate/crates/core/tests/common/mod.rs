#![allow(dead_code)]

use lbc::blocks::ImageRGB;
use lbc::layers::{HyperParams, Model};
use lbc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn noise_image(h: usize, w: usize, seed: u64) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * h * w).map(|_| rng.gen_range(0.0f32..=1.0)).collect();
    ImageRGB::new(Tensor::from_vec(&[3, h, w], data).unwrap()).unwrap()
}

pub fn model(block: usize, n: usize, m: usize, k2: usize, seed: u64) -> Model {
    Model::init(HyperParams::new(block, n, m, k2, 0.0130).unwrap(), seed).unwrap()
}

/// Per-site slice of a `C x H x W` tensor.
pub fn site<T: lbc::tensor::Float>(t: &Tensor<T>, r: usize, c: usize) -> Vec<T> {
    let s = t.shape();
    let (ch, h, w) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    (0..ch).map(|k| t.data()[k * h * w + r * w + c]).collect()
}

/// Sets the synthesis output bias to mid-range so that randomly initialized
/// models produce reconstructions away from the clamp.
pub fn lively(mut m: Model) -> Model {
    let c = m.hps().channels();
    m.set_param("ts.conv3.bias", Tensor::full(&[c], 0.5)).unwrap();
    m
}

pub mod causality;
pub mod equivalence;
pub mod golden;
pub mod gradient;
