//! Finite-difference checks of the full training losses on a tiny double
//! precision model (4x4 blocks, N = 8, M = 2, 2x2 block grid).

use std::collections::HashMap;

use lbc::autodiff::{grad_check_report, GradCheck, Graph, Var};
use lbc::layers::{Bound, HyperParams, Model};
use lbc::tensor::Tensor;
use lbc::training::{finetune_loss, open_loop_forward, rd_loss, Latents};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAMBDA: f64 = 0.01;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Tiny model with small random biases, so that no activation sits exactly
/// at a kink, plus a source and a context grid.
pub fn tiny_case() -> (Model<f64>, Tensor<f64>, Tensor<f64>) {
    let hps = HyperParams::new(4, 8, 2, 1, LAMBDA).unwrap();
    let mut model: Model<f64> = Model::init(hps, 5).unwrap().cast();
    let biases: Vec<String> = model.params().keys().filter(|k| k.ends_with(".bias")).cloned().collect();
    for (i, name) in biases.iter().enumerate() {
        let b = model.param(name).unwrap().clone();
        let noise = random(b.shape(), 50 + i as u64, -0.1, 0.1);
        let sum = b.data().iter().zip(noise.data()).map(|(a, n)| a + n).collect();
        model.set_param(name, Tensor::from_vec(b.shape(), sum).unwrap()).unwrap();
    }
    let x = random(&[48, 2, 2], 11, 0.0, 1.0);
    let ctx = random(&[48, 2, 2], 12, 0.0, 1.0);
    (model, x, ctx)
}

/// Compares the analytic gradient of the RD loss (or the fine-tune loss)
/// with respect to every raw parameter against central differences.
pub fn check(finetune: bool) -> GradCheck {
    let (model, x, ctx) = tiny_case();
    let names: Vec<String> = model.params().keys().cloned().collect();
    let params: Vec<Tensor<f64>> = model.params().values().cloned().collect();
    let f = |g: &mut Graph<'_, f64>, vars: &[Var]| {
        let raw: HashMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
        let p = Bound::from_raw(g, raw)?;
        let xv = g.constant(x.clone());
        let cv = g.constant(ctx.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        if finetune {
            finetune_loss(g, &p, xv, cv, LAMBDA, &mut rng)
        } else {
            let out = open_loop_forward(g, &p, xv, cv, Latents::Noise(&mut rng))?;
            Ok(rd_loss(g, xv, &out, LAMBDA)?.loss)
        }
    };
    grad_check_report(f, &params, 1e-5, 1e-6).unwrap()
}
