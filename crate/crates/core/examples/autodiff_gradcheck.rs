//! Builds a small graph with a masked convolution followed by GDN and IGDN,
//! and compares its reverse-mode gradient with central finite differences.

use lbc::autodiff::{grad_check_report, Graph, Var};
use lbc::layers::{gdn, igdn, masked_conv, MaskType};
use lbc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn main() -> lbc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = random(&[3, 5, 5], -1.0, 1.0, &mut rng);
    let params = vec![
        random(&[4, 3, 3, 3], -0.5, 0.5, &mut rng),
        random(&[4], -0.1, 0.1, &mut rng),
        random(&[4], 0.5, 1.5, &mut rng),
        random(&[4, 4], 0.0, 0.2, &mut rng),
    ];

    let loss = |g: &mut Graph<'_, f64>, p: &[Var]| {
        let x = g.constant(input.clone());
        let h = masked_conv(g, x, p[0], Some(p[1]), MaskType::B, 1)?;
        let h = gdn(g, h, p[2], p[3])?;
        let h = igdn(g, h, p[2], p[3])?;
        let sq = g.square(h)?;
        g.mean(sq)
    };

    let report = grad_check_report(loss, &params, 1e-6, 1e-8)?;
    for (name, err) in ["weight", "bias", "beta", "gamma"].iter().zip(&report.group_rel_errors) {
        println!("{name:>6}: relative error {err:.2e}");
    }
    println!("worst element: {:.2e} relative, {:.2e} absolute", report.max_rel_error, report.max_abs_error);
    Ok(())
}
