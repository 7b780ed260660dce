//! Shows which grid sites of the entropy network output react when one
//! block of its reconstructed context changes. Only sites after the changed
//! block in raster order may move.

use lbc::autodiff::Graph;
use lbc::layers::{entropy_net_n, HyperParams, Layout, MaskType, Model};
use lbc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sigma_map(model: &Model, ctx: &Tensor<f32>) -> lbc::Result<Tensor<f32>> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false)?;
    let cv = g.constant(ctx.clone());
    let (_, sigma) = entropy_net_n(&mut g, &p, cv, Layout::Grid, None)?;
    Ok(g.value(sigma).clone())
}

fn main() -> lbc::Result<()> {
    let (hb, wb) = (6, 8);
    for (name, mask) in [("A", MaskType::A), ("B", MaskType::B)] {
        let taps: String = mask.allowed().iter().map(|&a| if a { 'x' } else { '.' }).collect();
        println!("mask {name}: {} / {} / {}", &taps[..3], &taps[3..6], &taps[6..]);
    }

    for k2 in [1, 3] {
        let model = Model::init(HyperParams::new(4, 16, 4, k2, 0.013)?, 7)?;
        let channels = model.hps().channels();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..channels * hb * wb).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ctx = Tensor::from_vec(&[channels, hb, wb], data)?;

        let (r, c) = (2, 3);
        let mut changed = ctx.clone();
        for k in 0..channels {
            changed.data_mut()[k * hb * wb + r * wb + c] += 0.5;
        }
        let (a, b) = (sigma_map(&model, &ctx)?, sigma_map(&model, &changed)?);

        println!("\nK2 = {k2}: context block ({r}, {c}) changed, '#' marks outputs that moved");
        let m = model.hps().m;
        for i in 0..hb {
            let row: String = (0..wb)
                .map(|j| {
                    let moved = (0..m).any(|k| {
                        let idx = k * hb * wb + i * wb + j;
                        a.data()[idx] != b.data()[idx]
                    });
                    match (moved, (i, j) == (r, c)) {
                        (_, true) => 'o',
                        (true, _) => '#',
                        _ => '.',
                    }
                })
                .collect();
            println!("  {row}");
        }
    }
    Ok(())
}
