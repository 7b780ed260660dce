//! The whole-image open-loop pass, fed the codec's own reconstructions and
//! rounding instead of noise, reproduces the codec block for block.

use lbc::autodiff::Graph;
use lbc::blocks::{b2c, pad_to_block_multiple};
use lbc::codec::Codec;
use lbc::layers::Model;
use lbc::training::{open_loop_forward, Latents};

use super::{noise_image, site};

pub const TOL: f32 = 1e-5;

/// Largest absolute deviation over latents, Gaussians and reconstructions.
/// Quantized symbols must match exactly.
pub fn max_deviation(m: &Model, h: usize, w: usize, seed: u64) -> Result<f32, String> {
    let block = m.hps().block;
    let img = noise_image(h, w, seed);
    let enc = Codec::new(m).unwrap().encode(&img).unwrap();
    let (padded, _) = pad_to_block_multiple(&img, block).unwrap();
    let x = b2c(&padded, block).unwrap().into_tensor();
    let ctx = enc.recon_blocks.tensor().clone();

    let frozen = m.frozen();
    let mut g = Graph::new();
    let p = frozen.bind(&mut g);
    let (xv, cv) = (g.constant(x), g.constant(ctx));
    let out = open_loop_forward(&mut g, &p, xv, cv, Latents::Round).unwrap();
    let x_tilde = g.value(out.x_tilde).map(|v| v.clamp(0.0, 1.0));

    let (hb, wb) = (h.div_ceil(block), w.div_ceil(block));
    let mm = m.hps().m;
    let mut worst = 0.0f32;
    let mut track = |name: &str, a: &[f32], b: &[f32], r: usize, c: usize| -> Result<(), String> {
        if a.len() != b.len() {
            return Err(format!("{name} at ({r}, {c}): length mismatch"));
        }
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
        Ok(())
    };
    for r in 0..hb {
        for c in 0..wb {
            let i = (r * wb + c) * mm;
            track("latents", &site(g.value(out.y), r, c), &enc.latents[i..i + mm], r, c)?;
            track("mu", &site(g.value(out.mu), r, c), &enc.mu[i..i + mm], r, c)?;
            track("sigma", &site(g.value(out.sigma), r, c), &enc.sigma[i..i + mm], r, c)?;
            track("reconstruction", &site(&x_tilde, r, c), &enc.recon_blocks.site(r, c), r, c)?;
            let symbols: Vec<f32> = enc.symbols[i..i + mm].iter().map(|&s| s as f32).collect();
            if site(g.value(out.y_tilde), r, c) != symbols {
                return Err(format!("symbols differ at ({r}, {c})"));
            }
        }
    }
    Ok(worst)
}
