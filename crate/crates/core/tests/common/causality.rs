//! Perturbation checks: nothing computed for a block may depend on blocks
//! that come later in raster order. Each check returns the number of site
//! comparisons made, or a description of the first violation.

use lbc::autodiff::Graph;
use lbc::blocks::ImageRGB;
use lbc::codec::Codec;
use lbc::layers::{analysis_ta, entropy_net_n, synthesis_ts, Layout, Model};
use lbc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{model, noise_image, site};

pub const HB: usize = 5;
pub const WB: usize = 6;

type Check = Result<usize, String>;

fn random_grid(ch: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let data = (0..ch * HB * WB).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    Tensor::from_vec(&[ch, HB, WB], data).unwrap()
}

fn perturb_site(t: &Tensor<f32>, r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let mut out = t.clone();
    let ch = t.shape()[0];
    for k in 0..ch {
        out.data_mut()[k * HB * WB + r * WB + c] += rng.gen_range(-0.5f32..0.5);
    }
    out
}

fn all_sites() -> impl Iterator<Item = (usize, usize)> {
    (0..HB).flat_map(|i| (0..WB).map(move |j| (i, j)))
}

/// Sites strictly before `(r, c)` in raster order, and the site itself when
/// `inclusive`.
fn earlier(r: usize, c: usize, inclusive: bool) -> impl Iterator<Item = (usize, usize)> {
    all_sites().filter(move |&s| s < (r, c) || (inclusive && s == (r, c)))
}

fn unchanged(name: &str, a: &Tensor<f32>, b: &Tensor<f32>, sites: impl Iterator<Item = (usize, usize)>) -> Check {
    let mut checked = 0;
    for (r, c) in sites {
        if site(a, r, c) != site(b, r, c) {
            return Err(format!("{name}: site ({r}, {c}) changed"));
        }
        checked += 1;
    }
    Ok(checked)
}

fn run_n(model: &Model, ctx: &Tensor<f32>) -> (Tensor<f32>, Tensor<f32>) {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false).unwrap();
    let cv = g.constant(ctx.clone());
    let (mu, sigma) = entropy_net_n(&mut g, &p, cv, Layout::Grid, None).unwrap();
    (g.value(mu).clone(), g.value(sigma).clone())
}

fn run_ta(model: &Model, x: &Tensor<f32>, ctx: &Tensor<f32>) -> Tensor<f32> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false).unwrap();
    let (xv, cv) = (g.constant(x.clone()), g.constant(ctx.clone()));
    let y = analysis_ta(&mut g, &p, xv, cv, Layout::Grid).unwrap();
    g.value(y).clone()
}

fn run_ts(model: &Model, y: &Tensor<f32>, ctx: &Tensor<f32>) -> Tensor<f32> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false).unwrap();
    let (yv, cv) = (g.constant(y.clone()), g.constant(ctx.clone()));
    let x = synthesis_ts(&mut g, &p, yv, cv, Layout::Grid, false).unwrap();
    g.value(x).clone()
}

/// The entropy network's output at a site ignores that site's context and
/// everything after it.
pub fn entropy_network(k2: usize, trials: usize) -> Check {
    let m = model(4, 16, 4, k2, 10 + k2 as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(k2 as u64);
    let mut checked = 0;
    for _ in 0..trials {
        let ctx = random_grid(48, &mut rng);
        let (r, c) = (rng.gen_range(0..HB), rng.gen_range(0..WB));
        let (mu0, s0) = run_n(&m, &ctx);
        let (mu1, s1) = run_n(&m, &perturb_site(&ctx, r, c, &mut rng));
        checked += unchanged("mu", &mu0, &mu1, earlier(r, c, true))?;
        checked += unchanged("sigma", &s0, &s1, earlier(r, c, true))?;
    }
    Ok(checked)
}

/// The analysis transform reads its own source block and causal context only.
pub fn analysis(trials: usize) -> Check {
    let m = model(4, 16, 4, 1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut checked = 0;
    for _ in 0..trials {
        let x = random_grid(48, &mut rng);
        let ctx = random_grid(48, &mut rng);
        let (r, c) = (rng.gen_range(0..HB), rng.gen_range(0..WB));
        let y0 = run_ta(&m, &x, &ctx);
        let y_ctx = run_ta(&m, &x, &perturb_site(&ctx, r, c, &mut rng));
        checked += unchanged("t_a context", &y0, &y_ctx, earlier(r, c, true))?;
        let y_src = run_ta(&m, &perturb_site(&x, r, c, &mut rng), &ctx);
        checked += unchanged("t_a source", &y0, &y_src, all_sites().filter(|&s| s != (r, c)))?;
    }
    Ok(checked)
}

/// The synthesis transform reads its own latents and causal context only.
pub fn synthesis(trials: usize) -> Check {
    let m = model(4, 16, 4, 1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut checked = 0;
    for _ in 0..trials {
        let y = random_grid(4, &mut rng).map(|v| (v * 6.0 - 3.0).round());
        let ctx = random_grid(48, &mut rng);
        let (r, c) = (rng.gen_range(0..HB), rng.gen_range(0..WB));
        let x0 = run_ts(&m, &y, &ctx);
        let x_ctx = run_ts(&m, &y, &perturb_site(&ctx, r, c, &mut rng));
        checked += unchanged("t_s context", &x0, &x_ctx, earlier(r, c, true))?;
        let x_lat = run_ts(&m, &perturb_site(&y, r, c, &mut rng), &ctx);
        checked += unchanged("t_s latents", &x0, &x_lat, earlier(r, c, false))?;
    }
    Ok(checked)
}

/// Replacing the pixels of one block leaves every coded symbol and Gaussian
/// of earlier blocks, and the Gaussians of the block itself, untouched.
pub fn codec(k2: usize, trials: usize) -> Check {
    let m = model(4, 16, 4, k2, 40 + k2 as u64);
    let codec = Codec::new(&m).unwrap();
    let (h, w) = (4 * HB, 4 * WB);
    let img = noise_image(h, w, 7);
    let base = codec.encode(&img).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50 + k2 as u64);
    let per_block = m.hps().m;
    let mut checked = 0;
    for _ in 0..trials {
        let (r, c) = (rng.gen_range(0..HB), rng.gen_range(0..WB));
        let mut t = img.tensor().clone();
        for ch in 0..3 {
            for dy in 0..4 {
                for dx in 0..4 {
                    t.data_mut()[ch * h * w + (4 * r + dy) * w + 4 * c + dx] = rng.gen_range(0.0..=1.0);
                }
            }
        }
        let other = codec.encode(&ImageRGB::new(t).unwrap()).unwrap();
        let before = (r * WB + c) * per_block;
        let upto = before + per_block;
        if base.symbols[..before] != other.symbols[..before] {
            return Err(format!("codec: symbols before block ({r}, {c}) changed"));
        }
        if base.mu[..upto] != other.mu[..upto] || base.sigma[..upto] != other.sigma[..upto] {
            return Err(format!("codec: Gaussians up to block ({r}, {c}) changed"));
        }
        checked += r * WB + c + 1;
    }
    Ok(checked)
}
