//! Procedural test images: smooth gradients, soft-edged shapes, stripes and
//! a little grain. Deterministic in the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::ImageRGB;
use crate::tensor::Tensor;

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn colour(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// One `h x w` RGB image.
pub fn synthetic_image(h: usize, w: usize, seed: u64) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (colour(&mut rng), colour(&mut rng));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let scale = (h.max(w)) as f32;

    let mut px = vec![[0.0f32; 3]; h * w];
    for y in 0..h {
        for x in 0..w {
            let t = 0.5 + ((x as f32 * ca + y as f32 * sa) / scale) * 0.5;
            let t = t.clamp(0.0, 1.0);
            for k in 0..3 {
                px[y * w + x][k] = c0[k] * (1.0 - t) + c1[k] * t;
            }
        }
    }

    let shapes = rng.gen_range(3..7);
    for _ in 0..shapes {
        let col = colour(&mut rng);
        let (cy, cx) = (rng.gen_range(0.0..h as f32), rng.gen_range(0.0..w as f32));
        let (ry, rx) = (rng.gen_range(0.08..0.35) * h as f32, rng.gen_range(0.08..0.35) * w as f32);
        let soft = rng.gen_range(0.02..0.15f32);
        let ellipse = rng.gen_bool(0.6);
        let stripes = rng.gen_bool(0.3).then(|| (rng.gen_range(0.15..0.6f32), rng.gen_range(0.0..std::f32::consts::TAU)));
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f32 - cy) / ry, (x as f32 - cx) / rx);
                let d = if ellipse { (dy * dy + dx * dx).sqrt() } else { dy.abs().max(dx.abs()) };
                let a = 1.0 - smoothstep(1.0 - soft, 1.0 + soft, d);
                if a <= 0.0 {
                    continue;
                }
                let mut fill = col;
                if let Some((freq, phase)) = stripes {
                    let s = 0.5 + 0.5 * (freq * (x as f32 + 0.7 * y as f32) + phase).sin();
                    for v in &mut fill {
                        *v *= 0.6 + 0.4 * s;
                    }
                }
                let p = &mut px[y * w + x];
                for k in 0..3 {
                    p[k] = p[k] * (1.0 - a) + fill[k] * a;
                }
            }
        }
    }

    let grain = rng.gen_range(0.0..0.03f32);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, p) in px.iter().enumerate() {
        for k in 0..3 {
            let n: f32 = rng.gen_range(-1.0..1.0);
            let v = (p[k] + grain * n).clamp(0.0, 1.0);
            data[k * h * w + i] = (v * 255.0).round() / 255.0;
        }
    }
    ImageRGB::new(Tensor::from_vec(&[3, h, w], data).expect("image shape")).expect("values in range")
}

/// `count` images with seeds `seed, seed + 1, ...`.
pub fn synthetic_set(count: usize, h: usize, w: usize, seed: u64) -> Vec<ImageRGB> {
    (0..count).map(|i| synthetic_image(h, w, seed.wrapping_add(i as u64))).collect()
}
