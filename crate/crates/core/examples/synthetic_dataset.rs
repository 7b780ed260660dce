//! Writes synthetic training and validation images as PNG files, for use
//! with `lbc train --config configs/toy.toml`.
//!
//! Usage: `synthetic_dataset [out_dir]` (default `data`).

use std::path::PathBuf;

use lbc::image_io::save_image;
use lbc::synth::synthetic_set;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    for (name, count, seed) in [("train", 16, 100), ("val", 4, 200)] {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir)?;
        for (i, img) in synthetic_set(count, 96, 96, seed).iter().enumerate() {
            save_image(img, dir.join(format!("{i:03}.png")))?;
        }
        println!("wrote {count} images to {}", dir.display());
    }
    Ok(())
}
