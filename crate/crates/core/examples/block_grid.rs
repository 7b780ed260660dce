//! Packs an image into the block grid the networks operate on and back.
//!
//! Every `B x B` RGB block becomes one spatial site with `3 B^2` channels,
//! ordered colour plane first, then row, then column within the block.

use lbc::blocks::{b2c, c2b, crop_to_original, pad_to_block_multiple};
use lbc::synth::synthetic_image;

fn main() -> lbc::Result<()> {
    let block = 8;
    let img = synthetic_image(45, 70, 1);
    let (padded, pad) = pad_to_block_multiple(&img, block)?;
    println!(
        "{}x{} image padded to {}x{} (edge replication)",
        img.width(),
        img.height(),
        padded.width(),
        padded.height()
    );

    let grid = b2c(&padded, block)?;
    println!(
        "block grid: {} channels x {} rows x {} columns",
        grid.channels(),
        grid.grid_h(),
        grid.grid_w()
    );

    let (r, c) = (2, 5);
    let site = grid.site(r, c);
    let (y, x) = (r * block + 3, c * block + 6);
    for ch in 0..3 {
        let k = ch * block * block + 3 * block + 6;
        println!(
            "pixel ({y}, {x}) colour {ch} = {:.4}, channel {k} of site ({r}, {c}) = {:.4}",
            padded.at(ch, y, x),
            site[k]
        );
    }

    let back = crop_to_original(&c2b(&grid)?, pad)?;
    println!("unpacked and cropped image identical: {}", back == img);
    Ok(())
}
