//! Encodes and decodes an image block by block with a freshly initialized
//! model, then checks that the decoder rebuilt exactly what the encoder saw.
//!
//! Usage: `codec_roundtrip [image] [model.lbck]`

use lbc::codec::{BitstreamHeader, Codec};
use lbc::image_io::load_image;
use lbc::layers::{HyperParams, Model};
use lbc::synth::synthetic_image;

fn main() -> lbc::Result<()> {
    let mut args = std::env::args().skip(1);
    let img = match args.next() {
        Some(path) => load_image(path)?,
        None => synthetic_image(120, 160, 3),
    };
    let model = match args.next() {
        Some(path) => Model::load(path)?,
        None => Model::init(HyperParams::new(8, 48, 8, 1, 0.013)?, 0)?,
    };

    let codec = Codec::new(&model)?;
    let enc = codec.encode(&img)?;
    let (header, _) = BitstreamHeader::parse(&enc.bytes)?;
    println!(
        "{}x{} image, {} blocks of {}x{}",
        header.orig_w,
        header.orig_h,
        enc.stats.block_bits.len(),
        header.block,
        header.block
    );
    println!(
        "{} bytes ({} header), {:.4} bpp, model estimate {:.4} bpp, PSNR {:.2} dB",
        enc.bytes.len(),
        enc.stats.header_bytes,
        enc.stats.bpp,
        enc.stats.estimated_bpp,
        enc.stats.psnr
    );

    let dec = codec.decode(&enc.bytes)?;
    println!("decoder reconstruction bitwise identical: {}", dec.image == enc.recon);
    Ok(())
}
