//! Closed-loop block-by-block encoder and decoder.
//!
//! Both sides visit blocks in raster order. For each block the entropy
//! network predicts Gaussians for its latents from the already reconstructed
//! neighbours, and the synthesis transform rebuilds the block from the
//! quantized latents and the same neighbours. The reconstruction is written
//! back to a [`ReconBuffer`] before the next block starts. Encoder and decoder
//! run the exact same per-block code, so their buffers stay bitwise equal.
//!
//! Bitstream layout (little-endian):
//!
//! | bytes | field |
//! |------:|-------|
//! | 4 | magic `LBC1` |
//! | 1 | format version |
//! | 1 | HPS id |
//! | 1 | lambda index |
//! | 2 | block size |
//! | 4 x 4 | orig_h, orig_w, padded_h, padded_w |
//! | 8 | model checksum |
//! | 8 | payload length |
//! | ... | rANS payload |

use crate::autodiff::Graph;
use crate::blocks::{b2c, c2b, crop_to_original, pad_to_block_multiple, BlockTensor, ImageRGB, PadInfo};
use crate::checkpoint::Reader;
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::layers::{analysis_ta, entropy_net_n, synthesis_ts, Frozen, HyperParams, Layout, Model};
use crate::quant::{bin_mass, build_cdf_table, CdfTable, LIKELIHOOD_FLOOR, TABLE_PRECISION};
use crate::rans::{RansDecoder, RansEncoder};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LBC1";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 41;

/// Largest padded pixel count a header may declare.
const MAX_PIXELS: u64 = 1 << 30;

/// Largest latent magnitude the coder accepts.
const MAX_LATENT: f32 = (1 << 24) as f32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u8,
    pub hps_id: u8,
    pub lambda_index: u8,
    pub block: u16,
    pub orig_h: u32,
    pub orig_w: u32,
    pub padded_h: u32,
    pub padded_w: u32,
    pub model_checksum: u64,
    pub payload_len: u64,
}

impl BitstreamHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4] = self.version;
        out[5] = self.hps_id;
        out[6] = self.lambda_index;
        out[7..9].copy_from_slice(&self.block.to_le_bytes());
        out[9..13].copy_from_slice(&self.orig_h.to_le_bytes());
        out[13..17].copy_from_slice(&self.orig_w.to_le_bytes());
        out[17..21].copy_from_slice(&self.padded_h.to_le_bytes());
        out[21..25].copy_from_slice(&self.padded_w.to_le_bytes());
        out[25..33].copy_from_slice(&self.model_checksum.to_le_bytes());
        out[33..41].copy_from_slice(&self.payload_len.to_le_bytes());
        out
    }

    /// Parses and validates a header, returning it with the payload that follows.
    pub fn parse(bytes: &[u8]) -> Result<(Self, &[u8])> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "{} bytes is too short for a {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        let mut r = Reader::new(bytes);
        if r.array::<4>()? != MAGIC {
            return Err(Error::Format("not an LBC1 bitstream (bad magic)".into()));
        }
        let h = BitstreamHeader {
            version: r.u8()?,
            hps_id: r.u8()?,
            lambda_index: r.u8()?,
            block: r.u16()?,
            orig_h: r.u32()?,
            orig_w: r.u32()?,
            padded_h: r.u32()?,
            padded_w: r.u32()?,
            model_checksum: r.u64()?,
            payload_len: r.u64()?,
        };
        if h.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported bitstream version {}", h.version)));
        }
        h.validate()?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != h.payload_len {
            return Err(Error::Format(format!(
                "header declares {} payload bytes, found {}",
                h.payload_len,
                payload.len()
            )));
        }
        Ok((h, payload))
    }

    fn validate(&self) -> Result<()> {
        let b = self.block as u32;
        let dims_ok = b > 0
            && self.orig_h >= 1
            && self.orig_w >= 1
            && self.padded_h.is_multiple_of(b)
            && self.padded_w.is_multiple_of(b)
            && self.padded_h >= self.orig_h
            && self.padded_w >= self.orig_w
            && self.padded_h - self.orig_h < b
            && self.padded_w - self.orig_w < b
            && self.padded_h as u64 * self.padded_w as u64 <= MAX_PIXELS;
        if !dims_ok {
            return Err(Error::Format(format!(
                "inconsistent dimensions: {}x{} padded to {}x{} with block {}",
                self.orig_h, self.orig_w, self.padded_h, self.padded_w, self.block
            )));
        }
        Ok(())
    }

    pub fn pad_info(&self) -> PadInfo {
        PadInfo {
            orig_h: self.orig_h as usize,
            orig_w: self.orig_w as usize,
            padded_h: self.padded_h as usize,
            padded_w: self.padded_w as usize,
        }
    }

    /// `(rows, cols)` of the block grid.
    pub fn grid(&self) -> (usize, usize) {
        let b = self.block as usize;
        (self.padded_h as usize / b, self.padded_w as usize / b)
    }
}

/// Reconstructed blocks so far. Sites are written once each, in raster order.
#[derive(Clone, Debug)]
pub struct ReconBuffer {
    data: BlockTensor<f32>,
    filled: Vec<bool>,
    next: usize,
    strict: bool,
}

impl ReconBuffer {
    pub fn new(block: usize, hb: usize, wb: usize) -> Self {
        ReconBuffer {
            data: BlockTensor::zeros(block, hb, wb),
            filled: vec![false; hb * wb],
            next: 0,
            strict: true,
        }
    }

    fn unordered(block: usize, hb: usize, wb: usize) -> Self {
        ReconBuffer {
            strict: false,
            ..Self::new(block, hb, wb)
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.data.grid_h(), self.data.grid_w())
    }

    pub fn is_filled(&self, r: usize, c: usize) -> bool {
        let (hb, wb) = self.grid();
        r < hb && c < wb && self.filled[r * wb + c]
    }

    pub fn get(&self, r: usize, c: usize) -> Result<Vec<f32>> {
        if !self.is_filled(r, c) {
            return Err(Error::InvalidArgument(format!("block ({r}, {c}) not reconstructed yet")));
        }
        Ok(self.data.site(r, c))
    }

    pub fn fill(&mut self, r: usize, c: usize, values: &[f32]) -> Result<()> {
        let (hb, wb) = self.grid();
        if r >= hb || c >= wb || self.filled[r * wb + c] {
            return Err(Error::InvalidArgument(format!("block ({r}, {c}) cannot be filled")));
        }
        if self.strict && r * wb + c != self.next {
            return Err(Error::InvalidArgument(format!(
                "block ({r}, {c}) filled out of raster order"
            )));
        }
        if values.len() != self.data.channels() {
            return Err(Error::shape(format!(
                "block has {} values, expected {}",
                values.len(),
                self.data.channels()
            )));
        }
        self.data.set_site(r, c, values);
        self.filled[r * wb + c] = true;
        self.next += 1;
        Ok(())
    }

    /// `C x (2R+1) x (2R+1)` window centred on (`r`, `c`); sites outside the
    /// image or not yet reconstructed read as zero.
    pub fn window(&self, r: usize, c: usize, radius: usize) -> Tensor<f32> {
        let side = 2 * radius + 1;
        let ch = self.data.channels();
        let (hb, wb) = self.grid();
        let src = self.data.tensor().data();
        let mut out = vec![0.0f32; ch * side * side];
        for dy in 0..side {
            let Some(y) = (r + dy).checked_sub(radius) else { continue };
            for dx in 0..side {
                let Some(x) = (c + dx).checked_sub(radius) else { continue };
                if !self.is_filled(y, x) {
                    continue;
                }
                for k in 0..ch {
                    out[(k * side + dy) * side + dx] = src[(k * hb + y) * wb + x];
                }
            }
        }
        Tensor::from_vec(&[ch, side, side], out).expect("window shape")
    }

    pub fn is_complete(&self) -> bool {
        self.filled.iter().all(|f| *f)
    }

    pub fn blocks(&self) -> &BlockTensor<f32> {
        &self.data
    }

    pub fn into_blocks(self) -> BlockTensor<f32> {
        self.data
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeStats {
    /// Actual rate: `8 * bytes / (orig_h * orig_w)`.
    pub bpp: f64,
    /// Model rate at the rounded latents, same denominator.
    pub estimated_bpp: f64,
    /// PSNR of the cropped reconstruction against the source.
    pub psnr: f64,
    /// Ideal code length of each block under its tables, raster order.
    pub block_bits: Vec<f64>,
    pub header_bytes: usize,
    pub payload_bytes: usize,
}

impl EncodeStats {
    pub fn total_bits(&self) -> u64 {
        8 * (self.header_bytes + self.payload_bytes) as u64
    }
}

/// Everything the encoder produced, including per-latent side information.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub stats: EncodeStats,
    pub header: BitstreamHeader,
    /// Cropped reconstruction the decoder will reproduce.
    pub recon: ImageRGB,
    /// Reconstruction buffer contents, padded and block packed.
    pub recon_blocks: BlockTensor<f32>,
    /// Unquantized latents, block-major then channel, in coding order.
    pub latents: Vec<f32>,
    pub symbols: Vec<i32>,
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub image: ImageRGB,
    pub header: BitstreamHeader,
    pub recon_blocks: BlockTensor<f32>,
}

fn with_block<T>(r: usize, c: usize, res: Result<T>) -> Result<T> {
    res.map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("block ({r}, {c}): {m}")),
        Error::Domain(m) => Error::Domain(format!("block ({r}, {c}): {m}")),
        other => other,
    })
}

/// Per-block network evaluation shared by the encoder and the decoder.
struct BlockEngine<'f> {
    frozen: &'f Frozen<f32>,
    hps: HyperParams,
}

/// What a block produced, besides its reconstruction.
struct BlockOutput {
    y: Option<Vec<f32>>,
    y_hat: Vec<f32>,
    mu: Vec<f32>,
    sigma: Vec<f32>,
    recon: Vec<f32>,
}

impl BlockEngine<'_> {
    /// Runs block (`r`, `c`): entropy parameters, then `latents` (which turns
    /// `(mu, sigma, y)` into quantized latents), then synthesis.
    fn run(
        &self,
        buf: &ReconBuffer,
        r: usize,
        c: usize,
        source: Option<&[f32]>,
        latents: impl FnOnce(&[f32], &[f32], Option<&[f32]>) -> Result<Vec<f32>>,
    ) -> Result<BlockOutput> {
        let hps = &self.hps;
        let (hb, wb) = buf.grid();
        let mut g = Graph::new();
        let p = self.frozen.bind(&mut g);

        let rn = hps.entropy_context_radius();
        let ctx_n = g.constant(buf.window(r, c, rn));
        let valid = (hps.k2 == 3).then(|| {
            let mask = (0..9)
                .map(|i| {
                    let (y, x) = ((r + i / 3).checked_sub(1), (c + i % 3).checked_sub(1));
                    let inside = matches!((y, x), (Some(y), Some(x)) if y < hb && x < wb);
                    if inside { 1.0 } else { 0.0 }
                })
                .collect();
            g.constant(Tensor::from_vec(&[1, 3, 3], mask).expect("mask shape"))
        });
        let (mu, sigma) = entropy_net_n(&mut g, &p, ctx_n, Layout::Site, valid)?;
        let mu_v = g.value(mu).data().to_vec();
        let sigma_v = g.value(sigma).data().to_vec();

        let ctx = g.constant(buf.window(r, c, 1));
        let y = match source {
            Some(x) => {
                let xv = g.constant(Tensor::from_vec(&[hps.channels(), 1, 1], x.to_vec())?);
                let y = analysis_ta(&mut g, &p, xv, ctx, Layout::Site)?;
                Some(g.value(y).data().to_vec())
            }
            None => None,
        };
        let y_hat = latents(&mu_v, &sigma_v, y.as_deref())?;
        let yv = g.constant(Tensor::from_vec(&[hps.m, 1, 1], y_hat.clone())?);
        let x_hat = synthesis_ts(&mut g, &p, yv, ctx, Layout::Site, true)?;
        Ok(BlockOutput {
            y,
            y_hat,
            mu: mu_v,
            sigma: sigma_v,
            recon: g.value(x_hat).data().to_vec(),
        })
    }
}

fn table_for(mu: f32, sigma: f32) -> Result<CdfTable> {
    build_cdf_table(mu as f64, sigma as f64, TABLE_PRECISION)
}

/// Encoder/decoder bound to one model.
pub struct Codec<'m> {
    model: &'m Model,
    frozen: Frozen<f32>,
    checksum: u64,
}

impl<'m> Codec<'m> {
    pub fn new(model: &'m Model) -> Result<Self> {
        Ok(Codec {
            model,
            frozen: model.frozen(),
            checksum: model.checksum()?,
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    fn engine(&self) -> BlockEngine<'_> {
        BlockEngine {
            frozen: &self.frozen,
            hps: *self.model.hps(),
        }
    }

    pub fn encode(&self, img: &ImageRGB) -> Result<Encoded> {
        let block = self.model.hps().block;
        let (hb, wb) = (img.height().div_ceil(block), img.width().div_ceil(block));
        let order: Vec<(usize, usize)> = (0..hb).flat_map(|r| (0..wb).map(move |c| (r, c))).collect();
        self.encode_blocks(img, &order, ReconBuffer::new(block, hb, wb))
    }

    /// Encodes visiting blocks in `order` instead of raster order. The decoder
    /// always walks raster order, so any other order yields a stream it
    /// cannot follow; useful only to demonstrate that the order matters.
    pub fn encode_with_order(&self, img: &ImageRGB, order: &[(usize, usize)]) -> Result<Encoded> {
        let block = self.model.hps().block;
        let (hb, wb) = (img.height().div_ceil(block), img.width().div_ceil(block));
        let mut seen = vec![false; hb * wb];
        for &(r, c) in order {
            if r >= hb || c >= wb || std::mem::replace(&mut seen[r * wb + c], true) {
                return Err(Error::InvalidArgument(format!("order visits ({r}, {c}) twice or out of range")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("order does not cover every block".into()));
        }
        self.encode_blocks(img, order, ReconBuffer::unordered(block, hb, wb))
    }

    fn encode_blocks(&self, img: &ImageRGB, order: &[(usize, usize)], mut buf: ReconBuffer) -> Result<Encoded> {
        let hps = *self.model.hps();
        let (padded, pad) = pad_to_block_multiple(img, hps.block)?;
        let source = b2c(&padded, hps.block)?;
        let engine = self.engine();
        let n_sym = order.len() * hps.m;

        let mut latents = Vec::with_capacity(n_sym);
        let mut symbols = Vec::with_capacity(n_sym);
        let mut mus = Vec::with_capacity(n_sym);
        let mut sigmas = Vec::with_capacity(n_sym);
        let mut tables = Vec::with_capacity(n_sym);
        let mut block_bits = Vec::with_capacity(order.len());
        let mut est_bits = 0.0;

        for &(r, c) in order {
            let x = source.site(r, c);
            let out = with_block(
                r,
                c,
                engine.run(&buf, r, c, Some(&x), |mu, sigma, y| {
                    let y = y.expect("encoder has a source block");
                    let mut y_hat = Vec::with_capacity(y.len());
                    let mut bits = 0.0;
                    for ((&v, &m), &s) in y.iter().zip(mu).zip(sigma) {
                        let q = v.round();
                        if q.abs() > MAX_LATENT {
                            return Err(Error::Domain(format!("latent {v} outside the codable range")));
                        }
                        let t = table_for(m, s)?;
                        bits += t.cost_bits(q as i32)?;
                        est_bits -= bin_mass(q as f64, m as f64, s as f64).max(LIKELIHOOD_FLOOR).log2();
                        symbols.push(q as i32);
                        tables.push(t);
                        y_hat.push(q);
                    }
                    block_bits.push(bits);
                    Ok(y_hat)
                }),
            )?;
            latents.extend(out.y.expect("encoder computes latents"));
            debug_assert_eq!(out.y_hat.len(), hps.m);
            mus.extend_from_slice(&out.mu);
            sigmas.extend_from_slice(&out.sigma);
            buf.fill(r, c, &out.recon)?;
        }

        let mut enc = RansEncoder::new();
        for (s, t) in symbols.iter().zip(&tables).rev() {
            enc.encode_symbol(*s, t)?;
        }
        let payload = enc.finish();
        let header = BitstreamHeader {
            version: FORMAT_VERSION,
            hps_id: hps.hps_id(),
            lambda_index: hps.lambda_index(),
            block: hps.block as u16,
            orig_h: pad.orig_h as u32,
            orig_w: pad.orig_w as u32,
            padded_h: pad.padded_h as u32,
            padded_w: pad.padded_w as u32,
            model_checksum: self.checksum,
            payload_len: payload.len() as u64,
        };
        let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
        bytes.extend_from_slice(&header.to_bytes());
        bytes.extend_from_slice(&payload);

        let recon_blocks = buf.into_blocks();
        let recon = crop_to_original(&c2b(&recon_blocks)?, pad)?;
        let pixels = (pad.orig_h * pad.orig_w) as f64;
        let stats = EncodeStats {
            bpp: 8.0 * bytes.len() as f64 / pixels,
            estimated_bpp: est_bits / pixels,
            psnr: psnr(img, &recon)?,
            block_bits,
            header_bytes: HEADER_LEN,
            payload_bytes: payload.len(),
        };
        Ok(Encoded {
            bytes,
            stats,
            header,
            recon,
            recon_blocks,
            latents,
            symbols,
            mu: mus,
            sigma: sigmas,
        })
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Decoded> {
        let (header, payload) = BitstreamHeader::parse(bytes)?;
        if header.model_checksum != self.checksum {
            return Err(Error::ChecksumMismatch {
                expected: header.model_checksum,
                actual: self.checksum,
            });
        }
        let hps = *self.model.hps();
        if header.block as usize != hps.block {
            return Err(Error::Format(format!(
                "stream uses {}x{} blocks, model uses {}x{}",
                header.block, header.block, hps.block, hps.block
            )));
        }
        let (hb, wb) = header.grid();
        let mut buf = ReconBuffer::new(hps.block, hb, wb);
        let mut dec = RansDecoder::new(payload)?;
        let engine = self.engine();
        for r in 0..hb {
            for c in 0..wb {
                let out = with_block(
                    r,
                    c,
                    engine.run(&buf, r, c, None, |mu, sigma, _| {
                        mu.iter()
                            .zip(sigma)
                            .map(|(&m, &s)| Ok(dec.decode_symbol(&table_for(m, s)?)? as f32))
                            .collect()
                    }),
                )?;
                buf.fill(r, c, &out.recon)?;
            }
        }
        dec.finish()?;
        let recon_blocks = buf.into_blocks();
        let image = crop_to_original(&c2b(&recon_blocks)?, header.pad_info())?;
        Ok(Decoded {
            image,
            header,
            recon_blocks,
        })
    }
}

pub fn encode_image(img: &ImageRGB, model: &Model) -> Result<(Vec<u8>, EncodeStats)> {
    let enc = Codec::new(model)?.encode(img)?;
    Ok((enc.bytes, enc.stats))
}

pub fn decode_image(bytes: &[u8], model: &Model) -> Result<ImageRGB> {
    Ok(Codec::new(model)?.decode(bytes)?.image)
}

/// Outcome of [`roundtrip_check`].
#[derive(Clone, Debug)]
pub struct RoundtripReport {
    pub stats: EncodeStats,
    /// Actual file bits minus the model's estimated bits.
    pub rate_gap_bits: f64,
}

impl RoundtripReport {
    /// Whether the file size is within `rel` of the estimate plus `slack_bits`.
    pub fn rate_agrees(&self, rel: f64, slack_bits: f64, pixels: usize) -> bool {
        let est = self.stats.estimated_bpp * pixels as f64;
        self.rate_gap_bits.abs() <= rel * est + slack_bits
    }
}

/// Encodes, decodes and fails unless the decoder reproduces the encoder's
/// reconstruction bit for bit.
pub fn roundtrip_check(img: &ImageRGB, model: &Model) -> Result<RoundtripReport> {
    let codec = Codec::new(model)?;
    let enc = codec.encode(img)?;
    let dec = codec.decode(&enc.bytes)?;
    let same = enc
        .recon_blocks
        .tensor()
        .data()
        .iter()
        .zip(dec.recon_blocks.tensor().data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same || dec.image != enc.recon {
        return Err(Error::CorruptStream(
            "decoder reconstruction differs from the encoder's".into(),
        ));
    }
    let pixels = (img.height() * img.width()) as f64;
    let rate_gap_bits = enc.stats.total_bits() as f64 - enc.stats.estimated_bpp * pixels;
    Ok(RoundtripReport {
        stats: enc.stats,
        rate_gap_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, seed: u64) -> ImageRGB {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen_range(0.0f32..=1.0)).collect();
        ImageRGB::new(Tensor::from_vec(&[3, h, w], data).unwrap()).unwrap()
    }

    fn model(block: usize, k2: usize) -> Model {
        Model::init(HyperParams::new(block, 16, 4, k2, 0.0130).unwrap(), 3).unwrap()
    }

    #[test]
    fn header_roundtrip_and_layout() {
        let h = BitstreamHeader {
            version: 1,
            hps_id: 2,
            lambda_index: 5,
            block: 8,
            orig_h: 500,
            orig_w: 750,
            padded_h: 504,
            padded_w: 752,
            model_checksum: 0x0123_4567_89ab_cdef,
            payload_len: 3,
        };
        let mut bytes = h.to_bytes().to_vec();
        assert_eq!(&bytes[..4], b"LBC1");
        assert_eq!(&bytes[7..9], &[8, 0]);
        assert_eq!(&bytes[25..33], &0x0123_4567_89ab_cdefu64.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        let (back, payload) = BitstreamHeader::parse(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(payload, &[1, 2, 3]);
        assert!(BitstreamHeader::parse(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[17] = 0xff;
        assert!(BitstreamHeader::parse(&bad).is_err());
    }

    #[test]
    fn buffer_enforces_raster_order_and_zero_context() {
        let mut buf = ReconBuffer::new(4, 2, 3);
        assert!(buf.fill(0, 1, &[0.5; 48]).is_err());
        buf.fill(0, 0, &[0.5; 48]).unwrap();
        assert!(buf.fill(0, 0, &[0.5; 48]).is_err());
        assert!(buf.get(0, 1).is_err());
        let w = buf.window(0, 1, 1);
        assert_eq!(w.shape(), &[48, 3, 3]);
        // only the left neighbour (window position (1, 0)) is available
        for k in 0..48 {
            for i in 0..9 {
                let want = if i == 3 { 0.5 } else { 0.0 };
                assert_eq!(w.data()[k * 9 + i], want);
            }
        }
    }

    #[test]
    fn single_block_codes_m_symbols_with_zero_context() {
        let m = model(8, 1);
        let codec = Codec::new(&m).unwrap();
        let enc = codec.encode(&image(8, 8, 1)).unwrap();
        assert_eq!(enc.symbols.len(), 4);
        assert_eq!(enc.stats.block_bits.len(), 1);
        let dec = codec.decode(&enc.bytes).unwrap();
        assert_eq!(dec.image, enc.recon);
    }

    #[test]
    fn random_models_roundtrip_bitwise() {
        for (i, (block, k2, h, w)) in [(4, 1, 20, 13), (8, 3, 24, 40), (16, 1, 33, 17), (4, 3, 16, 16)].into_iter().enumerate() {
            let m = model(block, k2);
            let report = roundtrip_check(&image(h, w, i as u64), &m).unwrap();
            let total = report.stats.total_bits() as f64;
            assert!((report.stats.bpp * (h * w) as f64 - total).abs() < 1e-9 * total);
        }
    }

    #[test]
    fn dims_survive_padding() {
        let m = model(8, 1);
        let codec = Codec::new(&m).unwrap();
        let enc = codec.encode(&image(21, 30, 5)).unwrap();
        assert_eq!((enc.header.padded_h, enc.header.padded_w), (24, 32));
        let dec = codec.decode(&enc.bytes).unwrap();
        assert_eq!((dec.image.height(), dec.image.width()), (21, 30));
    }

    #[test]
    fn wrong_model_is_refused() {
        let a = model(8, 1);
        let mut b = a.clone();
        b.set_lambda(0.0250).unwrap();
        let enc = Codec::new(&a).unwrap().encode(&image(16, 16, 2)).unwrap();
        assert!(matches!(
            Codec::new(&b).unwrap().decode(&enc.bytes),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncated_or_padded_payload_is_an_error() {
        let m = model(4, 1);
        let codec = Codec::new(&m).unwrap();
        let enc = codec.encode(&image(16, 16, 3)).unwrap();
        let mut short = enc.bytes.clone();
        short.pop();
        assert!(codec.decode(&short).is_err());
        let mut long = enc.bytes.clone();
        long.push(0);
        assert!(codec.decode(&long).is_err());
    }
}
