//! Block-grid geometry: padding to block multiples and the block/channel
//! rearrangement between `3 x H x W` images and `3B^2 x H/B x W/B` grids.
//!
//! Intra-block scan order (frozen, [`SCAN_ORDER_ID`]): the pixel at colour
//! channel `c`, row `y`, column `x` of a block lands in channel
//! `c * B^2 + y * B + x` of that block's grid site.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Identifier of the scan order above, recorded in checkpoints.
pub const SCAN_ORDER_ID: u8 = 0;

/// RGB image with samples in `[0, 1]`, stored `3 x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB<T: Float = f32> {
    data: Tensor<T>,
}

impl<T: Float> ImageRGB<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        match *data.shape() {
            [3, h, w] if h >= 1 && w >= 1 => {}
            _ => {
                return Err(Error::shape(format!(
                    "image must be 3 x H x W with H, W >= 1, got {:?}",
                    data.shape()
                )))
            }
        }
        if let Some(v) = data.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Domain(format!("image sample {v} outside [0, 1]")));
        }
        Ok(ImageRGB { data })
    }

    /// Uniform image.
    pub fn filled(h: usize, w: usize, v: T) -> Result<Self> {
        Self::new(Tensor::full(&[3, h, w], v))
    }

    /// From interleaved 8-bit RGB samples.
    pub fn from_rgb8(h: usize, w: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * h * w {
            return Err(Error::shape(format!(
                "{} bytes for a {h}x{w} RGB image",
                rgb.len()
            )));
        }
        let scale = T::from_f64_lossy(255.0);
        let mut data = vec![T::zero(); 3 * h * w];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = T::from_u8(px[c]).unwrap() / scale;
            }
        }
        Self::new(Tensor::from_vec(&[3, h, w], data)?)
    }

    /// Interleaved 8-bit RGB, `round(255 x)` with ties away from zero.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let scale = T::from_f64_lossy(255.0);
        let d = self.data.data();
        let mut out = vec![0u8; 3 * h * w];
        for i in 0..h * w {
            for c in 0..3 {
                let v = (d[c * h * w + i] * scale).round();
                out[3 * i + c] = v.to_u8().unwrap_or(0);
            }
        }
        out
    }

    /// Snaps every sample to the nearest 8-bit level.
    pub fn quantize_8bit(&self) -> Self {
        let scale = T::from_f64_lossy(255.0);
        ImageRGB {
            data: self.data.map(|v| (v * scale).round() / scale),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn cast<U: Float>(&self) -> ImageRGB<U> {
        ImageRGB {
            data: self.data.cast(),
        }
    }

    /// `h x w` window with top-left corner at (`y0`, `x0`).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::shape(format!(
                "crop {h}x{w} at ({y0}, {x0}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let (sh, sw) = (self.height(), self.width());
        let src = self.data.data();
        let mut out = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in y0..y0 + h {
                out.extend_from_slice(&src[(c * sh + y) * sw + x0..][..w]);
            }
        }
        Ok(ImageRGB {
            data: Tensor::from_vec(&[3, h, w], out)?,
        })
    }

    /// Resamples by index remapping: output pixel (y, x) copies input pixel
    /// (`map_y(y)`, `map_x(x)`).
    pub(crate) fn remap(&self, h: usize, w: usize, map_y: impl Fn(usize) -> usize, map_x: impl Fn(usize) -> usize) -> Self {
        let (sh, sw) = (self.height(), self.width());
        let src = self.data.data();
        let mut out = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                let row = &src[(c * sh + map_y(y)) * sw..][..sw];
                out.extend((0..w).map(|x| row[map_x(x)]));
            }
        }
        ImageRGB {
            data: Tensor::from_vec(&[3, h, w], out).expect("remap length"),
        }
    }
}

/// Original and padded dimensions of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadInfo {
    pub orig_h: usize,
    pub orig_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl PadInfo {
    pub fn for_block(h: usize, w: usize, block: usize) -> Self {
        PadInfo {
            orig_h: h,
            orig_w: w,
            padded_h: h.div_ceil(block) * block,
            padded_w: w.div_ceil(block) * block,
        }
    }
}

/// Pads right and bottom by edge replication up to multiples of `block`.
pub fn pad_to_block_multiple<T: Float>(img: &ImageRGB<T>, block: usize) -> Result<(ImageRGB<T>, PadInfo)> {
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be >= 1".into()));
    }
    let info = PadInfo::for_block(img.height(), img.width(), block);
    if info.padded_h == info.orig_h && info.padded_w == info.orig_w {
        return Ok((img.clone(), info));
    }
    let (h, w) = (img.height(), img.width());
    let padded = img.remap(info.padded_h, info.padded_w, |y| y.min(h - 1), |x| x.min(w - 1));
    Ok((padded, info))
}

/// Removes the padding added by [`pad_to_block_multiple`].
pub fn crop_to_original<T: Float>(img: &ImageRGB<T>, pad: PadInfo) -> Result<ImageRGB<T>> {
    if img.height() != pad.padded_h || img.width() != pad.padded_w {
        return Err(Error::shape(format!(
            "image is {}x{}, pad info says {}x{}",
            img.height(),
            img.width(),
            pad.padded_h,
            pad.padded_w
        )));
    }
    if pad.orig_h == pad.padded_h && pad.orig_w == pad.padded_w {
        return Ok(img.clone());
    }
    img.crop(0, 0, pad.orig_h, pad.orig_w)
}

/// Channels-packed grid of `block x block` blocks, `C x Hb x Wb`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTensor<T: Float = f32> {
    data: Tensor<T>,
    block: usize,
}

impl<T: Float> BlockTensor<T> {
    pub fn new(data: Tensor<T>, block: usize) -> Result<Self> {
        if data.rank() != 3 || block == 0 {
            return Err(Error::shape(format!(
                "block tensor must be C x Hb x Wb, got {:?}",
                data.shape()
            )));
        }
        Ok(BlockTensor { data, block })
    }

    /// Zero grid holding pixel blocks.
    pub fn zeros(block: usize, hb: usize, wb: usize) -> Self {
        BlockTensor {
            data: Tensor::zeros(&[3 * block * block, hb, wb]),
            block,
        }
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn grid_h(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn grid_w(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    /// Channel vector of grid site (`r`, `c`).
    pub fn site(&self, r: usize, c: usize) -> Vec<T> {
        let (hb, wb) = (self.grid_h(), self.grid_w());
        (0..self.channels())
            .map(|ch| self.data.data()[(ch * hb + r) * wb + c])
            .collect()
    }

    pub fn set_site(&mut self, r: usize, c: usize, values: &[T]) {
        let (hb, wb) = (self.grid_h(), self.grid_w());
        assert_eq!(values.len(), self.channels());
        let d = self.data.data_mut();
        for (ch, v) in values.iter().enumerate() {
            d[(ch * hb + r) * wb + c] = *v;
        }
    }
}

/// Packs each `3 x B x B` block into the channel vector of one grid site.
pub fn b2c<T: Float>(img: &ImageRGB<T>, block: usize) -> Result<BlockTensor<T>> {
    let (h, w) = (img.height(), img.width());
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::shape(format!(
            "{h}x{w} image is not divisible into {block}x{block} blocks; pad first"
        )));
    }
    let (hb, wb) = (h / block, w / block);
    let bb = block * block;
    let src = img.tensor().data();
    let mut out = vec![T::zero(); src.len()];
    for c in 0..3 {
        for y in 0..h {
            let (r, iy) = (y / block, y % block);
            for x in 0..w {
                let (col, ix) = (x / block, x % block);
                let ch = c * bb + iy * block + ix;
                out[(ch * hb + r) * wb + col] = src[(c * h + y) * w + x];
            }
        }
    }
    BlockTensor::new(Tensor::from_vec(&[3 * bb, hb, wb], out)?, block)
}

/// Inverse of [`b2c`].
pub fn c2b<T: Float>(bt: &BlockTensor<T>) -> Result<ImageRGB<T>> {
    let block = bt.block();
    let bb = block * block;
    if bt.channels() != 3 * bb {
        return Err(Error::shape(format!(
            "{} channels cannot hold {block}x{block} RGB blocks (need {})",
            bt.channels(),
            3 * bb
        )));
    }
    let (hb, wb) = (bt.grid_h(), bt.grid_w());
    let (h, w) = (hb * block, wb * block);
    let src = bt.tensor().data();
    let mut out = vec![T::zero(); src.len()];
    for c in 0..3 {
        for y in 0..h {
            let (r, iy) = (y / block, y % block);
            for x in 0..w {
                let (col, ix) = (x / block, x % block);
                let ch = c * bb + iy * block + ix;
                out[(c * h + y) * w + x] = src[(ch * hb + r) * wb + col];
            }
        }
    }
    ImageRGB::new(Tensor::from_vec(&[3, h, w], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageRGB {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen_range(0.0f32..=1.0)).collect();
        ImageRGB::new(Tensor::from_vec(&[3, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn image_rejects_out_of_range_and_bad_shapes() {
        assert!(ImageRGB::new(Tensor::<f32>::full(&[3, 2, 2], 1.5)).is_err());
        assert!(ImageRGB::new(Tensor::<f32>::full(&[3, 2, 2], f32::NAN)).is_err());
        assert!(ImageRGB::new(Tensor::<f32>::zeros(&[1, 2, 2])).is_err());
        assert!(ImageRGB::new(Tensor::<f32>::zeros(&[3, 0, 2])).is_err());
    }

    #[test]
    fn padding_sizes() {
        let img = ImageRGB::<f32>::filled(512, 768, 0.5).unwrap();
        let (p, info) = pad_to_block_multiple(&img, 8).unwrap();
        assert_eq!(p, img);
        assert_eq!(info, PadInfo { orig_h: 512, orig_w: 768, padded_h: 512, padded_w: 768 });

        let img = random_image(500, 750, 1);
        let (p, info) = pad_to_block_multiple(&img, 8).unwrap();
        assert_eq!((p.height(), p.width()), (504, 752));
        assert_eq!((info.padded_h, info.padded_w), (504, 752));
        assert_eq!(crop_to_original(&p, info).unwrap(), img);
    }

    #[test]
    fn single_pixel_is_replicated() {
        let img = ImageRGB::new(Tensor::<f32>::from_vec(&[3, 1, 1], vec![0.1, 0.5, 0.9]).unwrap()).unwrap();
        let (p, _) = pad_to_block_multiple(&img, 8).unwrap();
        assert_eq!((p.height(), p.width()), (8, 8));
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(p.at(c, y, x), img.at(c, 0, 0));
                }
            }
        }
    }

    #[test]
    fn b2c_shapes() {
        let img = ImageRGB::<f32>::filled(512, 768, 0.0).unwrap();
        let bt = b2c(&img, 8).unwrap();
        assert_eq!(bt.tensor().shape(), &[192, 64, 96]);

        let img = ImageRGB::<f32>::filled(8, 8, 0.25).unwrap();
        let bt = b2c(&img, 8).unwrap();
        assert_eq!(bt.tensor().shape(), &[192, 1, 1]);
        assert!(bt.tensor().data().iter().all(|v| *v == 0.25));

        let back = c2b(&BlockTensor::<f32>::zeros(8, 1, 1)).unwrap();
        assert_eq!(back.tensor().shape(), &[3, 8, 8]);
        assert!(back.tensor().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scan_order_is_channel_major_then_row_major() {
        let img = random_image(8, 16, 2);
        let bt = b2c(&img, 4).unwrap();
        // block (1, 2), colour 2, in-block row 3, column 1
        let ch = 2 * 16 + 3 * 4 + 1;
        assert_eq!(bt.site(1, 2)[ch], img.at(2, 4 + 3, 8 + 1));
    }

    #[test]
    fn b2c_requires_divisible_dims() {
        assert!(b2c(&random_image(9, 8, 3), 8).is_err());
        let bad = BlockTensor::new(Tensor::<f32>::zeros(&[10, 2, 2]), 2).unwrap();
        assert!(c2b(&bad).is_err());
    }

    proptest! {
        #[test]
        fn b2c_c2b_are_inverse(hb in 1usize..6, wb in 1usize..6, bi in 0usize..3, seed in any::<u64>()) {
            let block = [2usize, 4, 8][bi];
            let img = random_image(hb * block, wb * block, seed);
            let bt = b2c(&img, block).unwrap();
            prop_assert_eq!(&c2b(&bt).unwrap(), &img);
            prop_assert_eq!(&b2c(&c2b(&bt).unwrap(), block).unwrap(), &bt);
            let mut a: Vec<f32> = img.tensor().data().to_vec();
            let mut b: Vec<f32> = bt.tensor().data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn padding_preserves_original_pixels(h in 1usize..40, w in 1usize..40, block in 1usize..17, seed in any::<u64>()) {
            let img = random_image(h, w, seed);
            let (p, info) = pad_to_block_multiple(&img, block).unwrap();
            prop_assert_eq!(p.height() % block, 0);
            prop_assert!(p.height() - h < block && p.width() - w < block);
            prop_assert_eq!(crop_to_original(&p, info).unwrap(), img);
        }
    }
}
