//! Aligned random crops of source images and their reconstructions.

use rand::Rng;

use crate::blocks::{b2c, ImageRGB};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Index of `i` in `0..n` after mirror reflection at both ends.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

/// Mirror-pads right and bottom so the image is at least `h x w`.
pub fn reflect_pad<T: Float>(img: &ImageRGB<T>, h: usize, w: usize) -> ImageRGB<T> {
    let (ih, iw) = (img.height(), img.width());
    if ih >= h && iw >= w {
        return img.clone();
    }
    img.remap(ih.max(h), iw.max(w), |y| reflect(y, ih), |x| reflect(x, iw))
}

/// A training batch: source crops and the reconstruction crops taken at the
/// same coordinates, both `N x 3 x P x P`.
#[derive(Clone, Debug)]
pub struct Batch<T: Float = f32> {
    pub x: Tensor<T>,
    pub x_hat: Tensor<T>,
    /// `(image index, top, left)` of each crop.
    pub origins: Vec<(usize, usize, usize)>,
}

/// Draws `batch` crops of `patch x patch` from random images. Images smaller
/// than the patch are mirror-padded first.
pub fn crop_batch<T: Float>(
    images: &[ImageRGB<T>],
    recons: &[ImageRGB<T>],
    patch: usize,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Batch<T>> {
    if images.is_empty() || batch == 0 || patch == 0 {
        return Err(Error::InvalidArgument("crop_batch needs images, batch >= 1 and patch >= 1".into()));
    }
    if images.len() != recons.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images but {} reconstructions",
            images.len(),
            recons.len()
        )));
    }
    let mut xs = Vec::with_capacity(batch);
    let mut hs = Vec::with_capacity(batch);
    let mut origins = Vec::with_capacity(batch);
    for _ in 0..batch {
        let i = rng.gen_range(0..images.len());
        let (img, rec) = (&images[i], &recons[i]);
        if img.tensor().shape() != rec.tensor().shape() {
            return Err(Error::shape(format!(
                "image {i} is {:?} but its reconstruction is {:?}",
                img.tensor().shape(),
                rec.tensor().shape()
            )));
        }
        let img = reflect_pad(img, patch, patch);
        let rec = reflect_pad(rec, patch, patch);
        let top = rng.gen_range(0..=img.height() - patch);
        let left = rng.gen_range(0..=img.width() - patch);
        xs.push(img.crop(top, left, patch, patch)?.into_tensor());
        hs.push(rec.crop(top, left, patch, patch)?.into_tensor());
        origins.push((i, top, left));
    }
    Ok(Batch {
        x: Tensor::stack(&xs)?,
        x_hat: Tensor::stack(&hs)?,
        origins,
    })
}

/// Block-packs every image of an `N x 3 x H x W` batch into `N x 3B^2 x Hb x Wb`.
pub fn batch_to_blocks<T: Float>(images: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let items = images
        .unstack()
        .into_iter()
        .map(|t| Ok(b2c(&ImageRGB::new(t)?, block)?.into_tensor()))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}
