//! PSNR and dataset-level rate-distortion evaluation.

use std::io;

use serde::{Deserialize, Serialize};

use crate::blocks::ImageRGB;
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::layers::Model;
use crate::tensor::Float;

/// Image label of the per-model average rows.
pub const AVERAGE_LABEL: &str = "AVERAGE";

/// Mean squared error over all RGB samples on the 0..255 scale.
pub fn mse_255<T: Float>(a: &ImageRGB<T>, b: &ImageRGB<T>) -> Result<f64> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::shape(format!(
            "comparing {:?} against {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    let n = a.tensor().len() as f64;
    let sse: f64 = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(x, y)| {
            let d = (x.to_f64().unwrap() - y.to_f64().unwrap()) * 255.0;
            d * d
        })
        .sum();
    Ok(sse / n)
}

/// `10 log10(255^2 / MSE)` with the MSE of [`mse_255`]; `f64::INFINITY` for
/// identical images.
pub fn psnr<T: Float>(a: &ImageRGB<T>, b: &ImageRGB<T>) -> Result<f64> {
    let mse = mse_255(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// One row of an RD table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub model: String,
    pub lambda_index: u8,
    pub image: String,
    pub bpp: f64,
    pub psnr: f64,
}

/// Codes every image with every model. For each model the detail rows are
/// followed by one [`AVERAGE_LABEL`] row holding the arithmetic means of bpp
/// and PSNR taken independently. PSNR is measured on the decoded image
/// rounded to 8 bits, the form it is written to disk in.
pub fn evaluate(models: &[(String, Model)], images: &[(String, ImageRGB)]) -> Result<Vec<RDPoint>> {
    if models.is_empty() || images.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one model and one image".into()));
    }
    let mut rows = Vec::new();
    for (model_id, model) in models {
        let codec = Codec::new(model)?;
        let lambda_index = model.hps().lambda_index();
        let mut detail = Vec::with_capacity(images.len());
        for (image_id, img) in images {
            let enc = codec.encode(img)?;
            let decoded = codec.decode(&enc.bytes)?.image.quantize_8bit();
            detail.push(RDPoint {
                model: model_id.clone(),
                lambda_index,
                image: image_id.clone(),
                bpp: enc.stats.bpp,
                psnr: psnr(img, &decoded)?,
            });
        }
        let n = detail.len() as f64;
        let avg = RDPoint {
            model: model_id.clone(),
            lambda_index,
            image: AVERAGE_LABEL.into(),
            bpp: detail.iter().map(|p| p.bpp).sum::<f64>() / n,
            psnr: detail.iter().map(|p| p.psnr).sum::<f64>() / n,
        };
        rows.extend(detail);
        rows.push(avg);
    }
    Ok(rows)
}

pub fn write_csv<W: io::Write>(out: W, rows: &[RDPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<RDPoint>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
