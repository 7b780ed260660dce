//! Quantization, the conditional Gaussian likelihood, differentiable rate and
//! the integer CDF tables the entropy coder consumes.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Lower bound on predicted scales.
pub const SIGMA_MIN: f64 = 0.04;

/// Likelihood floor applied before taking logs in the training rate.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / (1u64 << 24) as f64;

/// Default coder table precision in bits.
pub const TABLE_PRECISION: u32 = 16;

/// Tables cover `round(mu) +- ceil(TAIL_FACTOR * sigma)` plus one edge bucket per side.
pub const TAIL_FACTOR: f64 = 6.0;

/// Raw bits following an edge bucket that carry the escape offset.
pub const ESCAPE_BITS: u32 = 16;

/// Standard normal CDF.
pub fn normal_cdf<T: Float>(z: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * (-z * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erfc()
}

/// Standard normal density.
pub fn normal_pdf<T: Float>(z: T) -> T {
    let inv_sqrt_2pi = T::from_f64_lossy(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(z * z) * T::from_f64_lossy(0.5)).exp()
}

/// Mass of `[v - 1/2, v + 1/2]` under `N(mu, sigma^2)`, evaluated in the
/// lower tail so it keeps full relative precision far from the mean.
pub fn bin_mass(v: f64, mu: f64, sigma: f64) -> f64 {
    let d = (v - mu).abs();
    normal_cdf((0.5 - d) / sigma) - normal_cdf((-0.5 - d) / sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Continuous,
    Quantized,
    Noisy,
}

/// A latent tensor tagged with how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid<T: Float = f32> {
    pub values: Tensor<T>,
    pub stage: Stage,
}

impl<T: Float> LatentGrid<T> {
    pub fn continuous(values: Tensor<T>) -> Self {
        LatentGrid {
            values,
            stage: Stage::Continuous,
        }
    }
}

/// Rounds to the nearest integer, ties away from zero.
pub fn quantize_round<T: Float>(y: &LatentGrid<T>) -> Result<LatentGrid<T>> {
    if y.stage != Stage::Continuous {
        return Err(Error::InvalidArgument(format!(
            "quantize_round expects a continuous latent, got {:?}",
            y.stage
        )));
    }
    Ok(LatentGrid {
        values: y.values.map(|v| v.round()),
        stage: Stage::Quantized,
    })
}

/// I.i.d. `U[-1/2, 1/2]` samples.
pub fn uniform_noise<T: Float>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-0.5..=0.5)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

pub fn add_uniform_noise<T: Float>(y: &LatentGrid<T>, rng: &mut impl Rng) -> Result<LatentGrid<T>> {
    if y.stage != Stage::Continuous {
        return Err(Error::InvalidArgument(format!(
            "add_uniform_noise expects a continuous latent, got {:?}",
            y.stage
        )));
    }
    let noise = uniform_noise::<T>(y.values.shape(), rng);
    let values = Tensor::from_vec(
        y.values.shape(),
        y.values.data().iter().zip(noise.data()).map(|(a, b)| *a + *b).collect(),
    )?;
    Ok(LatentGrid {
        values,
        stage: Stage::Noisy,
    })
}

/// Graph version of [`add_uniform_noise`]: the noise is a constant, so the
/// gradient passes through unchanged.
pub fn add_uniform_noise_var<'a, T: Float>(g: &mut Graph<'a, T>, y: Var, rng: &mut impl Rng) -> Result<Var> {
    let noise = uniform_noise::<T>(g.value(y).shape(), rng);
    let u = g.constant(noise);
    g.add(y, u)
}

/// Per-element probability of `v` under the predicted Gaussians, floored at
/// [`LIKELIHOOD_FLOOR`].
pub fn gaussian_likelihood<'a, T: Float>(g: &mut Graph<'a, T>, v: Var, mu: Var, sigma: Var) -> Result<Var> {
    let p = g.gaussian_likelihood(v, mu, sigma)?;
    g.clamp_min(p, T::from_f64_lossy(LIKELIHOOD_FLOOR))
}

/// Total information content `sum(-log2 p)` in bits.
pub fn rate_bits<'a, T: Float>(g: &mut Graph<'a, T>, p: Var) -> Result<Var> {
    let lp = g.ln(p)?;
    let s = g.sum(lp)?;
    g.scale(s, T::from_f64_lossy(-std::f64::consts::LOG2_E))
}

/// Quantized discrete CDF for the rANS coder.
///
/// Symbols `symbol_min + 1 ..= symbol_max - 1` are coded directly. The two
/// edge symbols are escape buckets: a value at or beyond an edge is coded as
/// that edge followed by [`ESCAPE_BITS`] raw bits holding its distance from
/// the edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    symbol_min: i32,
    cdf: Vec<u32>,
    precision: u32,
    escapes: bool,
}

/// How a value maps onto a table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coded {
    pub index: usize,
    pub escape: Option<u32>,
}

impl CdfTable {
    /// Validating constructor for a plain table without escape buckets.
    pub fn from_cdf(symbol_min: i32, cdf: Vec<u32>, precision: u32) -> Result<Self> {
        let t = CdfTable {
            symbol_min,
            cdf,
            precision,
            escapes: false,
        };
        t.validate()?;
        Ok(t)
    }

    /// Like [`CdfTable::from_cdf`], but the first and last symbols are escape
    /// buckets. Needs at least three symbols.
    pub fn from_cdf_with_escapes(symbol_min: i32, cdf: Vec<u32>, precision: u32) -> Result<Self> {
        if cdf.len() < 4 {
            return Err(Error::InvalidArgument(
                "an escape table needs at least three symbols".into(),
            ));
        }
        let t = CdfTable {
            symbol_min,
            cdf,
            precision,
            escapes: true,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.precision) {
            return Err(Error::InvalidArgument(format!(
                "table precision {} out of range",
                self.precision
            )));
        }
        if self.cdf.len() < 2 {
            return Err(Error::InvalidArgument("table needs at least one symbol".into()));
        }
        if self.cdf[0] != 0 || *self.cdf.last().unwrap() != 1 << self.precision {
            return Err(Error::InvalidArgument(format!(
                "table must span [0, 2^{}]",
                self.precision
            )));
        }
        if self.cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("table is not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn symbol_min(&self) -> i32 {
        self.symbol_min
    }

    pub fn symbol_max(&self) -> i32 {
        self.symbol_min + self.cdf.len() as i32 - 2
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn num_symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    /// `(start, freq)` of the symbol at `index`.
    pub fn range(&self, index: usize) -> (u32, u32) {
        (self.cdf[index], self.cdf[index + 1] - self.cdf[index])
    }

    /// Symbol index whose interval contains `slot`.
    pub fn lookup(&self, slot: u32) -> usize {
        self.cdf.partition_point(|&c| c <= slot) - 1
    }

    /// Whether the edge symbols are escape buckets (true for [`build_cdf_table`]).
    pub fn has_escapes(&self) -> bool {
        self.escapes
    }

    /// Maps a value to its bucket, with an escape offset for edge buckets.
    pub fn code(&self, value: i32) -> Result<Coded> {
        let (lo, hi) = (self.symbol_min, self.symbol_max());
        if !self.has_escapes() {
            if value < lo || value > hi {
                return Err(Error::InvalidArgument(format!(
                    "symbol {value} outside table [{lo}, {hi}]"
                )));
            }
            return Ok(Coded {
                index: (value - lo) as usize,
                escape: None,
            });
        }
        let (index, offset) = if value <= lo {
            (0, lo as i64 - value as i64)
        } else if value >= hi {
            (self.num_symbols() - 1, value as i64 - hi as i64)
        } else {
            return Ok(Coded {
                index: (value - lo) as usize,
                escape: None,
            });
        };
        if offset >= 1 << ESCAPE_BITS {
            return Err(Error::InvalidArgument(format!(
                "symbol {value} too far outside table [{lo}, {hi}] to escape"
            )));
        }
        Ok(Coded {
            index,
            escape: Some(offset as u32),
        })
    }

    /// Inverse of [`CdfTable::code`].
    pub fn value(&self, index: usize, escape: Option<u32>) -> i32 {
        let v = self.symbol_min + index as i32;
        match escape {
            Some(off) if index == 0 => v - off as i32,
            Some(off) => v + off as i32,
            None => v,
        }
    }

    /// Whether `index` is an escape bucket.
    pub fn is_escape(&self, index: usize) -> bool {
        self.has_escapes() && (index == 0 || index == self.num_symbols() - 1)
    }

    /// Ideal code length of `value` in bits, including escape bits.
    pub fn cost_bits(&self, value: i32) -> Result<f64> {
        let c = self.code(value)?;
        let (_, freq) = self.range(c.index);
        let bits = self.precision as f64 - (freq as f64).log2();
        Ok(bits + if c.escape.is_some() { ESCAPE_BITS as f64 } else { 0.0 })
    }
}

/// Builds the coder table for one latent element predicted as `N(mu, sigma^2)`.
///
/// Masses come from Gaussian CDF differences (edge buckets take the full tail)
/// and are rounded to `precision` bits. Every symbol keeps a frequency of at
/// least one; the rounding residue is charged to the largest frequencies.
/// The result depends only on the bit patterns of `mu` and `sigma`.
pub fn build_cdf_table(mu: f64, sigma: f64, precision: u32) -> Result<CdfTable> {
    if !(8..=16).contains(&precision) {
        return Err(Error::InvalidArgument(format!(
            "table precision {precision} outside [8, 16]"
        )));
    }
    if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid Gaussian parameters mu={mu}, sigma={sigma}"
        )));
    }
    let sigma = sigma.max(SIGMA_MIN as f32 as f64);
    let total = 1u32 << precision;
    // keeps the symbol count at most half the total frequency
    let max_spread = ((total / 2 - 3) / 2) as f64;
    let spread = (TAIL_FACTOR * sigma).ceil().min(max_spread) as i32;
    let center = mu.round().clamp(-(1 << 24) as f64, (1 << 24) as f64) as i32;
    let lo = center - spread - 1;
    let hi = center + spread + 1;

    let n = (hi - lo + 1) as usize;
    let mut mass = Vec::with_capacity(n);
    for s in lo..=hi {
        let m = if s == lo {
            normal_cdf((lo as f64 + 0.5 - mu) / sigma)
        } else if s == hi {
            normal_cdf((mu - hi as f64 + 0.5) / sigma)
        } else {
            bin_mass(s as f64, mu, sigma)
        };
        mass.push(m);
    }

    let scale = total as f64;
    let mut freq: Vec<u32> = mass
        .iter()
        .map(|m| ((m * scale).round() as u32).max(1))
        .collect();
    let sum: i64 = freq.iter().map(|&f| f as i64).sum();
    let mut diff = total as i64 - sum;
    // largest first; ties broken by index for determinism
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    if diff > 0 {
        freq[order[0]] += diff as u32;
        diff = 0;
    } else {
        for &i in &order {
            if diff == 0 {
                break;
            }
            let take = (-diff).min(freq[i] as i64 - 1);
            freq[i] -= take as u32;
            diff += take;
        }
    }
    debug_assert_eq!(diff, 0);

    let mut cdf = Vec::with_capacity(n + 1);
    let mut acc = 0u32;
    cdf.push(0);
    for f in freq {
        acc += f;
        cdf.push(acc);
    }
    CdfTable::from_cdf_with_escapes(lo, cdf, precision)
}
