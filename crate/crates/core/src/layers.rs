//! The three networks: predictive analysis `t_a`, predictive synthesis `t_s`
//! and the entropy-parameter network `n`, built from block-level masked
//! convolutions and GDN/IGDN.
//!
//! All networks work on block grids (see [`crate::blocks`]). In
//! [`Layout::Grid`] they run over a whole grid with zero padding. In
//! [`Layout::Site`] they evaluate a single grid site from a context window
//! centred on it, which is how the codec runs them block by block.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::quant::SIGMA_MIN;
use crate::tensor::{Float, Tensor};

/// Offset added to `beta_raw^2` so GDN denominators stay positive.
pub const GDN_BETA_OFFSET: f64 = 1e-6;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Rate-distortion multipliers selectable by index (MSE on the 0..255 scale).
pub const LAMBDAS: [f64; 8] = [0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483, 0.0932, 0.1800];

/// Network hyper-parameters. Interior widths derive from `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Block size B.
    pub block: usize,
    pub n: usize,
    pub m: usize,
    /// Kernel size of the interior entropy-network layer (1 or 3).
    pub k2: usize,
    pub lambda: f64,
}

impl HyperParams {
    pub fn new(block: usize, n: usize, m: usize, k2: usize, lambda: f64) -> Result<Self> {
        let hps = HyperParams { block, n, m, k2, lambda };
        hps.validate()?;
        Ok(hps)
    }

    /// `N = 768, M = 96, K2 = 1`.
    pub fn hps1(block: usize, lambda_index: usize) -> Result<Self> {
        Self::preset(block, 768, 96, 1, lambda_index)
    }

    /// `N = 1152, M = 128, K2 = 3`.
    pub fn hps2(block: usize, lambda_index: usize) -> Result<Self> {
        Self::preset(block, 1152, 128, 3, lambda_index)
    }

    fn preset(block: usize, n: usize, m: usize, k2: usize, lambda_index: usize) -> Result<Self> {
        let lambda = *LAMBDAS
            .get(lambda_index)
            .ok_or_else(|| Error::InvalidArgument(format!("lambda index {lambda_index} outside 0..8")))?;
        Self::new(block, n, m, k2, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if ![4, 8, 16].contains(&self.block) {
            return Err(Error::InvalidArgument(format!("block size {} not in {{4, 8, 16}}", self.block)));
        }
        if self.n == 0 || !self.n.is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!(
                "N = {} must be a positive multiple of 8 so every interior width is an integer",
                self.n
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidArgument("M must be positive".into()));
        }
        if self.k2 != 1 && self.k2 != 3 {
            return Err(Error::InvalidArgument(format!("K2 = {} not in {{1, 3}}", self.k2)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        Ok(())
    }

    /// Channels of a pixel block grid, `3 B^2`.
    pub fn channels(&self) -> usize {
        3 * self.block * self.block
    }

    pub fn n1(&self) -> usize {
        7 * self.n / 8
    }

    pub fn n2(&self) -> usize {
        6 * self.n / 8
    }

    pub fn m1(&self) -> usize {
        6 * self.n / 4
    }

    pub fn m2(&self) -> usize {
        5 * self.n / 4
    }

    pub fn m3(&self) -> usize {
        self.n
    }

    /// 1 or 2 for the presets, 0 otherwise.
    pub fn hps_id(&self) -> u8 {
        match (self.n, self.m, self.k2) {
            (768, 96, 1) => 1,
            (1152, 128, 3) => 2,
            _ => 0,
        }
    }

    /// Position of `lambda` in [`LAMBDAS`], or 255 for a custom value.
    pub fn lambda_index(&self) -> u8 {
        LAMBDAS
            .iter()
            .position(|l| *l == self.lambda)
            .map_or(255, |i| i as u8)
    }

    /// Radius of the block neighbourhood the entropy network reads.
    pub fn entropy_context_radius(&self) -> usize {
        if self.k2 == 3 {
            2
        } else {
            1
        }
    }
}

/// Tap pattern of a 3x3 block-level masked convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskType {
    /// Upper-left, upper, upper-right and left neighbours.
    A,
    /// Type A plus the centre.
    B,
}

impl MaskType {
    /// Allowed taps in row-major 3x3 order.
    pub fn allowed(self) -> [bool; 9] {
        let centre = self == MaskType::B;
        [true, true, true, true, centre, false, false, false, false]
    }
}

/// How a network is evaluated: over a whole grid, or at the centre of a
/// context window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Grid,
    Site,
}

impl Layout {
    fn padding(self) -> usize {
        match self {
            Layout::Grid => 1,
            Layout::Site => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform in `+-1/sqrt(fan_in)`, masked taps zero.
    Weight { fan_in: usize, mask: Option<MaskType> },
    Bias(f64),
    /// Zero for the mean half, one for the scale half.
    EntropyHeadBias,
    GdnBeta,
    GdnGamma,
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn param_specs(h: &HyperParams) -> Vec<ParamSpec> {
    let c = h.channels();
    let mut specs = Vec::new();
    let mut conv = |name: &str, c_out: usize, c_in: usize, k: usize, mask: Option<MaskType>, bias: Option<f64>| {
        let taps = match mask {
            Some(m) => m.allowed().iter().filter(|a| **a).count(),
            None => k * k,
        };
        specs.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![c_out, c_in, k, k],
            init: Init::Weight { fan_in: c_in * taps, mask },
        });
        if let Some(b) = bias {
            specs.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: vec![c_out],
                init: Init::Bias(b),
            });
        }
    };
    conv("ta.fuse_x", h.n, c, 1, None, Some(0.0));
    conv("ta.fuse_ctx", h.n, c, 3, Some(MaskType::A), None);
    conv("ta.conv1", h.n1(), h.n, 1, None, Some(0.0));
    conv("ta.conv2", h.n2(), h.n1(), 1, None, Some(0.0));
    conv("ta.conv3", h.m, h.n2(), 1, None, Some(0.0));
    conv("ts.fuse_y", h.m1(), h.m, 1, None, Some(0.0));
    conv("ts.fuse_ctx", h.m1(), c, 3, Some(MaskType::A), None);
    conv("ts.conv1", h.m2(), h.m1(), 1, None, Some(0.0));
    conv("ts.conv2", h.m3(), h.m2(), 1, None, Some(0.0));
    conv("ts.conv3", c, h.m3(), 1, None, Some(0.0));
    conv("n.conv0", h.n2(), c, 3, Some(MaskType::A), Some(0.0));
    let interior_mask = (h.k2 == 3).then_some(MaskType::B);
    conv("n.conv1", h.n2(), h.n2(), h.k2, interior_mask, Some(0.0));
    conv("n.conv2", 2 * h.m, h.n2(), 1, None, None);
    specs.push(ParamSpec {
        name: "n.conv2.bias".into(),
        shape: vec![2 * h.m],
        init: Init::EntropyHeadBias,
    });
    for (name, ch) in [
        ("ta.gdn0", h.n),
        ("ta.gdn1", h.n1()),
        ("ta.gdn2", h.n2()),
        ("ts.igdn0", h.m1()),
        ("ts.igdn1", h.m2()),
        ("ts.igdn2", h.m3()),
    ] {
        specs.push(ParamSpec {
            name: format!("{name}.beta"),
            shape: vec![ch],
            init: Init::GdnBeta,
        });
        specs.push(ParamSpec {
            name: format!("{name}.gamma"),
            shape: vec![ch, ch],
            init: Init::GdnGamma,
        });
    }
    specs
}

const GDN_LAYERS: [&str; 6] = ["ta.gdn0", "ta.gdn1", "ta.gdn2", "ts.igdn0", "ts.igdn1", "ts.igdn2"];

/// Names of every stored parameter, sorted.
pub fn param_names(hps: &HyperParams) -> Vec<String> {
    let mut names: Vec<String> = param_specs(hps).into_iter().map(|s| s.name).collect();
    names.sort();
    names
}

fn init_param(spec: &ParamSpec, hps: &HyperParams, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n: usize = spec.shape.iter().product();
    let data: Vec<f32> = match spec.init {
        Init::Weight { fan_in, mask } => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let allowed = mask.map(MaskType::allowed);
            let k2 = spec.shape[2] * spec.shape[3];
            (0..n)
                .map(|i| {
                    let v = rng.gen_range(-bound..bound) as f32;
                    match allowed {
                        Some(a) if !a[i % k2] => 0.0,
                        _ => v,
                    }
                })
                .collect()
        }
        Init::EntropyHeadBias => (0..n).map(|i| if i < hps.m { 0.0 } else { 1.0 }).collect(),
        Init::Bias(b) => vec![b as f32; n],
        Init::GdnBeta => vec![1.0; n],
        Init::GdnGamma => {
            let c = spec.shape[0];
            (0..n)
                .map(|i| {
                    if i / c == i % c {
                        0.1f32.sqrt()
                    } else {
                        rng.gen_range(-0.01..0.01f32)
                    }
                })
                .collect()
        }
    };
    Tensor::from_vec(&spec.shape, data).expect("parameter shape")
}

/// Named parameter set for all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Float = f32> {
    hps: HyperParams,
    seed: u64,
    params: BTreeMap<String, Tensor<T>>,
}

impl Model<f32> {
    /// Freshly initialized model; the same `seed` always yields the same weights.
    pub fn init(hps: HyperParams, seed: u64) -> Result<Self> {
        hps.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut specs = param_specs(&hps);
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        let params = specs
            .iter()
            .map(|s| (s.name.clone(), init_param(s, &hps, &mut rng)))
            .collect();
        Ok(Model { hps, seed, params })
    }
}

impl<T: Float> Model<T> {
    /// Assembles a model from named tensors, checking names and shapes.
    pub fn from_params(hps: HyperParams, seed: u64, params: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        hps.validate()?;
        let specs = param_specs(&hps);
        if specs.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                specs.len(),
                params.len()
            )));
        }
        for s in &specs {
            let t = params
                .get(&s.name)
                .ok_or_else(|| Error::Format(format!("missing parameter {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(Model { hps, seed, params })
    }

    pub fn hps(&self) -> &HyperParams {
        &self.hps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Changes the RD multiplier recorded with the model.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        let hps = HyperParams { lambda, ..self.hps };
        hps.validate()?;
        self.hps = hps;
        Ok(())
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Replaces a parameter with a tensor of the same shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {name} is {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            hps: self.hps,
            seed: self.seed,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Puts every parameter on the graph. Trainable leaves receive gradients;
    /// GDN parameters are reparameterized on the graph.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>, trainable: bool) -> Result<Bound> {
        let mut vars = HashMap::with_capacity(self.params.len());
        for (name, t) in &self.params {
            let v = if trainable { g.param_ref(t) } else { g.constant_ref(t) };
            vars.insert(name.clone(), v);
        }
        Bound::from_raw(g, vars)
    }

    /// Inference copy with the GDN reparameterization evaluated once.
    pub fn frozen(&self) -> Frozen<T> {
        let mut params = self.params.clone();
        for layer in GDN_LAYERS {
            let beta = params.get_mut(&format!("{layer}.beta")).expect("gdn beta");
            let off = T::from_f64_lossy(GDN_BETA_OFFSET);
            *beta = beta.map(|b| b * b + off);
            let gamma = params.get_mut(&format!("{layer}.gamma")).expect("gdn gamma");
            let c = gamma.shape()[0];
            *gamma = gamma.map(|v| v * v).reshape(&[c, c, 1, 1]).expect("square gamma");
        }
        Frozen { hps: self.hps, params }
    }
}

/// Model with effective GDN parameters precomputed; cheap to bind per block.
#[derive(Clone, Debug)]
pub struct Frozen<T: Float = f32> {
    hps: HyperParams,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> Frozen<T> {
    pub fn hps(&self) -> &HyperParams {
        &self.hps
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>) -> Bound {
        let vars: HashMap<String, Var> = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), g.constant_ref(t)))
            .collect();
        Bound { raw: vars.clone(), vars }
    }
}

/// Graph handles of a bound model's parameters. GDN entries hold the
/// effective `beta` and `gamma` (`C x C x 1 x 1`).
#[derive(Clone, Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
    raw: HashMap<String, Var>,
}

impl Bound {
    /// Binds raw parameter leaves that are already on the graph (keyed by
    /// parameter name), adding the GDN reparameterization.
    pub fn from_raw<T: Float>(g: &mut Graph<'_, T>, raw: HashMap<String, Var>) -> Result<Bound> {
        let mut vars = raw.clone();
        for layer in GDN_LAYERS {
            let find = |k: String| {
                raw.get(&k)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("unbound parameter {k}")))
            };
            let beta_raw = find(format!("{layer}.beta"))?;
            let b2 = g.square(beta_raw)?;
            let beta = g.offset(b2, T::from_f64_lossy(GDN_BETA_OFFSET))?;
            let gamma_raw = find(format!("{layer}.gamma"))?;
            let c = g.value(gamma_raw).shape()[0];
            let g2 = g.square(gamma_raw)?;
            let gamma = g.reshape(g2, &[c, c, 1, 1])?;
            vars.insert(format!("{layer}.beta"), beta);
            vars.insert(format!("{layer}.gamma"), gamma);
        }
        Ok(Bound { vars, raw })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unbound parameter {name}")))
    }

    fn conv(&self, layer: &str) -> Result<(Var, Option<Var>)> {
        let w = self.get(&format!("{layer}.weight"))?;
        Ok((w, self.vars.get(&format!("{layer}.bias")).copied()))
    }

    fn norm(&self, layer: &str) -> Result<(Var, Var)> {
        Ok((self.get(&format!("{layer}.beta"))?, self.get(&format!("{layer}.gamma"))?))
    }

    /// Leaf of every stored parameter, for reading gradients.
    pub fn raw_vars(&self) -> &HashMap<String, Var> {
        &self.raw
    }
}

/// 3x3 block-level masked convolution.
pub fn masked_conv<T: Float>(
    g: &mut Graph<'_, T>,
    ctx: Var,
    weight: Var,
    bias: Option<Var>,
    mask: MaskType,
    padding: usize,
) -> Result<Var> {
    let ws = g.value(weight).shape();
    if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
        return Err(Error::shape(format!("masked convolution needs a 3x3 kernel, got {ws:?}")));
    }
    g.conv2d_masked(ctx, weight, bias, padding, &mask.allowed())
}

fn channel_axis<T: Float>(g: &Graph<'_, T>, x: Var) -> usize {
    g.value(x).rank() - 3
}

fn gdn_norm<T: Float>(g: &mut Graph<'_, T>, x: Var, beta: Var, gamma: Var) -> Result<Var> {
    let gamma = if g.value(gamma).rank() == 2 {
        let c = g.value(gamma).shape()[0];
        g.reshape(gamma, &[c, c, 1, 1])?
    } else {
        gamma
    };
    let sq = g.square(x)?;
    let pre = g.conv2d(sq, gamma, Some(beta), 0)?;
    g.sqrt(pre)
}

/// `y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)` at every spatial site.
/// `beta` and `gamma` are the effective (non-negative) parameters.
pub fn gdn<T: Float>(g: &mut Graph<'_, T>, x: Var, beta: Var, gamma: Var) -> Result<Var> {
    let d = gdn_norm(g, x, beta, gamma)?;
    g.div(x, d)
}

/// `y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2)`.
pub fn igdn<T: Float>(g: &mut Graph<'_, T>, x: Var, beta: Var, gamma: Var) -> Result<Var> {
    let d = gdn_norm(g, x, beta, gamma)?;
    g.mul(x, d)
}

fn conv1x1<T: Float>(g: &mut Graph<'_, T>, p: &Bound, layer: &str, x: Var) -> Result<Var> {
    let (w, b) = p.conv(layer)?;
    g.conv2d(x, w, b, 0)
}

fn check_sites<T: Float>(g: &Graph<'_, T>, a: Var, ctx: Var, layout: Layout, radius: usize) -> Result<()> {
    let (sa, sc) = (g.value(a).shape(), g.value(ctx).shape());
    let rank = sa.len();
    if rank < 3 || sc.len() != rank || sa[..rank - 3] != sc[..rank - 3] {
        return Err(Error::shape(format!("input {sa:?} and context {sc:?} disagree")));
    }
    let (ha, wa) = (sa[rank - 2], sa[rank - 1]);
    let (hc, wc) = (sc[rank - 2], sc[rank - 1]);
    let ok = match layout {
        Layout::Grid => ha == hc && wa == wc,
        Layout::Site => ha == 1 && wa == 1 && hc == 2 * radius + 1 && wc == 2 * radius + 1,
    };
    if !ok {
        return Err(Error::shape(format!(
            "grid mismatch between input {sa:?} and context {sc:?} ({layout:?})"
        )));
    }
    Ok(())
}

/// Predictive analysis transform: latents `M x Hb x Wb` from source blocks and
/// causal reconstructed context.
pub fn analysis_ta<T: Float>(g: &mut Graph<'_, T>, p: &Bound, x: Var, ctx: Var, layout: Layout) -> Result<Var> {
    check_sites(g, x, ctx, layout, 1)?;
    let a = conv1x1(g, p, "ta.fuse_x", x)?;
    let w = p.get("ta.fuse_ctx.weight")?;
    let b = masked_conv(g, ctx, w, None, MaskType::A, layout.padding())?;
    let mut h = g.add(a, b)?;
    for (norm, conv) in [("ta.gdn0", "ta.conv1"), ("ta.gdn1", "ta.conv2"), ("ta.gdn2", "ta.conv3")] {
        let (beta, gamma) = p.norm(norm)?;
        h = gdn(g, h, beta, gamma)?;
        h = conv1x1(g, p, conv, h)?;
    }
    Ok(h)
}

/// Predictive synthesis transform: reconstructed blocks `3B^2 x Hb x Wb`,
/// optionally clamped to `[0, 1]`.
pub fn synthesis_ts<T: Float>(
    g: &mut Graph<'_, T>,
    p: &Bound,
    y_hat: Var,
    ctx: Var,
    layout: Layout,
    clamp: bool,
) -> Result<Var> {
    check_sites(g, y_hat, ctx, layout, 1)?;
    let a = conv1x1(g, p, "ts.fuse_y", y_hat)?;
    let w = p.get("ts.fuse_ctx.weight")?;
    let b = masked_conv(g, ctx, w, None, MaskType::A, layout.padding())?;
    let mut h = g.add(a, b)?;
    for (norm, conv) in [("ts.igdn0", "ts.conv1"), ("ts.igdn1", "ts.conv2"), ("ts.igdn2", "ts.conv3")] {
        let (beta, gamma) = p.norm(norm)?;
        h = igdn(g, h, beta, gamma)?;
        h = conv1x1(g, p, conv, h)?;
    }
    if clamp {
        h = g.clamp(h, T::zero(), T::one())?;
    }
    Ok(h)
}

/// Entropy-parameter network: per-latent `(mu, sigma)` from causal context.
///
/// With `K2 = 3` and [`Layout::Site`], `ctx` is a 5x5 window and
/// `interior_valid` (`1 x 3 x 3`) zeroes first-layer activations at window
/// positions outside the image, matching the zero padding of the grid pass.
pub fn entropy_net_n<T: Float>(
    g: &mut Graph<'_, T>,
    p: &Bound,
    ctx: Var,
    layout: Layout,
    interior_valid: Option<Var>,
) -> Result<(Var, Var)> {
    let (w0, b0) = p.conv("n.conv0")?;
    let (w1, b1) = p.conv("n.conv1")?;
    let k2 = g.value(w1).shape()[2];
    if layout == Layout::Site {
        let s = g.value(ctx).shape();
        let want = 2 * (if k2 == 3 { 2 } else { 1 }) + 1;
        if s.len() < 3 || s[s.len() - 1] != want || s[s.len() - 2] != want {
            return Err(Error::shape(format!("entropy context window must be {want}x{want}, got {s:?}")));
        }
    }
    let pad = layout.padding();
    let mut h = masked_conv(g, ctx, w0, b0, MaskType::A, pad)?;
    if let (Layout::Site, Some(valid), 3) = (layout, interior_valid, k2) {
        h = g.mul(h, valid)?;
    }
    h = g.leaky_relu(h, T::from_f64_lossy(LEAKY_SLOPE))?;
    h = if k2 == 3 {
        masked_conv(g, h, w1, b1, MaskType::B, pad)?
    } else {
        g.conv2d(h, w1, b1, 0)?
    };
    h = g.leaky_relu(h, T::from_f64_lossy(LEAKY_SLOPE))?;
    h = conv1x1(g, p, "n.conv2", h)?;
    let axis = channel_axis(g, h);
    let m = g.value(h).shape()[axis] / 2;
    let mu = g.narrow(h, axis, 0, m)?;
    let raw = g.narrow(h, axis, m, m)?;
    let sigma = g.clamp_min(raw, T::from_f64_lossy(SIGMA_MIN))?;
    Ok((mu, sigma))
}
