//! Open-loop training and the asymptotic closed loop (ACL) procedure.
//!
//! Each ACL iteration trains the networks open loop on whole crops, with the
//! causal context taken from a fixed set of reconstructions instead of the
//! system's own output. At the end of iteration `k` the trained system
//! regenerates that set (hard rounding, clamped) for iteration `k + 1`. At
//! `k = 0` the reconstructions are the originals. The closed-loop cost on the
//! validation set is measured with the real block-by-block codec.

mod adam;
mod data;
mod schedule;

pub use adam::{Adam, AdamScalars, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use data::{batch_to_blocks, crop_batch, reflect_pad, Batch};
pub use schedule::PlateauScheduler;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::blocks::{b2c, c2b, crop_to_original, pad_to_block_multiple, BlockTensor, ImageRGB};
use crate::checkpoint::{read_tensor_map, write_tensor_map, Reader};
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::eval::mse_255;
use crate::layers::{analysis_ta, entropy_net_n, synthesis_ts, Bound, HyperParams, Layout, Model};
use crate::quant::{add_uniform_noise_var, gaussian_likelihood, rate_bits};
use crate::tensor::{Float, Tensor};

/// Training hyper-parameters. Every field has a default, so a config file
/// only needs the ones it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Rate-distortion multiplier (MSE on the 0..255 scale).
    pub lambda: f64,
    /// Side of the square training crops, a multiple of the block size.
    pub patch: usize,
    pub batch: usize,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_min: f64,
    /// Epochs without improvement before the learning rate is cut.
    pub plateau_patience: usize,
    /// Relative improvement that counts as progress.
    pub plateau_threshold: f64,
    pub steps_per_epoch: usize,
    /// SGD budget of one ACL iteration.
    pub sgd_steps_per_acl: usize,
    /// Epochs without improvement that end an ACL iteration early.
    pub early_stop_epochs: usize,
    pub acl_min_iters: usize,
    pub acl_max_iters: usize,
    /// Relative closed-loop cost change below which the loop has converged.
    pub acl_tolerance: f64,
    pub finetune_iters: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0130,
            patch: 256,
            batch: 4,
            lr_init: 1e-4,
            lr_factor: 0.8,
            lr_min: 2e-5,
            plateau_patience: 5,
            plateau_threshold: 1e-3,
            steps_per_epoch: 100,
            sgd_steps_per_acl: 2000,
            early_stop_epochs: 10,
            acl_min_iters: 3,
            acl_max_iters: 10,
            acl_tolerance: 0.005,
            finetune_iters: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Small settings for 96x96 images and the `B = 8, N = 48, M = 8` model.
    pub fn toy() -> Self {
        TrainConfig {
            lambda: 0.01,
            patch: 64,
            batch: 4,
            lr_init: 1e-3,
            steps_per_epoch: 25,
            sgd_steps_per_acl: 2000,
            early_stop_epochs: 6,
            acl_min_iters: 4,
            acl_max_iters: 4,
            finetune_iters: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!("need 0 < lr_min <= lr_init, got {} and {}", self.lr_min, self.lr_init));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!("lr_factor must lie in (0, 1], got {}", self.lr_factor));
        }
        if self.patch == 0 || self.batch == 0 || self.steps_per_epoch == 0 || self.sgd_steps_per_acl == 0 {
            return bad("patch, batch, steps_per_epoch and sgd_steps_per_acl must be positive".into());
        }
        if self.plateau_patience == 0 || self.early_stop_epochs == 0 {
            return bad("plateau_patience and early_stop_epochs must be positive".into());
        }
        if self.acl_max_iters == 0 || self.acl_min_iters > self.acl_max_iters {
            return bad(format!(
                "need 1 <= acl_max_iters and acl_min_iters <= acl_max_iters, got {} and {}",
                self.acl_max_iters, self.acl_min_iters
            ));
        }
        if [self.acl_tolerance, self.plateau_threshold].iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        Ok(())
    }
}

/// How the latents are relaxed in [`open_loop_forward`].
pub enum Latents<'r> {
    /// Additive `U[-1/2, 1/2]` noise, for training.
    Noise(&'r mut ChaCha8Rng),
    /// Hard rounding (no gradient), as the codec does.
    Round,
}

/// Graph handles produced by [`open_loop_forward`].
#[derive(Clone, Copy, Debug)]
pub struct OpenLoop {
    pub y: Var,
    pub y_tilde: Var,
    pub mu: Var,
    pub sigma: Var,
    /// Unclamped reconstruction, block packed.
    pub x_tilde: Var,
}

/// Whole-grid pass of all three networks. `x` and `ctx` are block-packed
/// (`3B^2 x Hb x Wb`, optionally with a leading batch axis) and aligned.
pub fn open_loop_forward<T: Float>(
    g: &mut Graph<'_, T>,
    p: &Bound,
    x: Var,
    ctx: Var,
    latents: Latents<'_>,
) -> Result<OpenLoop> {
    if g.value(x).shape() != g.value(ctx).shape() {
        return Err(Error::shape(format!(
            "source {:?} and context {:?} are not aligned",
            g.value(x).shape(),
            g.value(ctx).shape()
        )));
    }
    let y = analysis_ta(g, p, x, ctx, Layout::Grid)?;
    let y_tilde = match latents {
        Latents::Noise(rng) => add_uniform_noise_var(g, y, rng)?,
        Latents::Round => {
            let r = g.value(y).map(|v| v.round());
            g.constant(r)
        }
    };
    let (mu, sigma) = entropy_net_n(g, p, ctx, Layout::Grid, None)?;
    let x_tilde = synthesis_ts(g, p, y_tilde, ctx, Layout::Grid, false)?;
    Ok(OpenLoop {
        y,
        y_tilde,
        mu,
        sigma,
        x_tilde,
    })
}

/// The rate-distortion loss and its two terms.
#[derive(Clone, Copy, Debug)]
pub struct RdLoss {
    pub loss: Var,
    /// Model rate in bits per pixel.
    pub bpp: Var,
    /// Mean squared error on the 0..255 scale.
    pub mse: Var,
}

/// `bpp + lambda * MSE`, with the rate taken from the likelihood of
/// `out.y_tilde` and the pixel count from `x`.
pub fn rd_loss<T: Float>(g: &mut Graph<'_, T>, x: Var, out: &OpenLoop, lambda: f64) -> Result<RdLoss> {
    let pixels = g.value(x).len() / 3;
    let p = gaussian_likelihood(g, out.y_tilde, out.mu, out.sigma)?;
    let bits = rate_bits(g, p)?;
    let bpp = g.scale(bits, T::from_f64_lossy(1.0 / pixels as f64))?;
    let diff = g.sub(out.x_tilde, x)?;
    let sq = g.square(diff)?;
    let mean = g.mean(sq)?;
    let mse = g.scale(mean, T::from_f64_lossy(255.0 * 255.0))?;
    let d = g.scale(mse, T::from_f64_lossy(lambda))?;
    let loss = g.add(bpp, d)?;
    Ok(RdLoss { loss, bpp, mse })
}

/// Mean of two RD costs: one with `ctx` as context, one with the first pass's
/// unclamped reconstruction as context (gradients flow through both).
pub fn finetune_loss<T: Float>(
    g: &mut Graph<'_, T>,
    p: &Bound,
    x: Var,
    ctx: Var,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let first = open_loop_forward(g, p, x, ctx, Latents::Noise(rng))?;
    let cost0 = rd_loss(g, x, &first, lambda)?.loss;
    let second = open_loop_forward(g, p, x, first.x_tilde, Latents::Noise(rng))?;
    let cost1 = rd_loss(g, x, &second, lambda)?.loss;
    let sum = g.add(cost0, cost1)?;
    g.scale(sum, T::from_f64_lossy(0.5))
}

/// Result of a deterministic open-loop pass over one image.
#[derive(Clone, Debug)]
pub struct OpenLoopImage {
    /// Clamped reconstruction, cropped to the source size.
    pub recon: ImageRGB,
    /// Model rate of the rounded latents in bits per source pixel.
    pub bpp: f64,
    pub mse: f64,
}

impl OpenLoopImage {
    pub fn cost(&self, lambda: f64) -> f64 {
        self.bpp + lambda * self.mse
    }
}

/// Open-loop pass with rounded latents and `ctx` as context. Images whose
/// sides are not multiples of the block size are edge-padded first.
pub fn open_loop_image(model: &Model, x: &ImageRGB, ctx: &ImageRGB) -> Result<OpenLoopImage> {
    let block = model.hps().block;
    let (xp, pad) = pad_to_block_multiple(x, block)?;
    let (cp, _) = pad_to_block_multiple(ctx, block)?;
    let frozen = model.frozen();
    let mut g = Graph::new();
    let p = frozen.bind(&mut g);
    let xv = g.constant(b2c(&xp, block)?.into_tensor());
    let cv = g.constant(b2c(&cp, block)?.into_tensor());
    let out = open_loop_forward(&mut g, &p, xv, cv, Latents::Round)?;
    let lik = gaussian_likelihood(&mut g, out.y_tilde, out.mu, out.sigma)?;
    let bits = rate_bits(&mut g, lik)?;
    let bits = g.value(bits).item()? as f64;
    let xt = g.value(out.x_tilde).map(|v| v.clamp(0.0, 1.0));
    let recon = crop_to_original(&c2b(&BlockTensor::new(xt, block)?)?, pad)?;
    let mse = mse_255(x, &recon)?;
    Ok(OpenLoopImage {
        recon,
        bpp: bits / (x.height() * x.width()) as f64,
        mse,
    })
}

/// Next reconstruction set: each image reconstructed open loop from its
/// current reconstruction.
pub fn regenerate(model: &Model, images: &[ImageRGB], recons: &[ImageRGB]) -> Result<Vec<ImageRGB>> {
    images
        .iter()
        .zip(recons)
        .map(|(x, r)| Ok(open_loop_image(model, x, r)?.recon))
        .collect()
}

/// Open-loop figures for one set, averaged per image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenLoopCost {
    pub cost: f64,
    pub bpp: f64,
    pub mse: f64,
}

/// Rounded open-loop pass over a set with `recons` as context.
pub fn open_loop_cost(model: &Model, images: &[ImageRGB], recons: &[ImageRGB], lambda: f64) -> Result<OpenLoopCost> {
    let mut acc = OpenLoopCost {
        cost: 0.0,
        bpp: 0.0,
        mse: 0.0,
    };
    for (x, r) in images.iter().zip(recons) {
        let o = open_loop_image(model, x, r)?;
        acc.cost += o.cost(lambda);
        acc.bpp += o.bpp;
        acc.mse += o.mse;
    }
    let n = images.len() as f64;
    Ok(OpenLoopCost {
        cost: acc.cost / n,
        bpp: acc.bpp / n,
        mse: acc.mse / n,
    })
}

/// Closed-loop figures for one set, averaged per image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedLoopCost {
    /// `estimated_bpp + lambda * MSE`.
    pub cost: f64,
    pub estimated_bpp: f64,
    /// Actual file rate.
    pub bpp: f64,
    pub mse: f64,
}

/// Codes every image with the block-by-block codec.
pub fn closed_loop_cost(model: &Model, images: &[ImageRGB], lambda: f64) -> Result<ClosedLoopCost> {
    let codec = Codec::new(model)?;
    let mut acc = ClosedLoopCost {
        cost: 0.0,
        estimated_bpp: 0.0,
        bpp: 0.0,
        mse: 0.0,
    };
    for x in images {
        let enc = codec.encode(x)?;
        let mse = mse_255(x, &enc.recon)?;
        acc.estimated_bpp += enc.stats.estimated_bpp;
        acc.bpp += enc.stats.bpp;
        acc.mse += mse;
        acc.cost += enc.stats.estimated_bpp + lambda * mse;
    }
    let n = images.len() as f64;
    Ok(ClosedLoopCost {
        cost: acc.cost / n,
        estimated_bpp: acc.estimated_bpp / n,
        bpp: acc.bpp / n,
        mse: acc.mse / n,
    })
}

/// Loss value and gradients of every raw parameter for one batch.
pub fn loss_and_grads<T: Float>(
    model: &Model<T>,
    x: &Tensor<T>,
    ctx: &Tensor<T>,
    lambda: f64,
    finetune: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true)?;
    let xv = g.constant_ref(x);
    let cv = g.constant_ref(ctx);
    let loss = if finetune {
        finetune_loss(&mut g, &p, xv, cv, lambda, rng)?
    } else {
        let out = open_loop_forward(&mut g, &p, xv, cv, Latents::Noise(rng))?;
        rd_loss(&mut g, xv, &out, lambda)?.loss
    };
    let value = g.value(loss).item()?.to_f64().unwrap_or(f64::NAN);
    g.backward(loss)?;
    let grads = p
        .raw_vars()
        .iter()
        .filter_map(|(name, v)| g.grad(*v).map(|t| (name.clone(), t.clone())))
        .collect();
    Ok((value, grads))
}

/// Generator for global SGD step `step`; crops and noise both come from it.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// One finished ACL iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AclRecord {
    pub k: usize,
    pub finetune: bool,
    pub closed_loop_cost: f64,
    pub open_loop_cost: f64,
    /// Actual file rate of the closed-loop codes.
    pub closed_loop_bpp: f64,
    pub closed_loop_mse: f64,
    pub open_loop_bpp: f64,
    pub open_loop_mse: f64,
    pub sgd_steps: u64,
    pub lr: f64,
}

/// Progress of an ACL run. `recon_train` and `recon_val` are the context
/// sets for iteration `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AclState {
    pub k: usize,
    pub recon_train: Vec<ImageRGB>,
    pub recon_val: Vec<ImageRGB>,
    pub history: Vec<AclRecord>,
    pub global_step: u64,
    pub main_done: bool,
    pub finetune_done: usize,
    pub finished: bool,
}

impl AclState {
    fn new(train: &[ImageRGB], val: &[ImageRGB]) -> Self {
        AclState {
            k: 0,
            recon_train: train.to_vec(),
            recon_val: val.to_vec(),
            history: Vec::new(),
            global_step: 0,
            main_done: false,
            finetune_done: 0,
            finished: false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RunSnapshot {
    hps: HyperParams,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct StateSnapshot {
    k: usize,
    history: Vec<AclRecord>,
    global_step: u64,
    main_done: bool,
    finetune_done: usize,
    finished: bool,
    adam: AdamScalars,
    scheduler: PlateauScheduler,
}

#[derive(Serialize)]
struct EpochRow {
    step: u64,
    k: usize,
    train_loss: f64,
    open_loop_val: f64,
    lr: f64,
}

#[derive(Serialize)]
struct AclRow {
    k: usize,
    finetune: bool,
    closed_loop_cost: f64,
    open_loop_cost: f64,
    closed_loop_bpp: f64,
    closed_loop_mse: f64,
    open_loop_bpp: f64,
    open_loop_mse: f64,
    sgd_steps: u64,
    lr: f64,
}

const CONFIG_FILE: &str = "config.json";
const EPOCHS_FILE: &str = "epochs.csv";
const ACL_FILE: &str = "acl.csv";
const SNAPSHOT_DIR: &str = "snapshot";
const LAST_GOOD_FILE: &str = "last_good.lbck";
const FINAL_FILE: &str = "final.lbck";

fn append_row<S: Serialize>(path: &Path, row: &S) -> Result<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Drives [`acl_train`]-style runs one iteration at a time, optionally
/// writing logs, checkpoints and resumable snapshots to a run directory.
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    opt: Adam,
    scheduler: PlateauScheduler,
    state: AclState,
    train: Vec<ImageRGB>,
    val: Vec<ImageRGB>,
    run_dir: Option<PathBuf>,
}

impl Trainer {
    /// A fresh run. The model's lambda is replaced by `config.lambda`.
    pub fn new(hps: HyperParams, config: TrainConfig, train: Vec<ImageRGB>, val: Vec<ImageRGB>) -> Result<Self> {
        config.validate()?;
        hps.validate()?;
        if !config.patch.is_multiple_of(hps.block) {
            return Err(Error::Config(format!(
                "patch {} is not a multiple of the block size {}",
                config.patch, hps.block
            )));
        }
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config("training and validation sets must be non-empty".into()));
        }
        let hps = HyperParams {
            lambda: config.lambda,
            ..hps
        };
        let model = Model::init(hps, config.seed)?;
        let opt = Adam::new(&model, config.lr_init);
        let scheduler = PlateauScheduler::new(
            config.lr_factor,
            config.lr_min,
            config.plateau_patience,
            config.plateau_threshold,
        );
        let state = AclState::new(&train, &val);
        Ok(Trainer {
            config,
            model,
            opt,
            scheduler,
            state,
            train,
            val,
            run_dir: None,
        })
    }

    /// Starts logging to `dir`, which must not already hold a run.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if dir.join(CONFIG_FILE).exists() {
            return Err(Error::Config(format!(
                "{} already holds a run; resume it or pick another directory",
                dir.display()
            )));
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let snap = RunSnapshot {
            hps: *self.model.hps(),
            config: self.config.clone(),
        };
        let json = serde_json::to_vec_pretty(&snap).map_err(|e| Error::Format(e.to_string()))?;
        write_file(&dir.join(CONFIG_FILE), &json)?;
        self.run_dir = Some(dir);
        Ok(self)
    }

    /// Reopens a run directory at its last completed iteration.
    pub fn resume(dir: impl Into<PathBuf>, train: Vec<ImageRGB>, val: Vec<ImageRGB>) -> Result<Self> {
        let dir = dir.into();
        let snap: RunSnapshot = serde_json::from_slice(&read_file(&dir.join(CONFIG_FILE))?)
            .map_err(|e| Error::Format(format!("{}: {e}", dir.join(CONFIG_FILE).display())))?;
        let mut t = Trainer::new(snap.hps, snap.config, train, val)?;
        let sdir = dir.join(SNAPSHOT_DIR);
        if sdir.exists() {
            t.load_snapshot(&sdir)?;
        }
        t.run_dir = Some(dir);
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn optimizer(&self) -> &Adam {
        &self.opt
    }

    pub fn state(&self) -> &AclState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    /// Runs iterations until the main loop has converged (or hit its cap) and
    /// the fine-tuning iterations are done.
    pub fn run(&mut self) -> Result<()> {
        while !self.state.finished {
            self.run_iteration()?;
        }
        Ok(())
    }

    /// One ACL iteration: open-loop SGD, closed- and open-loop validation,
    /// regeneration of both reconstruction sets.
    pub fn run_iteration(&mut self) -> Result<AclRecord> {
        if self.state.finished {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        let finetune = self.state.main_done;
        let start_step = self.state.global_step;
        self.sgd(finetune)?;

        let lambda = self.config.lambda;
        let closed = closed_loop_cost(&self.model, &self.val, lambda)?;
        let open = open_loop_cost(&self.model, &self.val, &self.state.recon_val, lambda)?;
        let record = AclRecord {
            k: self.state.k,
            finetune,
            closed_loop_cost: closed.cost,
            open_loop_cost: open.cost,
            closed_loop_bpp: closed.bpp,
            closed_loop_mse: closed.mse,
            open_loop_bpp: open.bpp,
            open_loop_mse: open.mse,
            sgd_steps: self.state.global_step - start_step,
            lr: self.opt.lr(),
        };

        self.state.recon_train = regenerate(&self.model, &self.train, &self.state.recon_train)?;
        self.state.recon_val = regenerate(&self.model, &self.val, &self.state.recon_val)?;
        self.state.history.push(record.clone());
        self.state.k += 1;
        if finetune {
            self.state.finetune_done += 1;
        } else if self.main_converged() || self.state.k >= self.config.acl_max_iters {
            self.state.main_done = true;
        }
        self.state.finished = self.state.main_done && self.state.finetune_done >= self.config.finetune_iters;

        if let Some(dir) = self.run_dir.clone() {
            append_row(
                &dir.join(ACL_FILE),
                &AclRow {
                    k: record.k,
                    finetune: record.finetune,
                    closed_loop_cost: record.closed_loop_cost,
                    open_loop_cost: record.open_loop_cost,
                    closed_loop_bpp: record.closed_loop_bpp,
                    closed_loop_mse: record.closed_loop_mse,
                    open_loop_bpp: record.open_loop_bpp,
                    open_loop_mse: record.open_loop_mse,
                    sgd_steps: record.sgd_steps,
                    lr: record.lr,
                },
            )?;
            let ckpt = dir.join("checkpoints");
            fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            self.model.save(ckpt.join(format!("acl_{:02}.lbck", record.k)))?;
            self.save_snapshot(&dir.join(SNAPSHOT_DIR))?;
            if self.state.finished {
                self.model.save(dir.join(FINAL_FILE))?;
            }
        }
        Ok(record)
    }

    fn main_converged(&self) -> bool {
        let main: Vec<f64> = self
            .state
            .history
            .iter()
            .filter(|r| !r.finetune)
            .map(|r| r.closed_loop_cost)
            .collect();
        if main.len() < self.config.acl_min_iters.max(3) {
            return false;
        }
        let rel = |a: f64, b: f64| (b - a).abs() / a.abs().max(f64::MIN_POSITIVE);
        let n = main.len();
        rel(main[n - 3], main[n - 2]) < self.config.acl_tolerance
            && rel(main[n - 2], main[n - 1]) < self.config.acl_tolerance
    }

    fn diverged(&mut self, step: u64, reason: String, good: (Model, Adam)) -> Error {
        self.model = good.0;
        self.opt = good.1;
        if let Some(dir) = &self.run_dir {
            if let Err(e) = self.model.save(dir.join(LAST_GOOD_FILE)) {
                return Error::Diverged {
                    step,
                    reason: format!("{reason}; saving the last good model also failed: {e}"),
                };
            }
        }
        Error::Diverged { step, reason }
    }

    /// SGD until the budget is spent or the open-loop validation cost stops
    /// improving.
    fn sgd(&mut self, finetune: bool) -> Result<()> {
        let cfg = self.config.clone();
        let block = self.model.hps().block;
        self.scheduler.reset();
        let mut good = (self.model.clone(), self.opt.clone());
        let mut best: Option<f64> = None;
        let mut stale = 0;
        let mut epoch = Vec::with_capacity(cfg.steps_per_epoch);
        for i in 0..cfg.sgd_steps_per_acl {
            let step = self.state.global_step;
            let mut rng = step_rng(cfg.seed, step);
            let result = crop_batch(&self.train, &self.state.recon_train, cfg.patch, cfg.batch, &mut rng)
                .and_then(|b| Ok((batch_to_blocks(&b.x, block)?, batch_to_blocks(&b.x_hat, block)?)))
                .and_then(|(x, c)| loss_and_grads(&self.model, &x, &c, cfg.lambda, finetune, &mut rng));
            let (loss, grads) = match result {
                Ok((l, _)) if !l.is_finite() => return Err(self.diverged(step, format!("loss is {l}"), good)),
                Ok(v) => v,
                Err(e @ (Error::NonFinite(_) | Error::Domain(_))) => {
                    return Err(self.diverged(step, e.to_string(), good))
                }
                Err(e) => return Err(e),
            };
            self.opt.step(&mut self.model, &grads)?;
            if !self.model.all_finite() {
                return Err(self.diverged(step, "parameters became non-finite".into(), good));
            }
            self.state.global_step += 1;
            epoch.push(loss);

            if epoch.len() == cfg.steps_per_epoch || i + 1 == cfg.sgd_steps_per_acl {
                let train_loss = epoch.iter().sum::<f64>() / epoch.len() as f64;
                epoch.clear();
                let val = open_loop_cost(&self.model, &self.val, &self.state.recon_val, cfg.lambda)?.cost;
                if !val.is_finite() {
                    return Err(self.diverged(step, format!("validation cost is {val}"), good));
                }
                if let Some(dir) = &self.run_dir {
                    append_row(
                        &dir.join(EPOCHS_FILE),
                        &EpochRow {
                            step: self.state.global_step,
                            k: self.state.k,
                            train_loss,
                            open_loop_val: val,
                            lr: self.opt.lr(),
                        },
                    )?;
                }
                let lr = self.scheduler.observe(val, self.opt.lr());
                self.opt.set_lr(lr);
                good = (self.model.clone(), self.opt.clone());
                if best.is_none_or(|b| val < b - cfg.plateau_threshold * b.abs()) {
                    best = Some(val);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.early_stop_epochs {
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    fn save_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save(dir.join("model.lbck"))?;
        let mut adam = Vec::new();
        write_tensor_map(&mut adam, &self.opt.m)?;
        write_tensor_map(&mut adam, &self.opt.v)?;
        write_file(&dir.join("adam.bin"), &adam)?;
        let mut recon = BTreeMap::new();
        for (set, images) in [("train", &self.state.recon_train), ("val", &self.state.recon_val)] {
            for (i, img) in images.iter().enumerate() {
                recon.insert(format!("{set}/{i:06}"), img.tensor().clone());
            }
        }
        let mut bytes = Vec::new();
        write_tensor_map(&mut bytes, &recon)?;
        write_file(&dir.join("recon.bin"), &bytes)?;
        let s = &self.state;
        let snap = StateSnapshot {
            k: s.k,
            history: s.history.clone(),
            global_step: s.global_step,
            main_done: s.main_done,
            finetune_done: s.finetune_done,
            finished: s.finished,
            adam: self.opt.scalars(),
            scheduler: self.scheduler.clone(),
        };
        let json = serde_json::to_vec_pretty(&snap).map_err(|e| Error::Format(e.to_string()))?;
        write_file(&dir.join("state.json"), &json)
    }

    fn load_snapshot(&mut self, dir: &Path) -> Result<()> {
        let model = Model::load(dir.join("model.lbck"))?;
        if model.hps() != self.model.hps() {
            return Err(Error::Format("snapshot model does not match the run configuration".into()));
        }
        let bytes = read_file(&dir.join("adam.bin"))?;
        let mut r = Reader::new(&bytes);
        let m = read_tensor_map(&mut r)?;
        let v = read_tensor_map(&mut r)?;
        let snap: StateSnapshot = serde_json::from_slice(&read_file(&dir.join("state.json"))?)
            .map_err(|e| Error::Format(format!("snapshot state: {e}")))?;
        let bytes = read_file(&dir.join("recon.bin"))?;
        let mut recon = read_tensor_map::<f32>(&mut Reader::new(&bytes))?;
        let mut take = |set: &str, like: &[ImageRGB]| -> Result<Vec<ImageRGB>> {
            (0..like.len())
                .map(|i| {
                    let t = recon
                        .remove(&format!("{set}/{i:06}"))
                        .ok_or_else(|| Error::Format(format!("snapshot lacks {set} reconstruction {i}")))?;
                    if t.shape() != like[i].tensor().shape() {
                        return Err(Error::Format(format!("{set} reconstruction {i} has the wrong size")));
                    }
                    ImageRGB::new(t)
                })
                .collect()
        };
        let recon_train = take("train", &self.train)?;
        let recon_val = take("val", &self.val)?;
        if !recon.is_empty() {
            return Err(Error::Format("snapshot holds more reconstructions than the data sets".into()));
        }
        let same_shapes = model.params().iter().all(|(k, p)| {
            m.get(k).is_some_and(|t| t.shape() == p.shape()) && v.get(k).is_some_and(|t| t.shape() == p.shape())
        });
        if !same_shapes || m.len() != model.params().len() || v.len() != model.params().len() {
            return Err(Error::Format("optimizer snapshot does not match the model".into()));
        }
        self.model = model;
        self.opt = Adam::from_parts(m, v, snap.adam);
        self.scheduler = snap.scheduler;
        self.state = AclState {
            k: snap.k,
            recon_train,
            recon_val,
            history: snap.history,
            global_step: snap.global_step,
            main_done: snap.main_done,
            finetune_done: snap.finetune_done,
            finished: snap.finished,
        };
        Ok(())
    }
}

/// Runs the whole procedure in memory and returns the final model and state.
pub fn acl_train(
    hps: HyperParams,
    config: TrainConfig,
    train: Vec<ImageRGB>,
    val: Vec<ImageRGB>,
) -> Result<(Model, AclState)> {
    let mut t = Trainer::new(hps, config, train, val)?;
    t.run()?;
    Ok((t.model, t.state))
}
