//! Command-line front end: `train`, `encode`, `decode`, `eval` and `info`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::codec::{BitstreamHeader, Codec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_csv};
use crate::image_io::{load_dir, load_image, save_image};
use crate::layers::{HyperParams, Model};
use crate::training::{AclRecord, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "lbc", version, about = "Learned block-based image codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model with the asymptotic closed loop procedure.
    Train {
        /// Run configuration (TOML, or JSON with a .json extension).
        #[arg(long)]
        config: PathBuf,
        /// Continue the run in the configured run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Compress an image.
    Encode {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decompress a bitstream to an 8-bit image.
    Decode {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Rate-distortion table of one or more models over a directory of images.
    Eval {
        #[arg(short, long, num_args = 1.., required = true)]
        model: Vec<PathBuf>,
        #[arg(short, long)]
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print a bitstream header.
    Info {
        #[arg(short, long)]
        input: PathBuf,
    },
}

/// Network shape of a training run. `preset = "hps1"` or `"hps2"` overrides
/// `n`, `m` and `k2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Option<String>,
    pub block: usize,
    pub n: usize,
    pub m: usize,
    pub k2: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: None,
            block: 8,
            n: 48,
            m: 8,
            k2: 1,
        }
    }
}

impl ModelConfig {
    pub fn hyper_params(&self, lambda: f64) -> Result<HyperParams> {
        let (n, m, k2) = match self.preset.as_deref() {
            None => (self.n, self.m, self.k2),
            Some("hps1") => (768, 96, 1),
            Some("hps2") => (1152, 128, 3),
            Some(other) => return Err(Error::Config(format!("unknown model preset {other:?}"))),
        };
        HyperParams::new(self.block, n, m, k2, lambda).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Contents of a `train --config` file. Relative paths are resolved against
/// the directory holding the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_dir: PathBuf,
    pub val_dir: PathBuf,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.train_dir, &mut cfg.val_dir, &mut cfg.run_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

fn load_images(dir: &Path) -> Result<Vec<crate::blocks::ImageRGB>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(load_dir(dir)?.into_iter().map(|(_, img)| img).collect())
}

fn print_record(out: &mut impl Write, r: &AclRecord) {
    let _ = writeln!(
        out,
        "iteration {:>2}{}  closed {:.4}  open {:.4}  bpp {:.4}  mse {:.2}  steps {}  lr {:.2e}",
        r.k,
        if r.finetune { " (fine-tune)" } else { "" },
        r.closed_loop_cost,
        r.open_loop_cost,
        r.closed_loop_bpp,
        r.closed_loop_mse,
        r.sgd_steps,
        r.lr
    );
}

fn train(config: &Path, resume: bool, out: &mut impl Write) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let train = load_images(&cfg.train_dir)?;
    let val = load_images(&cfg.val_dir)?;
    let mut trainer = if resume {
        Trainer::resume(&cfg.run_dir, train, val)?
    } else {
        let hps = cfg.model.hyper_params(cfg.train.lambda)?;
        Trainer::new(hps, cfg.train.clone(), train, val)?.with_run_dir(&cfg.run_dir)?
    };
    for r in &trainer.state().history {
        print_record(out, r);
    }
    while !trainer.is_finished() {
        let r = trainer.run_iteration()?;
        print_record(out, &r);
    }
    let _ = writeln!(out, "final model: {}", cfg.run_dir.join("final.lbck").display());
    Ok(())
}

fn encode(model: &Path, input: &Path, output: &Path, out: &mut impl Write) -> Result<()> {
    let model = Model::load(model)?;
    let img = load_image(input)?;
    let enc = Codec::new(&model)?.encode(&img)?;
    std::fs::write(output, &enc.bytes).map_err(|e| Error::io(output, e))?;
    let s = &enc.stats;
    let _ = writeln!(out, "bytes {}", enc.bytes.len());
    let _ = writeln!(out, "bpp {:.6}", s.bpp);
    let _ = writeln!(out, "estimated_bpp {:.6}", s.estimated_bpp);
    let _ = writeln!(out, "psnr {:.4}", s.psnr);
    Ok(())
}

fn decode(model: &Path, input: &Path, output: &Path, out: &mut impl Write) -> Result<()> {
    let model = Model::load(model)?;
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    let dec = Codec::new(&model)?.decode(&bytes)?;
    save_image(&dec.image, output)?;
    let _ = writeln!(out, "wrote {}x{} image to {}", dec.image.width(), dec.image.height(), output.display());
    Ok(())
}

fn eval(models: &[PathBuf], dir: &Path, output: &Path, out: &mut impl Write) -> Result<()> {
    let models = models
        .iter()
        .map(|p| {
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((label, Model::load(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let images = load_dir(dir)?;
    let rows = evaluate(&models, &images)?;
    let file = std::fs::File::create(output).map_err(|e| Error::io(output, e))?;
    write_csv(file, &rows)?;
    for r in rows.iter().filter(|r| r.image == crate::eval::AVERAGE_LABEL) {
        let _ = writeln!(out, "{}: {:.4} bpp, {:.2} dB", r.model, r.bpp, r.psnr);
    }
    Ok(())
}

fn info(input: &Path, out: &mut impl Write) -> Result<()> {
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    let (h, _) = BitstreamHeader::parse(&bytes)?;
    let (hb, wb) = h.grid();
    let _ = writeln!(out, "format version   {}", h.version);
    let _ = writeln!(out, "hyper-parameters {}", h.hps_id);
    let _ = writeln!(out, "lambda index     {}", h.lambda_index);
    let _ = writeln!(out, "block size       {}", h.block);
    let _ = writeln!(out, "image            {}x{}", h.orig_w, h.orig_h);
    let _ = writeln!(out, "padded           {}x{}", h.padded_w, h.padded_h);
    let _ = writeln!(out, "block grid       {wb}x{hb}");
    let _ = writeln!(out, "model checksum   {:016x}", h.model_checksum);
    let _ = writeln!(out, "payload bytes    {}", h.payload_len);
    Ok(())
}

/// Executes a parsed command.
pub fn execute(cli: &Cli, out: &mut impl Write) -> Result<()> {
    match &cli.command {
        Command::Train { config, resume } => train(config, *resume, out),
        Command::Encode { model, input, output } => encode(model, input, output, out),
        Command::Decode { model, input, output } => decode(model, input, output, out),
        Command::Eval { model, dir, output } => eval(model, dir, output, out),
        Command::Info { input } => info(input, out),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 success, 1 usage or configuration error, 2 data
/// error, 3 internal error.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
