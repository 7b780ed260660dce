//! Trains the toy model with the asymptotic closed loop schedule on
//! synthetic images and prints the open and closed loop validation costs of
//! every iteration. Takes a few minutes in a release build.
//!
//! Usage: `acl_training [run_dir]`. With a run directory the trainer writes
//! its CSV logs, checkpoints and resumable snapshots there.

use std::time::Instant;

use lbc::layers::HyperParams;
use lbc::synth::synthetic_set;
use lbc::training::{TrainConfig, Trainer};

fn main() -> lbc::Result<()> {
    let train = synthetic_set(16, 96, 96, 100);
    let val = synthetic_set(4, 96, 96, 200);
    let config = TrainConfig::toy();
    let hps = HyperParams::new(8, 48, 8, 1, config.lambda)?;

    let mut trainer = Trainer::new(hps, config, train, val)?;
    if let Some(dir) = std::env::args().nth(1) {
        trainer = trainer.with_run_dir(dir)?;
    }

    let start = Instant::now();
    println!("  k        closed    open     gap   steps      lr");
    while !trainer.is_finished() {
        let r = trainer.run_iteration()?;
        println!(
            "{:>3}{:<4} {:>8.4} {:>7.4} {:>7.4} {:>7} {:>7.1e}   ({:.0}s)",
            r.k,
            if r.finetune { " ft" } else { "" },
            r.closed_loop_cost,
            r.open_loop_cost,
            r.closed_loop_cost - r.open_loop_cost,
            r.sgd_steps,
            r.lr,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
