//! Rate-distortion table for a set of checkpoints over a directory of images.
//!
//! Usage: `rd_eval <image_dir> <model.lbck>...`
//!
//! Without arguments, two small models are trained briefly at different
//! rate-distortion trade-offs and evaluated on synthetic images.

use lbc::eval::{evaluate, write_csv};
use lbc::image_io::load_dir;
use lbc::layers::{HyperParams, Model};
use lbc::synth::synthetic_set;
use lbc::training::{acl_train, TrainConfig};

fn quick_model(lambda: f64) -> lbc::Result<Model> {
    let config = TrainConfig {
        lambda,
        sgd_steps_per_acl: 1500,
        early_stop_epochs: 20,
        acl_min_iters: 2,
        acl_max_iters: 2,
        finetune_iters: 0,
        ..TrainConfig::toy()
    };
    let hps = HyperParams::new(8, 32, 8, 1, lambda)?;
    let train = synthetic_set(8, 96, 96, 10);
    let val = synthetic_set(2, 96, 96, 20);
    Ok(acl_train(hps, config, train, val)?.0)
}

fn main() -> lbc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, models) = if args.len() >= 2 {
        let models = args[1..]
            .iter()
            .map(|p| Ok((p.clone(), Model::load(p)?)))
            .collect::<lbc::Result<Vec<_>>>()?;
        (load_dir(&args[0])?, models)
    } else {
        let images = synthetic_set(3, 80, 80, 30)
            .into_iter()
            .enumerate()
            .map(|(i, img)| (format!("synthetic_{i}"), img))
            .collect();
        let mut models = Vec::new();
        for lambda in [0.0035, 0.0483] {
            println!("training a small model at lambda = {lambda}");
            models.push((format!("lambda_{lambda}"), quick_model(lambda)?));
        }
        (images, models)
    };

    let rows = evaluate(&models, &images)?;
    write_csv(std::io::stdout(), &rows)?;
    Ok(())
}
