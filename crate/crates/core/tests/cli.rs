mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{model, noise_image};
use lbc::codec::Codec;
use lbc::eval::{read_csv, AVERAGE_LABEL};
use lbc::image_io::{load_image, save_image};
use lbc::layers::Model;
use lbc::synth::synthetic_set;
use lbc::tensor::Tensor;

fn lbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbc")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn saved_model(dir: &Path, name: &str, lambda_index: usize) -> (std::path::PathBuf, Model) {
    let mut m = model(8, 16, 4, 1, 9);
    m.set_lambda(lbc::layers::LAMBDAS[lambda_index]).unwrap();
    m.set_param("ts.conv3.bias", Tensor::full(&[192], 0.5)).unwrap();
    let path = dir.join(name);
    m.save(&path).unwrap();
    (path, m)
}

#[test]
fn encode_decode_roundtrip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (mpath, m) = saved_model(dir.path(), "m.lbck", 3);
    let img = noise_image(20, 27, 1).quantize_8bit();
    let src = dir.path().join("in.png");
    save_image(&img, &src).unwrap();
    let bin = dir.path().join("x.lbc");
    let out = dir.path().join("out.png");

    let o = lbc(&["encode", "-m", p(&mpath), "-i", p(&src), "-o", p(&bin)]);
    assert!(o.status.success(), "{o:?}");
    let size = std::fs::metadata(&bin).unwrap().len() as f64;
    let printed: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("bpp "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((printed - 8.0 * size / (20.0 * 27.0)).abs() < 1e-6);

    let o = lbc(&["decode", "-m", p(&mpath), "-i", p(&bin), "-o", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let bytes = std::fs::read(&bin).unwrap();
    let in_memory = Codec::new(&m).unwrap().decode(&bytes).unwrap().image;
    assert_eq!(load_image(&out).unwrap(), in_memory.quantize_8bit());

    let o = lbc(&["info", "-i", p(&bin)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("27x20"), "{text}");
    assert!(text.contains(&format!("{:016x}", m.checksum().unwrap())));
}

#[test]
fn wrong_model_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (m3, _) = saved_model(dir.path(), "a.lbck", 3);
    let (m4, _) = saved_model(dir.path(), "b.lbck", 4);
    let src = dir.path().join("in.ppm");
    save_image(&noise_image(16, 16, 2), &src).unwrap();
    let bin = dir.path().join("x.lbc");
    assert!(lbc(&["encode", "-m", p(&m3), "-i", p(&src), "-o", p(&bin)]).status.success());
    let o = lbc(&["decode", "-m", p(&m4), "-i", p(&bin), "-o", p(&dir.path().join("o.png"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn eval_writes_detail_and_average_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (mpath, _) = saved_model(dir.path(), "m.lbck", 2);
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    save_image(&noise_image(16, 24, 3), data.join("a.png")).unwrap();
    let csv = dir.path().join("rd.csv");
    let o = lbc(&["eval", "-m", p(&mpath), "-d", p(&data), "-o", p(&csv)]);
    assert!(o.status.success(), "{o:?}");
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].image, AVERAGE_LABEL);
    assert_eq!((rows[0].bpp, rows[0].psnr), (rows[1].bpp, rows[1].psnr));
    assert_eq!(rows[0].model, "m");
}

#[test]
fn exit_codes() {
    assert_eq!(lbc(&[]).status.code(), Some(1));
    assert_eq!(lbc(&["compress"]).status.code(), Some(1));
    assert_eq!(lbc(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.lbck");
    let o = lbc(&["info", "-i", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    let junk = dir.path().join("junk.lbc");
    std::fs::write(&junk, b"not a bitstream at all, clearly").unwrap();
    assert_eq!(lbc(&["info", "-i", p(&junk)]).status.code(), Some(2));
}

fn write_dataset(dir: &Path, count: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in synthetic_set(count, 16, 16, seed).iter().enumerate() {
        save_image(img, dir.join(format!("{i:02}.png"))).unwrap();
    }
}

const TINY_RUN: &str = r#"
train_dir = "train"
val_dir = "val"
run_dir = "run"

[model]
block = 4
n = 8
m = 2
k2 = 1

[train]
lambda = 0.01
patch = 8
batch = 2
lr_init = 0.001
steps_per_epoch = 2
sgd_steps_per_acl = 4
acl_min_iters = 3
acl_max_iters = 3
finetune_iters = 0
seed = 3
"#;

#[test]
fn train_writes_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("train"), 3, 10);
    write_dataset(&dir.path().join("val"), 2, 20);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY_RUN).unwrap();

    let o = lbc(&["train", "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let acl = std::fs::read_to_string(run.join("acl.csv")).unwrap();
    assert!(acl.lines().count() > 3, "{acl}");
    assert!(acl.lines().next().unwrap().starts_with("k,finetune,closed_loop_cost,open_loop_cost"));
    let epochs = std::fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert!(epochs.lines().next().unwrap().starts_with("step,k,train_loss,open_loop_val,lr"));
    Model::<f32>::load(run.join("final.lbck")).unwrap();

    let again = lbc(&["train", "--config", p(&cfg)]);
    assert_eq!(again.status.code(), Some(1));
    let resumed = lbc(&["train", "--config", p(&cfg), "--resume"]);
    assert!(resumed.status.success());
    assert_eq!(stdout(&resumed).lines().filter(|l| l.starts_with("iteration")).count(), 3);
}

#[test]
fn train_reports_missing_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY_RUN).unwrap();
    let o = lbc(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "train_dir = 3").unwrap();
    assert_eq!(lbc(&["train", "--config", p(&bad)]).status.code(), Some(1));
}
