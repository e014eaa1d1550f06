use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[network]
height = 32
width = 32
segments = 4
widths = [4, 8, 8, 8]

[sampler]
patch_size = 32
background_stride = 16

[dataset]
train_scenes = 2
eval_scenes = 1
n_train = 10
n_eval = 6

[dataset.scene]
height = 96
width = 96
levee_fields = 2
plain_fields = 1
field_size_min = 28
field_size_max = 40

[train]
epochs = 1

[eval]
overlays = false

[sweep]
strides = [16, 32]
lambda_patches = 4

[sweep.lambda_train]
epochs = 1
"#;

fn votenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_votenet")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), format!("{TINY}{extra}")).unwrap();
    dir
}

fn manifest_rows(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("data/manifest.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn help_and_bad_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&votenet(dir.path(), &["--help"])), 0);
    assert_eq!(code(&votenet(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&votenet(dir.path(), &["sweep", "--kind", "sideways"])), 1);
}

#[test]
fn invalid_config_exits_one() {
    let dir = setup("");
    std::fs::write(dir.path().join("bad.toml"), "[network]\nsegmnts = 4\n").unwrap();
    let out = votenet(dir.path(), &["--config", "bad.toml", "synth"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("segmnts"));
    std::fs::write(dir.path().join("bad.toml"), "[sampler]\npatch_size = 48\n").unwrap();
    assert_eq!(code(&votenet(dir.path(), &["--config", "bad.toml", "synth"])), 1);
}

#[test]
fn synth_is_deterministic_and_manifest_matches_files() {
    let a = setup("");
    let b = setup("");
    for d in [&a, &b] {
        let out = votenet(d.path(), &["--config", "run.toml", "synth"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let rows = manifest_rows(a.path());
    assert_eq!(rows.len(), 16);
    assert_eq!(rows, manifest_rows(b.path()));
    for row in &rows {
        let stem = row.split('\t').next_back().unwrap();
        let image_a = std::fs::read(a.path().join("data").join(format!("{stem}.image.png"))).unwrap();
        let image_b = std::fs::read(b.path().join("data").join(format!("{stem}.image.png"))).unwrap();
        assert_eq!(image_a, image_b, "{stem}");
    }
    let pngs = std::fs::read_dir(a.path().join("data/patches")).unwrap().count();
    assert_eq!(pngs, 2 * rows.len(), "one image and one mask per row");

    let other = votenet(b.path(), &["--config", "run.toml", "--seed", "6", "--data", "data6", "synth"]);
    assert_eq!(code(&other), 0);
    let differs = std::fs::read_to_string(b.path().join("data6/manifest.tsv")).unwrap()
        != std::fs::read_to_string(b.path().join("data/manifest.tsv")).unwrap();
    assert!(differs, "a different seed should change the dataset");
}

#[test]
fn zero_patches_gives_an_empty_manifest() {
    let dir = setup("");
    let cfg = std::fs::read_to_string(dir.path().join("run.toml")).unwrap();
    let cfg = cfg.replace("n_train = 10", "n_train = 0").replace("n_eval = 6", "n_eval = 0");
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let out = votenet(dir.path(), &["--config", "run.toml", "synth"]);
    assert_eq!(code(&out), 0);
    assert!(manifest_rows(dir.path()).is_empty());
    let text = std::fs::read_to_string(dir.path().join("data/manifest.tsv")).unwrap();
    assert!(text.starts_with("#patch_id\tsource_scene\tcenter_x\tcenter_y\trotation_deg\tclass\tpath"));
}

#[test]
fn gradcheck_passes_and_injected_bug_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ok = votenet(dir.path(), &["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let csv = std::fs::read_to_string(dir.path().join("out/gradcheck.csv")).unwrap();
    assert!(csv.starts_with("check,max_rel_error,checked,passed\n"));
    let bad = votenet(dir.path(), &["gradcheck", "--inject-bug"]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("injected_faulty_square"));
}

#[test]
fn train_eval_sweep_render_pipeline() {
    let dir = setup("");
    let p = dir.path();
    assert_eq!(code(&votenet(p, &["--config", "run.toml", "eval"])), 1, "eval without a checkpoint");
    assert_eq!(code(&votenet(p, &["--config", "run.toml", "synth"])), 0);

    let train = votenet(p, &["--config", "run.toml", "train"]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    let log = std::fs::read_to_string(p.join("out/train_log.csv")).unwrap();
    assert!(log.starts_with("step,L_c,L_r,total,epoch,lr\n"));
    assert_eq!(log.lines().count(), 1 + 10);
    assert!(p.join("out/model.ckpt").exists());

    let eval = votenet(p, &["--config", "run.toml", "eval"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let metrics = std::fs::read_to_string(p.join("out/eval_metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "split,postprocess,patches,accuracy,ber,f1");
    assert!(lines[1].starts_with("eval,off,6,") && lines[2].starts_with("eval,on,6,"));

    let stride = votenet(p, &["--config", "run.toml", "sweep", "--kind", "stride"]);
    assert_eq!(code(&stride), 0, "{}", String::from_utf8_lossy(&stride.stderr));
    let table = std::fs::read_to_string(p.join("out/stride_sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "Stride,#,Accuracy,BER,F1");
    // 96 px scene, 32 px window: stride 16 → 5×5 windows, stride 32 → 3×3
    assert!(rows[1].starts_with("16,25,") && rows[2].starts_with("32,9,"), "{rows:?}");
    assert!(String::from_utf8_lossy(&stride.stdout).contains("best stride"));

    let lambda = votenet(p, &["--config", "run.toml", "sweep", "--kind", "lambda"]);
    assert_eq!(code(&lambda), 0, "{}", String::from_utf8_lossy(&lambda.stderr));
    let table = std::fs::read_to_string(p.join("out/lambda_ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(table.lines().nth(1).unwrap().starts_with("Baseline,,"));

    let render = votenet(p, &["--config", "run.toml", "render", "--postprocess"]);
    assert_eq!(code(&render), 0, "{}", String::from_utf8_lossy(&render.stderr));
    assert!(p.join("out/render/eval_scene_000.png").exists());

    // a checkpoint trained with 4 segments cannot run a 5-segment config
    std::fs::write(p.join("other.toml"), TINY.replace("segments = 4", "segments = 5")).unwrap();
    let mismatch = votenet(p, &["--config", "other.toml", "eval"]);
    assert_eq!(code(&mismatch), 1);
    let msg = String::from_utf8_lossy(&mismatch.stderr);
    assert!(msg.contains("head_s"), "{msg}");
}

#[test]
fn zero_epochs_writes_untrained_checkpoint() {
    let dir = setup("");
    let cfg = std::fs::read_to_string(dir.path().join("run.toml")).unwrap().replacen("epochs = 1", "epochs = 0", 1);
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    assert_eq!(code(&votenet(dir.path(), &["--config", "run.toml", "synth"])), 0);
    assert_eq!(code(&votenet(dir.path(), &["--config", "run.toml", "train"])), 0);
    let log = std::fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(dir.path().join("out/model.ckpt").exists());
}

#[test]
fn sample_subcommand_reads_a_scene() {
    let dir = setup("");
    let p = dir.path();
    assert_eq!(code(&votenet(p, &["--config", "run.toml", "synth"])), 0);
    let out = votenet(p, &["--config", "run.toml", "sample", "--scene", "data/scenes/train_scene_000"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let plain =
        std::fs::read_to_string(p.join("out/manifest.tsv")).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    let out = votenet(
        p,
        &["--config", "run.toml", "--out", "aug", "sample", "--scene", "data/scenes/train_scene_000", "--augment"],
    );
    assert_eq!(code(&out), 0);
    let augmented =
        std::fs::read_to_string(p.join("aug/manifest.tsv")).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert!(plain > 0);
    assert_eq!(augmented, 37 * plain);
    let missing = votenet(p, &["--config", "run.toml", "sample", "--scene", "data/scenes/nope"]);
    assert_eq!(code(&missing), 2);
}
