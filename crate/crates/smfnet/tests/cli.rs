use std::path::Path;
use std::process::{Command, Output};

fn smfnet(out_root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smfnet"))
        .env("SMFNET_OUT", out_root)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn end_to_end_on_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    std::fs::write(root.join("seq.kv"), "sequence = walk\nframes = 4\nsize = 32x32\nseed = 3\n").unwrap();
    std::fs::write(root.join("train.kv"), "steps = 3\ninput_size = 32x32\n").unwrap();

    ok(smfnet(root, &["fixtures", "--spec", &p("seq.kv")]));
    assert!(root.join("fixtures/walk/GT/00003.png").exists());

    for stage in ["depth", "flow", "rgb"] {
        ok(smfnet(root, &["pretrain", "--stage", stage, "--data", &p("fixtures"), "--config", &p("train.kv")]));
    }
    for stage in ["pretrain_depth", "pretrain_flow", "pretrain_rgb"] {
        assert!(root.join(format!("{stage}.ckpt")).exists());
        let log = std::fs::read_to_string(root.join(format!("{stage}.log.jsonl"))).unwrap();
        assert_eq!(log.lines().count(), 3);
    }
    ok(smfnet(root, &["train", "--data", &p("fixtures"), "--config", &p("train.kv")]));
    assert!(root.join("finetune.ckpt").exists());

    let table = ok(smfnet(
        root,
        &["eval", "--checkpoint", &p("finetune.ckpt"), "--data", &p("fixtures"), "--size", "32x32", "--format", "csv"],
    ));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "dataset,s_alpha,f_beta_max,mae");
    assert!(lines[1].starts_with("fixtures,"));

    ok(smfnet(root, &["infer", "--checkpoint", &p("finetune.ckpt"), "--data", &p("fixtures"), "--size", "32x32"]));
    // the test split holds frames 0..=2
    assert!(root.join("predictions/walk/00002.png").exists());
    assert!(!root.join("predictions/walk/00003.png").exists());

    let sw = ok(smfnet(
        root,
        &["visualize-sw", "--checkpoint", &p("finetune.ckpt"), "--data", &p("fixtures"), "--size", "32x32"],
    ));
    assert!(sw.starts_with("mean SW"));
    assert!(root.join("sw/sw5.png").exists());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let missing = root.join("nothing");
    let out = smfnet(root, &["pretrain", "--stage", "depth", "--data", &missing.to_string_lossy()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // fine-tuning without pre-trained streams is refused
    std::fs::write(root.join("seq.kv"), "frames = 2\n").unwrap();
    ok(smfnet(root, &["fixtures", "--spec", &root.join("seq.kv").to_string_lossy()]));
    let out = smfnet(root, &["train", "--data", &root.join("fixtures").to_string_lossy()]);
    assert!(!out.status.success());

    let out = smfnet(root, &["pretrain", "--stage", "finetune", "--data", "x"]);
    assert!(!out.status.success());
}
