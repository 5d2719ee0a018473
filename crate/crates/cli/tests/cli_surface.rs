//! End-to-end tests of the command-line surface, driving the built binary.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metaslot"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("metaslot-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config_text(aggregator: &str, steps: usize) -> String {
    format!(
        "aggregator = {aggregator}\n\
         steps = {steps}\n\
         batch_size = 2\n\
         scene_height = 8\n\
         scene_width = 8\n\
         min_objects = 1\n\
         max_objects = 2\n\
         k_max = 3\n\
         k_protos = 6\n\
         iterations = 2\n\
         sa_hidden = 8\n\
         decoder_hidden = 12\n\
         eval_every = 50\n\
         eval_scenes = 4\n"
    )
}

#[test]
fn gradcheck_command_exits_zero() {
    let out = bin().arg("gradcheck").output().unwrap();
    assert!(out.status.success(), "gradcheck failed: {out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("all pass"), "{text}");
}

#[test]
fn unknown_command_exits_nonzero() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = bin().args(["train"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--config"), "{err}");
}

#[test]
fn train_eval_export_compare_round_trip() {
    let dir = tmp_dir("roundtrip");
    let cfg_path = dir.join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_config_text("metaslot", 8)).unwrap();
    let run_dir = dir.join("run");

    let out = bin()
        .env("METASLOT_LOG", "0")
        .args([
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            run_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {out:?}");
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("aggregate n=4"), "{report}");
    assert!(run_dir.join("checkpoint.bin").exists());
    assert!(run_dir.join("report.txt").exists());
    assert!(run_dir.join("config.txt").exists());

    // the report file matches stdout
    let saved = std::fs::read_to_string(run_dir.join("report.txt")).unwrap();
    assert_eq!(saved, report.as_ref());

    // eval twice: identical output
    let ckpt = run_dir.join("checkpoint.bin");
    let eval1 = bin()
        .env("METASLOT_LOG", "0")
        .args(["eval", "--ckpt", ckpt.to_str().unwrap(), "--n", "3"])
        .output()
        .unwrap();
    assert!(eval1.status.success());
    let eval2 = bin()
        .env("METASLOT_LOG", "0")
        .args(["eval", "--ckpt", ckpt.to_str().unwrap(), "--n", "3"])
        .output()
        .unwrap();
    assert_eq!(eval1.stdout, eval2.stdout);

    // mask export writes pgm pairs plus sidecars
    let masks = dir.join("masks");
    let out = bin()
        .env("METASLOT_LOG", "0")
        .args([
            "export-masks",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--out",
            masks.to_str().unwrap(),
            "--n",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "export failed: {out:?}");
    assert!(masks.join("scene_000_gt.pgm").exists());
    assert!(masks.join("scene_001_pred.pgm").exists());
    assert!(masks.join("scene_001.txt").exists());

    // compare over two configs and one seed emits run and summary records
    let cfg2_path = dir.join("tiny_baseline.cfg");
    std::fs::write(&cfg2_path, tiny_config_text("learned_query_sa", 8)).unwrap();
    let out = bin()
        .env("METASLOT_LOG", "0")
        .args([
            "compare",
            "--configs",
            &format!("{},{}", cfg_path.display(), cfg2_path.display()),
            "--seeds",
            "1",
            "--out",
            dir.join("cmp").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "compare failed: {out:?}");
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("run config=tiny seed="), "{table}");
    assert!(table.contains("summary config=tiny_baseline seeds=1"), "{table}");
    assert!(dir.join("cmp/comparison.txt").exists());

    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tmp_dir("badcfg");
    let cfg_path = dir.join("bad.cfg");
    std::fs::write(&cfg_path, "definitely_not_a_key = 1\n").unwrap();
    let out = bin()
        .args(["train", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key"), "{err}");
    let _ = std::fs::remove_dir_all(dir);
}
