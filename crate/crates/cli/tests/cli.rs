use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "data": {"n_gedi_like": 40, "n_plot_like": 40},
  "model": {
    "concept": {"encoder_channels": 4, "width": 8, "decoder_channels": 4, "position_channels": 4, "pyramid_scales": [1, 2]},
    "aggregator": {"encoder_channels": 4, "width": 8, "decoder_channels": 4, "pyramid_scales": [1, 2]}
  },
  "pretrain": {"epochs": 2, "batch_size": 8, "base_lr": 0.003, "eval_every": 1},
  "finetune": {"epochs": 2, "batch_size": 8, "base_lr": 0.003, "eval_every": 1}
}"#;

fn pgcbm(args: &[&str], out: &Path, config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pgcbm"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn ok_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn synth_with_defaults_is_stable_and_creates_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/run");
    let a = ok_json(&pgcbm(&["synth"], &out, None));
    for f in ["dataset.pgcb", "norm_stats.json", "split.json", "resolved_config.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let b = ok_json(&pgcbm(&["synth"], &out, None));
    assert_eq!(a["dataset_checksum"], b["dataset_checksum"]);
    assert_eq!(a["records"], 800);
    let frac = a["ood_fraction"].as_f64().unwrap();
    assert!((0.2..=0.45).contains(&frac));
}

#[test]
fn malformed_config_exits_with_code_two_and_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"seed\": 3,\n  \"data\": {\n}").unwrap();
    let o = pgcbm(&["synth"], &dir.path().join("o"), Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 4") && e.contains("column"), "{e}");

    std::fs::write(&cfg, r#"{"sed": 3}"#).unwrap();
    let o = pgcbm(&["synth"], &dir.path().join("o"), Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sed"));
}

#[test]
fn unknown_variant_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    ok_json(&pgcbm(&["synth"], &out, Some(&cfg)));
    let o = pgcbm(&["finetune", "--variant", "oracle"], &out, Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stages_name_their_missing_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");

    let o = pgcbm(&["pretrain"], &out, Some(&cfg));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("synth"));

    ok_json(&pgcbm(&["synth"], &out, Some(&cfg)));
    ok_json(&pgcbm(&["pretrain", "--attribute", "height"], &out, Some(&cfg)));
    ok_json(&pgcbm(&["pretrain", "--attribute", "stems"], &out, Some(&cfg)));
    let o = pgcbm(&["finetune", "--variant", "pgcbm"], &out, Some(&cfg));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("cover"), "{}", stderr(&o));

    // The black box trains without any concept checkpoint.
    ok_json(&pgcbm(&["finetune", "--variant", "blackbox"], &out, Some(&cfg)));

    let o = pgcbm(&["compare"], &out, Some(&cfg));
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    assert!(e.contains("pgcbm") && e.contains("vanilla") && !e.contains("blackbox.pgck"), "{e}");
}

#[test]
fn full_pipeline_is_reproducible_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    ok_json(&pgcbm(&["synth", "--seed", "5"], &out, Some(&cfg)));
    let pre = pgcbm(&["pretrain", "--seed", "5"], &out, Some(&cfg));
    assert!(pre.status.success(), "{}", stderr(&pre));
    assert_eq!(String::from_utf8_lossy(&pre.stdout).lines().count(), 3);
    let mut sums = Vec::new();
    for v in ["pgcbm", "vanilla", "blackbox"] {
        let s = ok_json(&pgcbm(&["finetune", "--variant", v, "--seed", "5"], &out, Some(&cfg)));
        sums.push(s["checkpoint_checksum"].clone());
    }
    let again = ok_json(&pgcbm(&["finetune", "--variant", "pgcbm", "--seed", "5"], &out, Some(&cfg)));
    assert_eq!(again["checkpoint_checksum"], sums[0]);

    let c = ok_json(&pgcbm(&["compare", "--seed", "5"], &out, Some(&cfg)));
    assert!(c["ordering_holds"].is_boolean());
    let cmp = out.join("compare");
    for f in [
        "report.json",
        "structure_bias.csv",
        "intervals.csv",
        "correlations.csv",
        "ood.csv",
        "predictions.csv",
        "resolved_config.json",
    ] {
        assert!(cmp.join(f).exists(), "{f} missing");
    }
    for log in ["pretrain_cover", "pretrain_height", "pretrain_stems", "finetune_pgcbm"] {
        let text = std::fs::read_to_string(out.join("logs").join(format!("{log}.ndjson"))).unwrap();
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            assert!(v["kind"] == "step" || v["kind"] == "eval");
        }
    }
    let first = std::fs::read(cmp.join("report.json")).unwrap();

    let e = ok_json(&pgcbm(&["eval", "--variant", "vanilla", "--seed", "5"], &out, Some(&cfg)));
    assert_eq!(e["variants"].as_array().unwrap().len(), 1);
    assert!(out.join("eval/intervals.csv").exists());

    ok_json(&pgcbm(&["compare", "--seed", "5"], &out, Some(&cfg)));
    assert_eq!(std::fs::read(cmp.join("report.json")).unwrap(), first);

    let resolved: Value = serde_json::from_str(&std::fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 5);
    assert_eq!(resolved["finetune"]["epochs"], 2);
    assert!(resolved["loss"]["gamma"].is_number());
}
