use std::path::Path;
use std::process::{Command, Output};

fn linecorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linecorr")).args(args).output().unwrap()
}

fn count_files(dir: &Path, suffix: &str) -> usize {
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            n += count_files(&p, suffix);
        } else if p.to_string_lossy().ends_with(suffix) {
            n += 1;
        }
    }
    n
}

#[test]
fn synth_default_writes_25_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = linecorr(&["--seed", "3", "--out-dir", out, "synth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 25);
    for line in manifest.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert_eq!(count_files(dir.path(), "lineart_a.png") + count_files(dir.path(), "lineart_b.png"), 50);
}

#[test]
fn train_infer_eval_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |s: &str| d.join(s).display().to_string();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"model": {"dim": 16, "vit_depth": 1, "mt_depth": 1, "heads": 2}, "train": {"max_steps": 2, "batch_size": 2}}"#,
    )
    .unwrap();
    let cfg = p("cfg.json");
    let steps: [Vec<String>; 4] = [
        vec!["--out-dir".into(), p("data"), "synth".into(), "--pairs".into(), "2".into()],
        vec!["--config".into(), cfg.clone(), "--out-dir".into(), p("m"), "train".into(), "--manifest".into(), p("data/manifest.jsonl")],
        vec![
            "--config".into(), cfg.clone(), "--out-dir".into(), p("pred"), "infer".into(),
            "--checkpoint".into(), p("m/model.ckpt"),
            "--img-a".into(), p("data/pair_0000/lineart_a.png"),
            "--img-b".into(), p("data/pair_0000/lineart_b.png"),
        ],
        vec![
            "--config".into(), cfg, "--out-dir".into(), p("eval"), "eval-patch".into(),
            "--manifest".into(), p("data/manifest.jsonl"), "--checkpoint".into(), p("m/model.ckpt"),
        ],
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        let o = linecorr(&args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let loss = std::fs::read_to_string(d.join("m/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    for f in ["sim.bin", "regions_a.png", "regions_b.png", "corr.json"] {
        assert!(d.join("pred").join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval/patch_report.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("cross"));
}

#[test]
fn exit_codes() {
    let o = linecorr(&["synth", "--pairs", "many"]);
    assert_eq!(o.status.code(), Some(1));
    let o = linecorr(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = linecorr(&["--out-dir", dir.path().to_str().unwrap(), "train", "--manifest", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));
}
