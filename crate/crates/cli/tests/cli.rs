use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_forensics-forest");
const SMALL: &[&str] = &["--trees", "8", "--max-layers", "2"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn cli")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Data {
    dir: tempfile::TempDir,
    manifest: PathBuf,
}

fn synth(n: usize) -> Data {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let n = n.to_string();
    ok(&["synth", "--out", s(&data), "--n-real", &n, "--n-fake", &n, "--size", "64", "--seed", "3"]);
    Data {
        manifest: data.join("manifest.csv"),
        dir,
    }
}

fn train(d: &Data, name: &str, extra: &[&str]) -> PathBuf {
    let model = d.dir.path().join(name);
    let mut args = vec!["train", "--manifest", s(&d.manifest), "--out", s(&model)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args);
    model
}

fn json_lines(bytes: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn extract_writes_one_record_per_image_deterministically() {
    let d = synth(5);
    let a = d.dir.path().join("a.jsonl");
    let b = d.dir.path().join("b.jsonl");
    ok(&["extract", "--manifest", s(&d.manifest), "--out", s(&a)]);
    ok(&["extract", "--manifest", s(&d.manifest), "--out", s(&b)]);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let recs = json_lines(&bytes);
    assert_eq!(recs.len(), 10);
    assert_eq!(recs[0]["scale_inputs"].as_array().unwrap().len(), 1 + 2 + 3 + 4);
}

#[test]
fn missing_landmarks_give_an_error_record_and_exit_1() {
    let d = synth(3);
    let text = std::fs::read_to_string(&d.manifest).unwrap();
    let victim = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
    std::fs::remove_file(d.manifest.parent().unwrap().join(&victim)).unwrap();
    let out_path = d.dir.path().join("f.jsonl");
    let out = run(&["extract", "--manifest", s(&d.manifest), "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(1));
    let recs = json_lines(&std::fs::read(&out_path).unwrap());
    assert_eq!(recs.len(), 6);
    assert_eq!(recs.iter().filter(|r| r.get("error").is_some()).count(), 1);
}

#[test]
fn train_predict_eval_agree() {
    let d = synth(20);
    let model = train(&d, "m.json", &[]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{}.report.json", s(&model))).unwrap()).unwrap();
    for m in report["members"].as_array().unwrap() {
        assert!(m["kept_layers"].as_u64().unwrap() <= 2);
    }

    let out = ok(&["predict", "--model", s(&model), "--manifest", s(&d.manifest)]);
    let preds = json_lines(&out.stdout);
    assert_eq!(preds.len(), 40);

    let eval = ok(&["eval", "--model", s(&model), "--manifest", s(&d.manifest)]);
    let metrics: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let acc = metrics["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&metrics["auc"].as_f64().unwrap()));

    // Cross-check eval accuracy against predicted labels on the test split.
    let rows: Vec<(String, u64, String)> = std::fs::read_to_string(&d.manifest)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[2].parse().unwrap(), f[3].to_string())
        })
        .collect();
    let (mut hits, mut n, mut pos) = (0, 0, 0);
    for (p, (path, label, split)) in preds.iter().zip(&rows) {
        assert!(p["path"].as_str().unwrap().ends_with(path.as_str()));
        if split == "test" {
            n += 1;
            pos += usize::from(*label == 1);
            hits += usize::from(p["label"].as_u64().unwrap() == *label);
        }
    }
    assert_eq!(metrics["n_pos"].as_u64().unwrap() as usize, pos);
    assert_eq!(metrics["n_neg"].as_u64().unwrap() as usize, n - pos);
    assert!((acc - hits as f64 / n as f64).abs() < 1e-12);

    // Identity sweep points reproduce eval.
    let csv = d.dir.path().join("sweep.csv");
    ok(&[
        "sweep", "--model", s(&model), "--manifest", s(&d.manifest), "--out", s(&csv),
        "--resize", "256", "--jpeg", "100", "--brightness", "1", "--noise", "0",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "perturbation,level,acc,auc,n");
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] == "resize" {
            continue;
        }
        assert_eq!(f[2].parse::<f64>().unwrap(), acc, "{line}");
        assert_eq!(f[3].parse::<f64>().unwrap(), metrics["auc"].as_f64().unwrap(), "{line}");
    }

    // A single image through --image gives the same record as the manifest run.
    let first = d.manifest.parent().unwrap().join(&rows[0].0);
    let single = ok(&["predict", "--model", s(&model), "--image", s(&first)]);
    let one = json_lines(&single.stdout);
    assert_eq!(one[0]["p_fake"], preds[0]["p_fake"]);
}

#[test]
fn same_seed_gives_identical_predictions() {
    let d = synth(12);
    let a = train(&d, "a.json", &["--seed", "9"]);
    let b = train(&d, "b.json", &["--seed", "9"]);
    let pa = ok(&["predict", "--model", s(&a), "--manifest", s(&d.manifest)]);
    let pb = ok(&["predict", "--model", s(&b), "--manifest", s(&d.manifest)]);
    assert_eq!(pa.stdout, pb.stdout);
}

#[test]
fn feature_dump_trains_the_same_model_as_the_manifest() {
    let d = synth(12);
    let dump = d.dir.path().join("f.jsonl");
    ok(&["extract", "--manifest", s(&d.manifest), "--out", s(&dump)]);
    let from_manifest = train(&d, "a.json", &[]);
    let from_dump = d.dir.path().join("b.json");
    let mut args = vec!["train", "--features", s(&dump), "--out", s(&from_dump)];
    args.extend_from_slice(SMALL);
    ok(&args);
    let pa = ok(&["predict", "--model", s(&from_manifest), "--manifest", s(&d.manifest)]);
    let pb = ok(&["predict", "--model", s(&from_dump), "--manifest", s(&d.manifest)]);
    assert_eq!(pa.stdout, pb.stdout);
}

#[test]
fn dnc_archive_holds_t_members() {
    let d = synth(20);
    let model = train(&d, "d.json", &["--dnc", "--dnc-t", "2", "--dnc-m", "4"]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(v["model"]["type"], "divide_and_conquer");
    assert_eq!(v["model"]["model"]["members"].as_array().unwrap().len(), 2);
}

#[test]
fn config_file_with_flag_override() {
    let d = synth(12);
    let cfg = d.dir.path().join("run.toml");
    std::fs::write(&cfg, "scheme = \"e1\"\nscales = [1, 4]\ntrees_per_forest = 4\n[hybrid]\nmode = \"h2\"\n").unwrap();
    let model = d.dir.path().join("m.json");
    ok(&[
        "train", "--manifest", s(&d.manifest), "--out", s(&model), "--config", s(&cfg), "--max-layers", "2",
        "--hybrid", "h3",
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(v["config"]["scheme"], "e1");
    assert_eq!(v["config"]["scales"], serde_json::json!([1, 4]));
    assert_eq!(v["config"]["hybrid"]["mode"], "h3");
    assert_eq!(v["config"]["trees_per_forest"], 4);
}

#[test]
fn config_errors_exit_2() {
    let d = synth(3);
    let model = d.dir.path().join("m.json");
    let base = ["train", "--manifest", s(&d.manifest), "--out", s(&model)];
    for extra in [
        &["--scheme", "e9"][..],
        &["--scales", "1,5"],
        &["--hybrid", "h3", "--dnc"],
        &["--head-dims", "16-4", "--hybrid", "h2"],
        &["--dnc", "--dnc-r", "1.5"],
    ] {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        assert_eq!(run(&args).status.code(), Some(2), "{extra:?}");
    }
    let bad = d.dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    let mut args = base.to_vec();
    args.extend_from_slice(&["--config", s(&bad)]);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn archive_guards() {
    let d = synth(12);
    let model = train(&d, "m.json", &[]);
    let text = std::fs::read_to_string(&model).unwrap();

    let old = d.dir.path().join("old.json");
    std::fs::write(&old, text.replacen("\"ffm/1\"", "\"ffm/0\"", 1)).unwrap();
    let out = run(&["predict", "--model", s(&old), "--manifest", s(&d.manifest)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let cut = d.dir.path().join("cut.json");
    std::fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let out = run(&["predict", "--model", s(&cut), "--manifest", s(&d.manifest)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}
