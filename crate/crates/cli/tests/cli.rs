use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stabkit::{load_dataset, DatasetFormat, ParamVector};
use tempfile::TempDir;

fn stabkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stabkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stabkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn synth(dir: &TempDir, name: &str, n: usize, seed: u64) -> String {
    let path = p(dir, name);
    ok(&[
        "synth", "--n", &n.to_string(), "--d", "6", "--classes", "3", "--sep", "3",
        "--seed", &seed.to_string(), "--out", &path,
    ]);
    path
}

#[test]
fn synth_writes_valid_fds1() {
    let dir = TempDir::new().unwrap();
    let path = p(&dir, "ds.fds");
    ok(&["synth", "--n", "1000", "--d", "16", "--classes", "4", "--sep", "5", "--seed", "1", "--out", &path]);
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"FDS1");
    let ds = load_dataset(Path::new(&path), DatasetFormat::Binary, None).unwrap();
    assert_eq!((ds.n_samples(), ds.feature_dim(), ds.n_classes()), (1000, 16, 4));
}

#[test]
fn convert_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let bin = synth(&dir, "a.fds", 50, 2);
    let csv = p(&dir, "a.csv");
    let back = p(&dir, "b.fds");
    ok(&["convert", "--input", &bin, "--output", &csv]);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("label,f0,"));
    ok(&["convert", "--input", &csv, "--output", &back, "--classes", "3"]);
    assert_eq!(fs::read(&bin).unwrap(), fs::read(&back).unwrap());
}

#[test]
fn stability_of_identical_models_is_zero() {
    let dir = TempDir::new().unwrap();
    let m = ParamVector::gaussian(4, 3, 1.0, 9).unwrap();
    let (a, b) = (p(&dir, "m1.pvc"), p(&dir, "m2.pvc"));
    m.save(Path::new(&a)).unwrap();
    m.save(Path::new(&b)).unwrap();
    let out = ok(&["stability", "--models", &a, &b]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["deviation_l2"], 0.0);
    assert_eq!(v["n_models"], 2);
}

#[test]
fn train_ensemble_privatize_pipeline() {
    let dir = TempDir::new().unwrap();
    let tr = synth(&dir, "tr.fds", 300, 1);
    let te = synth(&dir, "te.fds", 100, 2);
    let cfg = p(&dir, "run.toml");
    fs::write(&cfg, "epochs = 20\nlearning_rate = 0.05\n[member_data]\nmode = \"random_subset\"\nsize = 200\n").unwrap();

    let single = p(&dir, "single");
    let out = ok(&["train", "--train", &tr, "--test", &te, "--config", &cfg, "--out", &single]);
    assert!(out.contains("final_loss"));
    let trace = fs::read_to_string(Path::new(&single).join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 22);
    let resolved = fs::read_to_string(Path::new(&single).join("config.toml")).unwrap();
    assert!(resolved.contains("epochs = 20") && resolved.contains("momentum = 0.9"));

    let ens = p(&dir, "ens");
    ok(&[
        "ensemble", "--train", &tr, "--test", &te, "--config", &cfg, "--models", "3",
        "--set", "clipping.kind=whole_batch", "--set", "clipping.threshold=0.5",
        "--workers", "2", "--out", &ens,
    ]);
    let models: Vec<String> = (0..3)
        .map(|i| Path::new(&ens).join(format!("models/member_{i}.pvc")).to_string_lossy().into_owned())
        .collect();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&ens).join("report.json")).unwrap()).unwrap();
    assert!(report["deviation_l2"].as_f64().unwrap() > 0.0);

    let private = p(&dir, "private.pvc");
    let mut args = vec!["privatize", "--model", &models[0], "--noise-mode", "isotropic",
        "--noise-scale", "0", "--noise-seed", "4", "--out", &private, "--ensemble"];
    args.extend(models.iter().map(String::as_str));
    ok(&args);
    assert_eq!(fs::read(&private).unwrap(), fs::read(&models[0]).unwrap());

    let mut args = vec!["privatize", "--model", &models[0], "--noise-scale", "1", "--out", &private, "--ensemble"];
    args.extend(models.iter().map(String::as_str));
    let out: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert!(out["noise_l2"].as_f64().unwrap() > 0.0);
}

#[test]
fn tree_command_trains_every_node() {
    let dir = TempDir::new().unwrap();
    let tr = synth(&dir, "tr.fds", 300, 1);
    let out_dir = p(&dir, "tree");
    let out = ok(&["tree", "--train", &tr, "--test", &tr, "--skeleton", "[0,[1,2]]", "--set", "epochs=10", "--out", &out_dir]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["trained_nodes"], 2);
    assert!(Path::new(&out_dir).join("tree.json").is_file());
}

#[test]
fn experiment_writes_report_and_series() {
    let dir = TempDir::new().unwrap();
    let spec = p(&dir, "group_clip.toml");
    fs::write(
        &spec,
        r#"
name = "group_clip_sweep"
ensemble_size = 3
sweep = [1, 50]

[dataset]
source = "synthetic"
n_train = 200
n_test = 50
feature_dim = 4
n_classes = 3
class_separation = 2.0
seed = 1

[member_data]
mode = "random_subset"
size = 100

[training]
epochs = 5
"#,
    )
    .unwrap();
    let out_dir = p(&dir, "results");
    ok(&["experiment", "--spec", &spec, "--out", &out_dir, "--workers", "2"]);
    let root = Path::new(&out_dir);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["complete"], true);
    assert_eq!(report["cells"].as_array().unwrap().len(), 2);
    for s in 0..2 {
        for m in 0..3 {
            assert!(root.join(format!("series_{s}_{m}.csv")).is_file());
            assert!(root.join(format!("models/cell{s}_member{m}.pvc")).is_file());
        }
    }
    // The resolved spec keeps the recipe defaults that the file left out.
    let resolved = fs::read_to_string(root.join("config.toml")).unwrap();
    assert!(resolved.contains("group_clip_threshold = 1.0"));
}

#[test]
fn failed_experiment_keeps_completed_cells() {
    let dir = TempDir::new().unwrap();
    let out_dir = p(&dir, "partial");
    // The second subset size exceeds the pool, so only cell 0 completes.
    let out = stabkit(&[
        "experiment", "--preset", "subset_divergence", "--set", "sweep=[50, 5000]",
        "--set", "ensemble_size=2", "--set", "training.epochs=2",
        "--set", "dataset.n_train=100", "--set", "dataset.n_test=10", "--out", &out_dir,
    ]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out_dir).join("report.json")).unwrap()).unwrap();
    assert_eq!(report["complete"], false);
    assert_eq!(report["cells"].as_array().unwrap().len(), 1);
    assert!(report["error"].as_str().unwrap().contains("5000"));
}

#[test]
fn errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let missing = p(&dir, "nope.fds");
    let out = stabkit(&["train", "--train", &missing, "--out", &p(&dir, "o")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert!(!dir.path().join("o").exists(), "no work before path validation");

    assert_eq!(stabkit(&["train", "--bogus"]).status.code(), Some(2));

    let tr = synth(&dir, "tr.fds", 30, 1);
    let out = stabkit(&["train", "--train", &tr, "--set", "momentum=1.5", "--out", &p(&dir, "o2")]);
    assert_eq!(out.status.code(), Some(2));

    let bad = p(&dir, "bad.fds");
    fs::write(&bad, b"XXXX").unwrap();
    let out = stabkit(&["convert", "--input", &bad, "--output", &p(&dir, "x.csv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
}

#[test]
fn help_documents_flags() {
    let out = ok(&["privatize", "--help"]);
    for flag in ["--noise-mode", "--noise-scale", "--noise-seed", "--ensemble", "--out"] {
        assert!(out.contains(flag), "{flag} missing from help");
    }
}
