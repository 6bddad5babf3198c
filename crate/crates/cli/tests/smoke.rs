use std::path::Path;
use std::process::{Command, Output};

fn maskaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskaudit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MASKAUDIT_DATA_ROOT")
        .output()
        .unwrap()
}

fn config(dir: &Path, extra: &str) -> String {
    format!(
        r#"
run_id = "smoke"
seed = 3
data_root = "data"
output_root = "run"
image_size = 32
dilation_factors = [0, 4, 100]
{extra}

[dataset]
source = "synthetic"
[dataset.synthetic]
n_samples = 160
image_size = 32
roi_feature_strength = 1.0
shortcut_strength = 1.0
size_confound = 0.0
seed = 5

[train]
max_epochs = 3

[embeddings]
model_strategy = "FULL"
fold = 0
max_images = 12
perplexity = 8

[attribution]
model_strategies = ["NO_ROI"]
fold = 0
n_images = 1
segments = 4
n_evaluations = 16

[ood]
n_samples = 40
"#
    )
    .replace("data_root = \"data\"", &format!("data_root = {:?}", dir.join("data")))
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn ok(args: &[&str]) {
    let out = maskaudit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let out = maskaudit(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(maskaudit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(maskaudit(&["train"]).status.code(), Some(1));
    assert_eq!(maskaudit(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_1_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = config(dir.path(), "strategies = []").replace("max_epochs = 3", "max_epochs = 0");
    let path = write_config(dir.path(), "bad.toml", &bad);
    let out = maskaudit(&["generate", "--config", &path]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("strategies") && err.contains("max_epochs"), "{err}");
    // nothing was generated
    assert!(!dir.path().join("data").exists());

    let out = maskaudit(&["generate", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stages_before_prerequisites_fail_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.toml", &config(dir.path(), ""));
    let out = maskaudit(&["train", "--config", &path]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn end_to_end_run_is_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.toml", &config(dir.path(), ""));
    let run = dir.path().join("run");

    ok(&["generate", "--config", &path]);
    assert!(dir.path().join("data/manifest.csv").exists());
    assert!(dir.path().join("data/ood/manifest.csv").exists());
    ok(&["prepare", "--config", &path]);
    ok(&["train", "--config", &path, "--jobs", "2"]);
    let models: Vec<_> = std::fs::read_dir(run.join("models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with("_f0.json") || n.ends_with("_f4.json"))
        .collect();
    assert_eq!(models.len(), 10);

    let checkpoint = run.join("models/NO_ROI_f2.json");
    let before = std::fs::read(&checkpoint).unwrap();
    let mtime = std::fs::metadata(&checkpoint).unwrap().modified().unwrap();
    ok(&["train", "--config", &path]);
    assert_eq!(std::fs::metadata(&checkpoint).unwrap().modified().unwrap(), mtime);
    assert_eq!(std::fs::read(&checkpoint).unwrap(), before);

    ok(&["evaluate", "--config", &path]);
    let csv = std::fs::read_to_string(run.join("results/matrices/finding.csv")).unwrap();
    // header + 5 x 5 cells x 5 folds
    assert_eq!(csv.lines().count(), 1 + 125);
    assert!(run.join("results/matrices/finding.png").exists());
    assert!(std::fs::read_dir(run.join("results/delong")).unwrap().count() >= 4);
    assert!(std::fs::read_dir(run.join("results/matrices"))
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().starts_with("ood_")));
    let bundle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("study/study.json")).unwrap()).unwrap();
    assert_eq!(bundle["plans"][1]["items"].as_array().unwrap().len(), 15);
    let record = std::fs::read(run.join("run_record.json")).unwrap();

    ok(&["evaluate", "--config", &path]);
    assert_eq!(std::fs::read(run.join("run_record.json")).unwrap(), record);

    ok(&["sweep", "--config", &path]);
    ok(&["embed", "--config", &path]);
    ok(&["attribute", "--config", &path]);
    let out = maskaudit(&["report", "--config", &path]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("cross-masking AUC"), "{text}");
    for sub in ["curves", "embeddings", "attributions"] {
        assert!(std::fs::read_dir(run.join("results").join(sub)).unwrap().count() > 0, "{sub}");
    }
    assert!(run.join("summary.json").exists());

    // the run directory keeps the exact config that produced it
    assert_eq!(std::fs::read_to_string(run.join("config.toml")).unwrap(), std::fs::read_to_string(&path).unwrap());
    let changed = write_config(dir.path(), "c.toml", &config(dir.path(), "").replace("seed = 3", "seed = 4"));
    assert_eq!(maskaudit(&["train", "--config", &changed]).status.code(), Some(1));
}
