use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
truth_table = "truth.csv"
dataset_roots = ["wav"]
output_dir = "out"

[synth]
n_machines = 2
n_unattributed = 1
attrs_per_machine = 2
clips_per_attr_train = 8
clips_per_attr_test = 10
clip_seconds = 0.5

[frontend]
clip_seconds = 0.5
n_mels = 32
padded_frames = 48

[encoder]
depth = 1
dim = 16
heads = 2

[pretrain]
epochs = 1
batch_size = 4

[cluster]
policy = "fixed"
k = 2

[finetune]
epochs = 1
batch_size = 4

# with a handful of normal clips per domain a p=0.1 pAUC can legitimately
# be 0, which the harmonic mean rejects
[metrics]
p = 1.0
"#;

fn asd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asd"))
        .current_dir(dir)
        .args(["--config", "tiny.toml"])
        .args(args)
        .env_remove("ASD_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = asd(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn stages_chain_and_stamp_artifacts() {
    let dir = workspace();
    let d = dir.path();
    for stage in [
        &["synth"][..],
        &["pretrain"],
        &["embed"],
        &["cluster"],
        &["finetune"],
        &["embed", "--source", "adapted"],
        &["score"],
        &["eval"],
    ] {
        ok(d, stage);
    }
    let report = fs::read_to_string(d.join("out/eval/report.csv")).unwrap();
    assert!(report.starts_with("machine,auc_source,auc_target,pauc\n"));
    assert!(report.contains("\nsubset,score\n"));
    let projection = fs::read_to_string(d.join("out/eval/projection.csv")).unwrap();
    assert!(projection.starts_with("path,label,x,y\n"));
    let pseudo = fs::read_to_string(d.join("out/cluster/pseudo_labels.csv")).unwrap();
    assert!(pseudo.starts_with("path,machine,pseudo_attribute\n"));
    assert!(pseudo.contains(",pseudo"));
    let stamp = fs::read_to_string(d.join("out/score/scores.csv.stamp")).unwrap();
    assert!(stamp.contains("seed=3\n") && stamp.contains("stage=score\n"));
}

#[test]
fn missing_upstream_artifact_exits_3_and_names_the_stage() {
    let dir = workspace();
    ok(dir.path(), &["synth"]);
    let out = asd(dir.path(), &["score"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run the `embed --source adapted` stage first"), "{err}");
}

#[test]
fn config_errors_exit_2_with_line_number() {
    let dir = workspace();
    fs::write(dir.path().join("tiny.toml"), "seed = 1\n[encoder]\ndepht = 2\n").unwrap();
    let out = asd(dir.path(), &["pretrain"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn eval_refuses_scores_from_another_config_unless_forced() {
    let dir = workspace();
    let d = dir.path();
    for stage in [&["synth"][..], &["pretrain"], &["finetune", "--no-pseudo"], &["embed", "--source", "adapted"], &["score"]] {
        ok(d, stage);
    }
    let classes = fs::read_to_string(d.join("out/finetune/classes.csv")).unwrap();
    assert!(classes.contains(",noAttr\n"), "{classes}");
    assert!(!classes.contains("pseudo"));

    let out = asd(d, &["--set", "backend.k=2", "eval"]);
    assert_eq!(out.status.code(), Some(3));
    ok(d, &["--set", "backend.k=2", "eval", "--force"]);
    let stamp = fs::read_to_string(d.join("out/eval/report.csv.stamp")).unwrap();
    assert!(stamp.contains("forced=true"));
}

#[test]
fn output_dir_env_overrides_config() {
    let dir = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_asd"))
        .current_dir(dir.path())
        .args(["--config", "tiny.toml", "synth"])
        .env("ASD_OUTPUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_asd"))
        .current_dir(dir.path())
        .args(["--config", "tiny.toml", "pretrain"])
        .env("ASD_OUTPUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("elsewhere/pretrain/teacher.ckpt").exists());
    assert!(!dir.path().join("out").exists());
}
