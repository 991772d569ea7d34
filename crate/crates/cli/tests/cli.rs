use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn cylflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cylflow"))
        .args(args)
        .env("CYLFLOW_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two coarse 51-frame simulations and a one-epoch checkpoint, shared by
/// the tests of this file.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    checkpoint: PathBuf,
    config: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        std::fs::write(
            &config,
            "[train]\nepochs = 1\n[model]\nlatent = 8\nhidden_width = 8\nblocks = 1\n[solver]\nframes = 51\n[mesh]\nfar_size = 0.0675\nobstacle_size = 0.0294\n",
        )
        .unwrap();
        let data = dir.path().join("standard_cylinder");
        let out = cylflow(&[
            "--config", p(&config), "generate", "--dataset", "standard_cylinder", "--count", "2", "--out", p(&data),
        ]);
        assert!(ok(&out).contains("written=2 skipped=0 failed=0"));
        let checkpoint = dir.path().join("model.ckpt");
        let out = cylflow(&["--config", p(&config), "train", "--data", p(&data), "--out", p(&checkpoint), "--seed", "4"]);
        assert!(ok(&out).contains("epoch=1 "));
        Fixture {
            _dir: dir,
            data,
            checkpoint,
            config,
        }
    })
}

#[test]
fn generate_writes_split_manifest_and_resumes() {
    let f = fixture();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 2);
    assert_eq!(manifest["train_count"], 1);
    assert!(f.data.join("sim_0000.traj").exists() && f.data.join("sim_0001.traj").exists());
    let again = cylflow(&[
        "--config", p(&f.config), "generate", "--dataset", "standard_cylinder", "--count", "2", "--out", p(&f.data),
    ]);
    assert!(ok(&again).contains("written=0 skipped=2 failed=0"));
}

#[test]
fn invalid_family_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cylflow(&["generate", "--dataset", "three_cylinders", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("three_cylinders"));
}

#[test]
fn evaluation_is_deterministic_and_reports() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&cylflow(&["evaluate", "--data", p(&f.data), "--checkpoint", p(&f.checkpoint), "--out", p(out)]));
    }
    let name = "standard_cylinder__standard_cylinder__seed4.json";
    let ra = std::fs::read_to_string(a.join(name)).unwrap();
    let rb = std::fs::read_to_string(b.join(name)).unwrap();
    let (mut va, mut vb): (serde_json::Value, serde_json::Value) =
        (serde_json::from_str(&ra).unwrap(), serde_json::from_str(&rb).unwrap());
    for v in [&mut va, &mut vb] {
        v.as_object_mut().unwrap().remove("rollout_file");
    }
    assert_eq!(va, vb);
    assert_eq!(va["result"]["simulations"], 1);
    assert_eq!(va["result"]["frames"], 51);

    ok(&cylflow(&[
        "--config", p(&f.config), "evaluate", "--data", p(&f.data), "--untrained", "--seed", "4", "--out", p(&a),
    ]));
    let md = a.join("report.md");
    let plots = a.join("plots");
    let text = ok(&cylflow(&["report", "--results", p(&a), "--out", p(&md), "--plots", p(&plots)]));
    assert!(text.contains("## Evaluated on standard_cylinder"));
    assert!(text.contains("| *None* |"));
    assert!(plots.join("standard_cylinder__standard_cylinder.png").exists());
    assert!(plots.join("none__standard_cylinder.png").exists());
}

#[test]
fn train_split_evaluation_needs_opt_in() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let args = ["evaluate", "--data", p(&f.data), "--checkpoint", p(&f.checkpoint), "--split", "train", "--out", p(dir.path())];
    let refused = cylflow(&args);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--allow-train-eval"));
    let mut allowed = args.to_vec();
    allowed.push("--allow-train-eval");
    ok(&cylflow(&allowed));
}

#[test]
fn training_resumes_from_checkpoint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    std::fs::copy(&f.checkpoint, &ckpt).unwrap();
    let out = cylflow(&[
        "--config", p(&f.config), "train", "--data", p(&f.data), "--out", p(&ckpt), "--seed", "4", "--epochs", "2",
    ]);
    let text = ok(&out);
    assert!(text.contains("epoch=2 ") && !text.contains("epoch=1 "));
    let mismatch = cylflow(&[
        "--config", p(&f.config), "train", "--data", p(&f.data), "--out", p(&ckpt), "--seed", "4", "--latent", "16",
    ]);
    assert!(!mismatch.status.success());
}

#[test]
fn mesh_command_prints_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("mesh.txt");
    let text = ok(&cylflow(&["mesh", "--coarsen", "2", "--dump", p(&dump)]));
    assert!(text.starts_with("vertices="));
    assert!(std::fs::read_to_string(&dump).unwrap().starts_with("vertices "));
}
