//! Drives the binary the way a user would.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tendonsense"))
}

fn run(out: &Path, args: &[&str]) -> Output {
    let o = bin().arg("--out-dir").arg(out).args(args).output().unwrap();
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(
        &p,
        "[corpus]\nscale = 0.03\nrandom_blocks = 3\n\n[model]\nn_steps = 5\nennet_hidden = 8\nfc_widths = [16, 8]\n\n[train]\nepochs = 3\nbatch_size = 64\n",
    )
    .unwrap();
    p
}

#[test]
fn verify_and_grad_check_exit_zero() {
    let o = bin().arg("verify").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 10 && !text.contains("FAIL"), "{text}");
    let o = bin().arg("grad-check").output().unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().matches("PASS").count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin().arg("no-such-command").output().unwrap().status.code(), Some(1));
    // No corpus yet.
    assert_eq!(run(dir.path(), &["train", "--model", "mlp"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["gen-data", "--scale", "-1"]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepoch = 3\n").unwrap();
    let o = bin().arg("--config").arg(&bad).arg("verify").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin()
        .arg("--config")
        .arg(dir.path().join("missing.toml"))
        .arg("verify")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    // Runtime failure: the sink address is not listening.
    let o = run(dir.path(), &["sink", "--addr", "256.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_train_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for run_dir in ["a", "b"] {
        let out = dir.path().join(run_dir);
        assert!(run(&out, &["-c", cfg, "gen-data"]).status.success());
        for m in ["mlp", "ennet"] {
            assert!(run(&out, &["-c", cfg, "train", "--model", m, "--seed", "4"])
                .status
                .success());
        }
        let o = run(&out, &["-c", cfg, "eval"]);
        assert!(o.status.success());
        let table = String::from_utf8(o.stdout).unwrap();
        assert!(table.contains("ANN") && table.contains("ENNet"), "{table}");
        let read = |p: &str| std::fs::read(out.join(p)).unwrap();
        outputs.push((
            read("corpus/manifest.json"),
            read("eval.csv"),
            read("models/ennet.model"),
            read("corpus/resolved_config.toml"),
        ));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    assert!(a.0 == b.0, "manifests differ");
    assert_eq!(a.1, b.1, "eval tables differ");
    assert!(a.2 == b.2, "model files differ");
    // The echo differs only in out_dir.
    let echo = String::from_utf8(a.3.clone()).unwrap();
    assert!(echo.contains("scale = 0.03"));
    assert_eq!(echo.replace("/a\"", "/b\""), String::from_utf8(b.3.clone()).unwrap());
}

#[test]
fn sink_stream_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    assert!(run(&out, &["-c", cfg, "gen-data"]).status.success());
    assert!(run(&out, &["-c", cfg, "train", "--model", "ennet"]).status.success());

    let mut sink = bin()
        .arg("--out-dir")
        .arg(&out)
        .args(["sink", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(sink.stdout.as_mut().unwrap())
        .read_line(&mut first)
        .unwrap();
    let addr = first.trim().strip_prefix("listening on ").unwrap().to_string();

    let o = run(
        &out,
        &[
            "-c",
            cfg,
            "stream",
            "--addr",
            &addr,
            "--duration",
            "1.5",
            "--frames",
            "2000",
        ],
    );
    assert!(o.status.success());
    assert!(sink.wait().unwrap().success());

    let o = run(&out, &["-c", cfg, "report"]);
    assert!(o.status.success());
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.contains("tracking RMSE"), "{summary}");
    let csv = std::fs::read_to_string(out.join("teleop/pred_vs_truth.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,theta_true,phi_true,theta_pred,phi_pred"));
    let rows = lines.count();
    assert!(rows > 50, "{rows}");
    let log = std::fs::read_to_string(out.join("teleop/sink_log.csv")).unwrap();
    assert_eq!(log.lines().count(), rows + 1);
}
