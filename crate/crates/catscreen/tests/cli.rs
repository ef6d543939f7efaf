//! End-to-end tests of the `catscreen` binary: exit codes, the
//! convert/label/train/predict pipeline, and byte-level reproducibility of
//! `screen`.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_catscreen"))
}

/// Tiny paired external dump: every site has one CO and one H record.
fn write_external(path: &Path) {
    let mut lines = String::new();
    let comps = [("Cu", "Al"), ("Pt", "Ni"), ("Ag", "Zn")];
    let mut k = 0usize;
    for (c, (e1, e2)) in comps.iter().enumerate() {
        for s in 0..12 {
            let site = [s as f64, c as f64, 0.0];
            let atoms: Vec<String> = (0..4)
                .map(|a| {
                    let el = if a % 2 == 0 { e1 } else { e2 };
                    format!(r#"{{"el":"{el}","x":{a}.0,"y":{s}.5,"z":{c}.0}}"#)
                })
                .collect();
            let e_co = -1.8 + 0.05 * (k % 50) as f64;
            let e_h = -0.8 + 0.04 * (k % 50) as f64;
            for (ads, energy) in [("CO", e_co), ("H", e_h)] {
                lines.push_str(&format!(
                    r#"{{"adsorbate":"{ads}","composition":"{e1}8{e2}16","miller":[1,1,1],"shift":0.0,"top":true,"site":[{},{},{}],"energy":{energy},"atoms":[{}]}}"#,
                    site[0], site[1], site[2],
                    atoms.join(",")
                ));
                lines.push('\n');
            }
            k += 1;
        }
    }
    std::fs::write(path, lines).unwrap();
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unknown_flag_exits_two() {
    let out = bin().args(["demo", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "label",
            "--in",
            "/nonexistent/in.jsonl",
            "--out",
            dir.path().join("out.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");
}

#[test]
fn pipeline_and_screen_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let ext = dir.path().join("ext.jsonl");
    let conv = dir.path().join("conv.jsonl");
    let labeled = dir.path().join("labeled.jsonl");
    write_external(&ext);

    let ok = |out: std::process::Output| {
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(bin()
        .args(["convert", "--from", "gaspy-jsonl"])
        .args(["--in", ext.to_str().unwrap(), "--out", conv.to_str().unwrap()])
        .output()
        .unwrap());
    ok(bin()
        .args(["label", "--in", conv.to_str().unwrap(), "--out", labeled.to_str().unwrap()])
        .output()
        .unwrap());

    // train + predict round-trips through a checkpoint
    let ckpt = dir.path().join("reg.json");
    let preds = dir.path().join("preds.csv");
    ok(bin()
        .args(["train", "--head", "reg", "--epochs", "3"])
        .args(["--data", labeled.to_str().unwrap(), "--out", ckpt.to_str().unwrap()])
        .output()
        .unwrap());
    ok(bin()
        .args(["predict", "--ckpt", ckpt.to_str().unwrap()])
        .args(["--data", labeled.to_str().unwrap(), "--out", preds.to_str().unwrap()])
        .output()
        .unwrap());
    let pred_text = std::fs::read_to_string(&preds).unwrap();
    assert!(pred_text.starts_with("id,mu,sigma,latent_0"));
    assert_eq!(pred_text.lines().count(), 37); // header + 36 structures

    // identical screen invocations produce byte-identical outputs
    let screen = |out_dir: &Path| {
        ok(bin()
            .args(["screen", "--mode", "cbo", "--budget", "2", "--epochs", "3", "--seed", "5"])
            .args(["--data", labeled.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
            .output()
            .unwrap());
    };
    let run1 = dir.path().join("run1");
    let run2 = dir.path().join("run2");
    screen(&run1);
    screen(&run2);
    for file in ["history.csv", "scores.csv"] {
        assert_eq!(
            std::fs::read(run1.join(file)).unwrap(),
            std::fs::read(run2.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run1.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "screen");
    assert_eq!(manifest["complete"], true);
    assert!(manifest["dataset_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn config_file_applies_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let ext = dir.path().join("ext.jsonl");
    let conv = dir.path().join("conv.jsonl");
    let labeled = dir.path().join("labeled.jsonl");
    write_external(&ext);
    bin()
        .args(["convert", "--from", "gaspy-jsonl"])
        .args(["--in", ext.to_str().unwrap(), "--out", conv.to_str().unwrap()])
        .output()
        .unwrap();
    bin()
        .args(["label", "--in", conv.to_str().unwrap(), "--out", labeled.to_str().unwrap()])
        .output()
        .unwrap();

    let config = dir.path().join("config.toml");
    std::fs::write(
        &config,
        "[campaign]\nbudget = 1\n\n[regression]\nepochs = 2\n\n[classification]\nepochs = 2\n",
    )
    .unwrap();

    // budget comes from the config file
    let out1 = dir.path().join("from_file");
    let out = bin()
        .args(["screen", "--mode", "random", "--seed", "3"])
        .args(["--config", config.to_str().unwrap()])
        .args(["--data", labeled.to_str().unwrap(), "--out", out1.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let history = std::fs::read_to_string(out1.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2); // header + 1 iteration

    // the flag wins over the file
    let out2 = dir.path().join("from_flag");
    bin()
        .args(["screen", "--mode", "random", "--seed", "3", "--budget", "3"])
        .args(["--config", config.to_str().unwrap()])
        .args(["--data", labeled.to_str().unwrap(), "--out", out2.to_str().unwrap()])
        .output()
        .unwrap();
    let history = std::fs::read_to_string(out2.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn demo_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["demo", "--task", "reg1d", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("reg1d.csv").exists());
    assert!(dir.path().join("reg1d_summary.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("reg1d.csv")).unwrap();
    assert!(csv.starts_with("x,mu,sigma"));
}
