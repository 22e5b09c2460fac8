use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapeatlas")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const TINY: &str = r#"
profile = "lv"
clusters = 2
epochs = 2
checkpoint_every = 1

[network]
hidden = [8]
latent_dim = 4
heads = 2

[generator]
hidden = [16]
latent_dim = 3
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let run_dir = root.join("run");
    ok(&["generate-data", "--family", "bimodal", "--count", "6", "--n-lo", "30", "--n-hi", "50", "--seed", "3", "--out", s(&data)]);
    assert!(data.join("cohort.json").exists());
    assert!(data.join("shape_000.obj").exists());
    assert!(data.join("init/single.obj").exists() && data.join("init/pair_1.obj").exists());

    let cfg = root.join("cfg.toml");
    fs::write(&cfg, TINY).unwrap();
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir)]);
    for f in ["model.ckpt", "checkpoint_0001.ckpt", "checkpoint_0002.ckpt", "loss.csv", "atlas_0.obj", "atlas_1.obj", "weights.csv"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let loss = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.starts_with("epoch,l_psi,l_ref,l_g,total,atlas_displacement"));
    let ckpt = run_dir.join("model.ckpt");

    let matched = root.join("matched");
    ok(&["match", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&matched), "--phi"]);
    assert!(matched.join("shape_000.obj").exists());
    assert!(matched.join("shape_000.phi").exists());
    assert_eq!(fs::read_to_string(matched.join("matches.csv")).unwrap().lines().count(), 7);

    let atlas = root.join("atlas");
    ok(&["build-atlas", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&atlas)]);
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(atlas.join("atlas.json")).unwrap()).unwrap();
    assert_eq!(sidecar.as_array().unwrap().len(), 2);
    assert!(sidecar[0]["gamma"].as_f64().unwrap() > 0.0);

    let synth = root.join("synth");
    ok(&["synthesize", "--checkpoint", s(&ckpt), "--count", "4", "--seed", "1", "--out", s(&synth)]);
    assert!(synth.join("sample_0003.obj").exists());
    let synth_again = root.join("synth2");
    ok(&["synthesize", "--checkpoint", s(&ckpt), "--count", "4", "--seed", "1", "--out", s(&synth_again)]);
    assert_eq!(fs::read(synth.join("sample_0002.obj")).unwrap(), fs::read(synth_again.join("sample_0002.obj")).unwrap());

    let labels = root.join("labels.csv");
    ok(&["cluster", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&labels)]);
    let text = fs::read_to_string(&labels).unwrap();
    assert!(text.starts_with("id,w0,w1,label"));
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (w0, w1): (f64, f64) = (cols[1].parse().unwrap(), cols[2].parse().unwrap());
        assert!((w0 + w1 - 1.0).abs() < 1e-9);
        assert_eq!(cols[3], if w0 >= w1 { "0" } else { "1" });
    }

    let eval = root.join("eval");
    ok(&["evaluate", "--checkpoint", s(&ckpt), "--test", s(&data), "--samples", "5", "--out", s(&eval)]);
    for f in ["metrics.json", "per_shape.csv", "volumes.svg", "errors.svg"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["acceptance"]["minmax"].as_f64().unwrap() >= 0.0);
}

#[test]
fn build_atlas_from_normalised_meshes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("norm");
    // amplitude 0 with one fixed vertex count: every mesh shares the icosphere connectivity
    ok(&["generate-data", "--family", "ellipsoid", "--count", "3", "--n-lo", "42", "--n-hi", "42", "--amplitude", "0", "--out", s(&data)]);
    let out = tmp.path().join("atlas");
    let init = data.join("shape_000.obj");
    ok(&["build-atlas", "--normalized", s(&data), "--init", s(&init), "--gamma", "0", "--out", s(&out)]);
    assert!(out.join("atlas_0.obj").exists());
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("atlas.json")).unwrap()).unwrap();
    assert_eq!(sidecar[0]["gamma"].as_f64(), Some(0.0));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "clusters = 0\n").unwrap();
    let out = run(&["train", "--config", s(&cfg), "--data", s(tmp.path()), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&cfg, "epochs = \"many\"\n").unwrap();
    let out = run(&["train", "--config", s(&cfg), "--data", s(tmp.path()), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["synthesize", "--checkpoint", s(&tmp.path().join("missing.ckpt")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    // a huge learning rate drives the losses to overflow
    let data = tmp.path().join("data");
    ok(&["generate-data", "--count", "2", "--n-lo", "20", "--n-hi", "30", "--out", s(&data)]);
    fs::write(&cfg, "epochs = 30\nlearning_rate = 1e12\n[network]\nhidden = [4]\nlatent_dim = 2\nheads = 1\n").unwrap();
    let out = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
