use std::path::Path;
use std::process::{Command, Output};

fn cf3d(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cf3d"))
        .args(args)
        .env("CF3D_DATA_DIR", root)
        .output()
        .expect("spawn cf3d")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let o = cf3d(root, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr_lines(o: &Output) -> usize {
    String::from_utf8_lossy(&o.stderr).lines().count()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// A 64x64 scene with 300 aerial tuples under `root/scene` and `root/samples`.
fn small_samples(root: &Path) {
    ok(root, &["generate", "--seed", "7", "--size", "64", "--density", "0.3"]);
    ok(root, &["sample", "--n-aerial", "300", "--seed", "1"]);
}

/// Tiny networks for a 64x64 grid: a 4x4x8 latent cut into 2x2 patches.
fn tiny_config(dir: &Path, lr: f64) -> String {
    let sched = |epochs: usize, batch: usize| serde_json::json!({"epochs": epochs, "delay": 0, "lr": lr, "batch": batch});
    let cfg = serde_json::json!({
        "corr_mmf": {
            "view_channels": [4, 8], "fused_channels": [8, 8], "decoder_channels": [8, 8, 4],
            "kernel": 3, "sigma_tam": 8.0, "lambda": 1.0, "use_tam": true, "use_cam": true,
            "drop_ground": false, "drop_footprint": false, "schedule": sched(1, 8)
        },
        "mmr": {
            "channels": [4, 4, 8, 8], "decoder_channels": [8, 4, 4], "kernel": 3, "sam_kernel": 7,
            "use_sam": true, "sam_every_block": true, "height_scale": 100.0, "schedule": sched(1, 4)
        },
        "csi_r": {
            "patch": 2, "d_embed": 4, "hidden": [16, 8], "dropout": 0.0, "use_mmr": true,
            "schedule": sched(2, 32)
        },
        "mmf_train_centres": 12, "mmf_val_centres": 4, "baseline_fraction": 0.05, "seed": 0
    });
    let path = dir.join(format!("tiny_{lr:e}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn generate_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let a = p(r, "a");
    let b = p(r, "b");
    ok(r, &["generate", "--seed", "7", "--size", "64", "--density", "0.3", "--out", &a]);
    ok(r, &["generate", "--seed", "7", "--size", "64", "--density", "0.3", "--out", &b]);
    for f in ["scenario.bin", "config.json"] {
        let x = std::fs::read(r.join("a").join(f)).unwrap();
        let y = std::fs::read(r.join("b").join(f)).unwrap();
        if f == "scenario.bin" {
            assert_eq!(x, y);
        } else {
            let (x, y): (serde_json::Value, serde_json::Value) =
                (serde_json::from_slice(&x).unwrap(), serde_json::from_slice(&y).unwrap());
            assert_eq!(x["seed"], y["seed"]);
            assert_eq!(x["command"], "generate");
        }
    }
}

#[test]
fn usage_and_data_errors_map_to_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let o = cf3d(r, &["generate", "--size", "banana"]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_lines(&o), 1);
    let o = cf3d(r, &["frobnicate"]);
    assert_eq!(code(&o), 2);
    let o = cf3d(r, &["generate", "--size", "8"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = cf3d(r, &["sample", "--scene", &p(r, "missing")]);
    assert_eq!(code(&o), 3);
    assert_eq!(stderr_lines(&o), 1);

    std::fs::create_dir_all(r.join("scene")).unwrap();
    std::fs::write(r.join("scene/scenario.bin"), b"not a scenario").unwrap();
    let o = cf3d(r, &["sample"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(code(&cf3d(r, &["--help"])), 0);
    assert_eq!(code(&cf3d(r, &["--version"])), 0);
}

#[test]
fn full_workflow() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    small_samples(r);
    let samples = r.join("samples");
    for f in ["scenario.bin", "ground.bin", "store.bin", "split.json", "config.json"] {
        assert!(samples.join(f).is_file(), "missing {f}");
    }

    // the interpolators are exact at their own noise-free samples
    ok(r, &["eval", "--method", "kriging,nn", "--at-samples", "--out", &p(r, "exact")]);
    let csv = std::fs::read_to_string(r.join("exact/eval.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (mae, rmse): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!(mae < 1e-9 && rmse < 1e-9, "{line}");
    }

    // out may not overwrite an input
    let o = cf3d(r, &["eval", "--method", "idw", "--out", &p(r, "samples")]);
    assert_eq!(code(&o), 2);
    let o = cf3d(r, &["eval", "--method", "linear"]);
    assert_eq!(code(&o), 2);

    let cfg = tiny_config(r, 0.005);
    ok(r, &["train", "--config", &cfg, "--seed", "3"]);
    let model = r.join("model");
    for f in [
        "corr_mmf.ckpt",
        "mmr.ckpt",
        "csi_r.ckpt",
        "pipeline.json",
        "corr_mmf_loss.csv",
        "mmr_loss.csv",
        "csi_r_loss.csv",
        "complexity.csv",
        "config.json",
    ] {
        assert!(model.join(f).is_file(), "missing {f}");
    }
    let receipt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model.join("config.json")).unwrap()).unwrap();
    assert_eq!(receipt["command"], "train");
    assert_eq!(receipt["seed"], 3);

    let out = ok(r, &["eval"]);
    assert!(out.contains("mmf") && out.contains("gpr"), "{out}");
    let csv = std::fs::read_to_string(r.join("eval/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);

    // four truth slices with grid dims, buildings left blank below their roofs
    ok(r, &["plot", "--z", "10,20,30,40"]);
    let plots: Vec<_> = std::fs::read_dir(r.join("plot"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ppm"))
        .collect();
    assert_eq!(plots.len(), 4);
    for e in &plots {
        let bytes = std::fs::read(e.path()).unwrap();
        assert!(bytes.starts_with(b"P6\n64 64\n255\n"));
        assert_eq!(bytes.len(), b"P6\n64 64\n255\n".len() + 3 * 64 * 64);
    }
    let low = std::fs::read_to_string(r.join("plot/rss_z10.csv")).unwrap();
    assert_eq!(low.lines().count(), 64);
    assert!(low.contains("nan"));

    ok(r, &["plot", "--source", "model", "--z", "30,60", "--out", &p(r, "plot_model")]);
    assert!(r.join("plot_model/rss_z60.ppm").is_file());
    let o = cf3d(r, &["plot", "--source", "model", "--z", "10", "--out", &p(r, "bad")]);
    assert_eq!(code(&o), 2);

    ok(r, &["bench", "--queries", "50"]);
    let b = std::fs::read_to_string(r.join("bench/bench.csv")).unwrap();
    assert_eq!(b.lines().count(), 6);
    assert!(b.lines().any(|l| l.starts_with("mmf,") && l.ends_with(",1")));

    let out = ok(
        r,
        &["sweep", "--config", &cfg, "--lambdas", "0,1", "--seeds", "0", "--out", &p(r, "sweep")],
    );
    assert!(out.contains("lambda"));
    let s = std::fs::read_to_string(r.join("sweep/sweep.csv")).unwrap();
    assert_eq!(s.lines().count(), 3);
}

#[test]
fn receipts_replay_to_identical_outputs() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    small_samples(r);
    let cfg = tiny_config(r, 0.005);
    ok(r, &["train", "--config", &cfg]);
    ok(r, &["replay", &p(r, "model/config.json"), "--out", &p(r, "model2")]);
    for f in ["corr_mmf.ckpt", "mmr.ckpt", "csi_r.ckpt", "corr_mmf_loss.csv", "csi_r_loss.csv"] {
        assert_eq!(
            std::fs::read(r.join("model").join(f)).unwrap(),
            std::fs::read(r.join("model2").join(f)).unwrap(),
            "{f}"
        );
    }
    ok(r, &["replay", &p(r, "samples/config.json"), "--out", &p(r, "samples2")]);
    for f in ["store.bin", "ground.bin", "split.json"] {
        assert_eq!(
            std::fs::read(r.join("samples").join(f)).unwrap(),
            std::fs::read(r.join("samples2").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn divergent_training_exits_numeric() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    small_samples(r);
    let cfg = tiny_config(r, 1e300);
    let o = cf3d(r, &["train", "--config", &cfg]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stderr_lines(&o), 1);
}
