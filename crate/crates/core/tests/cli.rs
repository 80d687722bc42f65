use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3
epochs = 1
batch_size = 2

[corpus]
n_train = 4
n_dev = 2
n_test = 2
speakers_train = 2
speakers_dev = 2
speakers_test = 2
utterances_per_speaker = 2
max_duration = 1.1

[denoiser]
erb_bands = 16
encoder_channels = [4]
gt_blocks = 1
dprnn_hidden = 4
dprnn_groups = 2
dprnn_layers = 1

[backbone]
encoder_channels = 2
bottleneck = 8
tcn_hidden = 8
tcn_dilations = [1]
pyramid_scales = [2]
"#;

fn lgtse(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgtse"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(config: &Path, args: &[&str]) -> String {
    let out = lgtse(config, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stamp(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_command_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let data = p("data");

    ok(&cfg, &["simulate", "--out", &data]);
    let s = stamp(&root.join("data/stamp.json"));
    assert_eq!(s["seed"], 3);
    assert_eq!(s["command"], "simulate");
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    assert!(!s["revision"].as_str().unwrap().is_empty());

    ok(&cfg, &["pretrain-denoiser", "--data", &data, "--out", &p("den.ckpt")]);
    assert!(root.join("den.ckpt.stamp.json").exists());
    ok(&cfg, &["pretrain-backbone", "--data", &data, "--denoiser", &p("den.ckpt"), "--out", &p("bb.ckpt")]);
    ok(&cfg, &["finetune", "--data", &data, "--backbone", &p("bb.ckpt"), "--out", &p("joint.ckpt")]);

    // Offline pipeline: build the merged manifest, then train against it.
    ok(&cfg, &["build-offline", "--data", &data, "--denoiser", &p("den.ckpt")]);
    assert!(root.join("data/train/manifest_offline.jsonl").exists());
    let (den, s1, e5) = (p("den.ckpt"), p("s1.ckpt"), p("e5.ckpt"));
    ok(&cfg, &["--set", "strategy=offline", "pretrain-backbone", "--data", &data, "--denoiser", &den, "--out", &s1]);
    ok(&cfg, &["--set", "strategy=offline", "finetune", "--data", &data, "--backbone", &s1, "--out", &e5]);

    let summary = ok(&cfg, &["evaluate", "--checkpoint", &p("e5.ckpt"), "--data", &data, "--report", &p("report.jsonl")]);
    assert!(summary.contains("system = lgtse_offline"));
    assert!(summary.contains("utterances = 2"));
    assert_eq!(std::fs::read_to_string(root.join("report.jsonl")).unwrap().lines().count(), 2);

    let mix = root.join("data/test/mix/test_00000.wav");
    let enroll = root.join("data/test/enroll/test_00000.wav");
    ok(
        &cfg,
        &[
            "extract",
            "--checkpoint",
            &p("joint.ckpt"),
            "--mixture",
            mix.to_str().unwrap(),
            "--enrollment",
            enroll.to_str().unwrap(),
            "--out",
            &p("est.wav"),
        ],
    );
    let est: lgtse::dsp::Waveform<f32> = lgtse::wav::read_wav(&root.join("est.wav")).unwrap();
    let m: lgtse::dsp::Waveform<f32> = lgtse::wav::read_wav(&mix).unwrap();
    assert_eq!(est.len(), m.len());

    let listing = ok(&cfg, &["visualize-guidance", "--checkpoint", &p("joint.ckpt"), "--data", &data, "--out", &p("fig")]);
    assert_eq!(listing.lines().count(), 10);
    assert!(root.join("fig/guidance_denoised.png").exists());
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let code = |args: &[&str]| lgtse(&cfg, args).status.code().unwrap();
    let out = dir.path().join("x").to_string_lossy().into_owned();
    assert_eq!(code(&["--set", "bogus=1", "simulate", "--out", &out]), 4);
    assert_eq!(code(&["--set", "frontend.stft.hop=100", "simulate", "--out", &out]), 4);
    let missing = dir.path().join("none.ckpt").to_string_lossy().into_owned();
    assert_eq!(code(&["evaluate", "--checkpoint", &missing, "--data", &out]), 5);
    let bad = Command::new(env!("CARGO_BIN_EXE_lgtse")).arg("no-such-command").output().unwrap();
    assert!(!bad.status.success());
}
