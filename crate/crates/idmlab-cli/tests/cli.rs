//! End-to-end CLI checks: the generate/train/eval/ablate/mask-study loop in
//! a scratch directory, exit-code classes, and byte-identical reruns.

use std::path::Path;
use std::process::Command;

fn idmlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_idmlab"))
}

fn write_tiny_config(path: &Path) {
    let config = r#"{
        "world": { "resolution": 32, "episode_len": 6 },
        "dataset": { "train_fraction": 0.5, "light_fraction": 0.5 },
        "pipeline": {
            "encoder": { "resolution": 32, "patch": 4, "channels": 8, "context_dim": 8 },
            "dfa": { "directions": 4, "dir_channels": 4, "tap_len": 3, "temperature": 1.0 },
            "tdr": {
                "window": 4, "max_offset": 2.0, "fusion_hidden": 4,
                "tcn_dilations": [1, 2], "tcn_kernel": 2, "tcn_channels": 8,
                "regressor_hidden": 16, "beta_init": 0.1, "fusion_cascaded": false
            },
            "learning_rate": 0.002, "epochs": 2, "batch_size": 4,
            "windows_per_episode": 2, "augment_px": 1, "seed": 3
        }
    }"#;
    std::fs::write(path, config).unwrap();
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn full_cli_loop_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    write_tiny_config(&config);

    // generate twice with the same seed: byte-identical datasets.
    for data_dir in ["data_a", "data_b"] {
        let status = idmlab()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join(data_dir))
            .args(["--episodes", "4", "--seed", "11"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        dir_snapshot(&tmp.path().join("data_a")),
        dir_snapshot(&tmp.path().join("data_b"))
    );

    let data = tmp.path().join("data_a");

    // train twice: byte-identical models.
    for model_dir in ["model_a", "model_b"] {
        let status = idmlab()
            .args(["train", "--data"])
            .arg(&data)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join(model_dir))
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        dir_snapshot(&tmp.path().join("model_a")),
        dir_snapshot(&tmp.path().join("model_b"))
    );

    // eval in each format.
    for (fmt, name) in [("csv", "r.csv"), ("json", "r.json"), ("svg", "r.svg")] {
        let report = tmp.path().join(name);
        let status = idmlab()
            .args(["eval", "--model"])
            .arg(tmp.path().join("model_a"))
            .arg("--data")
            .arg(&data)
            .arg("--report")
            .arg(&report)
            .args(["--format", fmt])
            .status()
            .unwrap();
        assert!(status.success(), "format {fmt}");
        assert!(report.exists());
    }
    let csv = std::fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("variant,split,acc,acc_per_dim,l1,n\n"));
    let svg = std::fs::read_to_string(tmp.path().join("r.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    // eval twice: byte-identical reports.
    let report_c = tmp.path().join("r2.csv");
    idmlab()
        .args(["eval", "--model"])
        .arg(tmp.path().join("model_a"))
        .arg("--data")
        .arg(&data)
        .arg("--report")
        .arg(&report_c)
        .args(["--format", "csv"])
        .status()
        .unwrap();
    assert_eq!(
        std::fs::read(tmp.path().join("r.csv")).unwrap(),
        std::fs::read(&report_c).unwrap()
    );

    // mask-study.
    let study = tmp.path().join("study.csv");
    let status = idmlab()
        .args(["mask-study", "--model"])
        .arg(tmp.path().join("model_a"))
        .arg("--data")
        .arg(&data)
        .args(["--severities", "0.0,0.5"])
        .arg("--report")
        .arg(&study)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&study).unwrap();
    assert!(text.starts_with("severity,split,clean_l1,degraded_l1,n\n"));
    assert_eq!(text.lines().count(), 5); // header + 2 severities x 2 splits
}

#[test]
fn ablate_produces_a_variant_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    write_tiny_config(&config);
    let data = tmp.path().join("data");
    assert!(idmlab()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data)
        .args(["--episodes", "4", "--seed", "2"])
        .status()
        .unwrap()
        .success());

    let report = tmp.path().join("ablate.csv");
    let status = idmlab()
        .args(["ablate", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&config)
        .args(["--variants", "full,no_tdr"])
        .arg("--report")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 5); // header + 2 variants x 2 splits
    assert!(text.contains("full,light,"));
    assert!(text.contains("no_tdr,heavy,"));
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = tempfile::tempdir().unwrap();

    // Malformed config -> 2.
    let bad_config = tmp.path().join("bad.json");
    std::fs::write(&bad_config, "{ nope").unwrap();
    let status = idmlab()
        .args(["generate", "--config"])
        .arg(&bad_config)
        .arg("--out")
        .arg(tmp.path().join("x"))
        .args(["--episodes", "2", "--seed", "1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Missing dataset -> 3.
    let config = tmp.path().join("config.json");
    write_tiny_config(&config);
    let status = idmlab()
        .args(["train", "--data"])
        .arg(tmp.path().join("missing"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("m"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    // Unknown variant name -> 2.
    let data = tmp.path().join("data");
    assert!(idmlab()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data)
        .args(["--episodes", "4", "--seed", "1"])
        .status()
        .unwrap()
        .success());
    let status = idmlab()
        .args(["ablate", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&config)
        .args(["--variants", "bogus"])
        .arg("--report")
        .arg(tmp.path().join("r.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
