//! CLI behavior: config precedence, seed resolution, exit codes and the
//! output-directory layout.

use std::fs;
use std::process::Command;

fn sxl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sxl"))
}

#[test]
fn flags_override_config_file_over_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "count=5\nsize=8\nseed=3\n").unwrap();

    // flag --count beats the config file; size and seed come from the file
    let out_dir = tmp.path().join("out");
    let status = sxl()
        .args(["datagen", "toy", "--count", "7"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let echo = fs::read_to_string(out_dir.join("config.echo")).unwrap();
    assert!(echo.contains("count=7"), "echo: {echo}");
    assert!(echo.contains("size=8"), "echo: {echo}");
    assert!(echo.contains("seed=3"), "echo: {echo}");
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 7);
    assert_eq!(fs::read_dir(out_dir.join("grids")).unwrap().count(), 7);
}

#[test]
fn env_seed_is_fallback_only() {
    let tmp = tempfile::tempdir().unwrap();
    let with_env = tmp.path().join("env");
    let status = sxl()
        .args(["datagen", "toy", "--count", "2", "--size", "8"])
        .arg("--out")
        .arg(&with_env)
        .env("SXL_SEED", "42")
        .status()
        .unwrap();
    assert!(status.success());
    let echo = fs::read_to_string(with_env.join("config.echo")).unwrap();
    assert!(echo.contains("seed=42"), "echo: {echo}");

    // explicit flag wins over the environment
    let with_flag = tmp.path().join("flag");
    let status = sxl()
        .args(["datagen", "toy", "--count", "2", "--size", "8", "--seed", "1"])
        .arg("--out")
        .arg(&with_flag)
        .env("SXL_SEED", "42")
        .status()
        .unwrap();
    assert!(status.success());
    let echo = fs::read_to_string(with_flag.join("config.echo")).unwrap();
    assert!(echo.contains("seed=1"), "echo: {echo}");
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_failures() {
    // unknown verb -> 1
    let status = sxl().arg("frobnicate").output().unwrap();
    assert_eq!(status.status.code(), Some(1));

    // invalid flag value -> 1
    let status = sxl()
        .args(["gan", "train", "--data", "nowhere", "--weighting", "lambda:-1", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    // missing input file -> runtime failure 2
    let status = sxl()
        .args(["eval", "rmse", "--truth", "missing.grd", "--pred", "missing.grd"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // --help is a success
    let status = sxl().arg("--help").output().unwrap();
    assert_eq!(status.status.code(), Some(0));
}

#[test]
fn moran_writes_a_readable_multichannel_stack() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(sxl()
        .args(["datagen", "toy", "--count", "1", "--size", "16", "--seed", "2"])
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let stack = tmp.path().join("stack.grd");
    assert!(sxl()
        .arg("moran")
        .arg("--input")
        .arg(data.join("grids/toy_0000.grd"))
        .args(["--levels", "3"])
        .arg("--out")
        .arg(&stack)
        .status()
        .unwrap()
        .success());
    let read = sxl_core::grdf::read_grid(&stack).unwrap();
    assert_eq!(read.n_channels(), 3);
    assert_eq!(read.factors(), [1, 2, 4]);
}
