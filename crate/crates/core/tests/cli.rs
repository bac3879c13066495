use std::path::{Path, PathBuf};
use std::process::Command;

use shipgrid::cli::{self, EXIT_INVALID, EXIT_OK, EXIT_USAGE};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

fn shipgrid(args: &[&str]) -> (u8, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("shipgrid").chain(args.iter().copied());
    let code = cli::main(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn validate_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_shipgrid"))
        .current_dir(dir.path())
        .args(["validate", scenario("nominal").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(String::from_utf8_lossy(&status.stdout).starts_with("nominal: ok"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn missing_scenario_is_invalid_input() {
    let (code, _, err) = shipgrid(&["run", "missing.toml"]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("missing.toml"), "{err}");
}

#[test]
fn run_writes_csv_into_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, stdout, _) = shipgrid(&[
        "run",
        scenario("loadshare").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let csv = out.join("loadshare.csv");
    assert!(csv.exists(), "{stdout}");
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("t,v_0,v_1,"));
    assert_eq!(text.lines().count(), 30_002);
}

#[test]
fn usage_errors() {
    assert_eq!(shipgrid(&[]).0, EXIT_USAGE);
    assert_eq!(shipgrid(&["launch"]).0, EXIT_USAGE);
    let (code, _, err) = shipgrid(&[
        "detect",
        scenario("nominal").to_str().unwrap(),
        "--model",
        "m.bin",
        "--channel",
        "v_bar_9",
    ]);
    assert_eq!(code, EXIT_USAGE, "{err}");
    let (code, stdout, _) = shipgrid(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("train-detector"));
}

#[test]
fn malformed_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\nduraton = 3.0\n").unwrap();
    let (code, _, err) = shipgrid(&["validate", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("duraton") && err.contains('2'), "{err}");
}

#[test]
fn train_then_detect() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("short.toml");
    std::fs::write(
        &scn,
        "name = \"short\"\nduration = 2.0\nseed = 3\n\
         [noise]\nvoltage = 0.5\n\
         [[detector]]\nsignal = \"v_bar_1\"\nwindow = 10\nmax_epochs = 200\nstride = 5\n\
         [[attack]]\nkind = \"drift\"\ntargets = [1]\nramp_rate = 1e5\nthreshold = 60.0\nstart = 1.5\n",
    )
    .unwrap();
    let model = dir.path().join("v1.model");
    let (code, stdout, err) = shipgrid(&[
        "train-detector",
        scn.to_str().unwrap(),
        "--channel",
        "v_bar_1",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.contains("radius="), "{stdout}");
    assert!(model.exists());

    let out = dir.path().join("res");
    let (code, stdout, err) = shipgrid(&[
        "detect",
        scn.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--channel",
        "v_bar_1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.contains("v_bar_1: tp="), "{stdout}");
    let header = std::fs::read_to_string(out.join("short.csv")).unwrap();
    assert!(header
        .lines()
        .next()
        .unwrap()
        .ends_with("det_v_bar_1_flag,det_v_bar_1_value,det_v_bar_1_pred"));
}

#[test]
fn corrupt_model_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("junk.model");
    std::fs::write(&model, b"not a model").unwrap();
    let (code, _, _) = shipgrid(&[
        "detect",
        scenario("nominal").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_INVALID);
}

#[test]
fn version() {
    let (code, stdout, _) = shipgrid(&["version"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(stdout.trim(), format!("shipgrid {}", env!("CARGO_PKG_VERSION")));
}
