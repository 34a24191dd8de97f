//! End-to-end checks of the `momfilter` binary: determinism of preset
//! artifacts, the diff/fit/simulate subcommands, and exit codes.

use std::path::Path;
use std::process::Command;

fn momfilter() -> Command {
    Command::new(env!("CARGO_BIN_EXE_momfilter"))
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn preset_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["one", "two"] {
        let status = momfilter()
            .args(["preset", "fig1", "--out"])
            .arg(dir.path().join(run))
            .status()
            .unwrap();
        assert!(status.success());
    }
    // Everything except the summary (whose runtime column is wall clock) must
    // be reproducible byte for byte.
    let mut compared = 0;
    for entry in std::fs::read_dir(dir.path().join("one")).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "summary.csv" {
            continue;
        }
        assert_eq!(
            read(&dir.path().join("one").join(&name)),
            read(&dir.path().join("two").join(&name)),
            "{name:?} differs between identical runs"
        );
        compared += 1;
    }
    assert!(compared >= 9, "only {compared} artifacts compared");
}

#[test]
fn diff_reports_zero_for_identical_files_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let status = momfilter()
        .args(["preset", "fig1", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());

    let exact = dir.path().join("density_exact.csv");
    let out = momfilter().arg("diff").arg(&exact).arg(&exact).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("linf 0"), "{text}");
    assert!(text.contains("l1 0"), "{text}");
    assert!(text.contains("peak_gap 0"), "{text}");

    // Mismatched windows exit with the configuration code.
    let other = dir.path().join("other.csv");
    std::fs::write(&other, "z,value\n0,1\n1,2\n").unwrap();
    let out = momfilter().arg("diff").arg(&exact).arg(&other).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_prints_parseable_odd_polynomial() {
    let out = momfilter()
        .args([
            "fit",
            "--target",
            "tanh-drift",
            "--a",
            "0.8",
            "--sigma",
            "0.5",
            "--method",
            "lsm",
            "--degree",
            "11",
            "--weight-w",
            "2.0",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let poly = momfilter_core::polyops::MultiPoly::parse(1, &text).unwrap();
    assert_eq!(poly.degree(), 11);
    for k in [0u32, 2, 4, 6, 8, 10] {
        assert_eq!(poly.coefficient(&[k]).norm(), 0.0);
    }

    // Taylor of the square-root correction: frozen hand-derived values.
    let out = momfilter()
        .args([
            "fit", "--target", "sqrt-vol", "--mu", "1.0", "--method", "taylor", "--degree", "3",
            "--center", "1.0",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let poly = momfilter_core::polyops::MultiPoly::parse(1, &text).unwrap();
    assert!((poly.coefficient(&[3]).re - 1.0 / 16.0).abs() < 1e-12);
}

#[test]
fn simulate_writes_deterministic_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("model.toml");
    std::fs::write(
        &cfg,
        r#"
[model]
kind = "benes"
a = 0.8
sigma = 0.5
h1 = 0.8
h2 = 0.5

[path]
source = "simulate"
seed = 7
steps = 200
horizon = 1.0

[solver]
scheme = "zakai"
max_order = 1
dt = 0.005

[output]
z_min = -3.0
z_max = 3.0
points = 101
"#,
    )
    .unwrap();
    let (fa, fb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for f in [&fa, &fb] {
        let status = momfilter()
            .arg("simulate")
            .arg(&cfg)
            .args(["--seed", "9"])
            .arg("--out")
            .arg(f)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(&fa), read(&fb));
    let path = momfilter_core::simulate::load_path(&fa).unwrap();
    assert_eq!(path.steps(), 200);
}

#[test]
fn config_errors_use_exit_code_two() {
    let out = momfilter().args(["preset", "fig9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "this is not toml = [").unwrap();
    let out = momfilter().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    let out = momfilter().arg("run").arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_mismatch_uses_exit_code_four() {
    // fig1 with an absurdly tight sup-norm bound trips the mismatch path.
    let text = momfilter_cli::presets::preset_toml("fig1").unwrap();
    let tight = text.replace("[oracle]\nkind = \"cir\"", "[oracle]\nkind = \"cir\"\nmax_linf = 1e-12");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.toml");
    std::fs::write(&cfg, tight).unwrap();
    let out = momfilter()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn solver_scheme_is_selectable_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("both.toml");
    std::fs::write(
        &cfg,
        r#"
[model]
kind = "benes"
a = 0.3
sigma = 0.5
h1 = 0.2
h2 = 0.1

[path]
source = "simulate"
seed = 5
steps = 100
horizon = 0.1

[solver]
scheme = "zakai"
max_order = 1
dt = 0.001
substeps = 100
substep_order = 1
modes = 49
xi_max = 12.0

[output]
z_min = -2.0
z_max = 2.0
points = 201

[oracle]
kind = "benes"

[[variants]]
name = "unnormalized"

[[variants]]
name = "normalized"
scheme = "ks"
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let status = momfilter()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.contains("unnormalized,ok"));
    assert!(summary.contains("normalized,ok"));
    assert!(out_dir.join("density_normalized.csv").exists());
}

#[test]
fn verbose_runs_write_step_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let status = momfilter()
        .args(["preset", "fig1", "--verbose", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.path().join("diagnostics_order1.csv")).unwrap();
    assert!(text.starts_with("t,mass,symmetry_residual\n"));
    assert_eq!(text.lines().count(), 3001); // header + one row per step
}

#[test]
fn custom_models_run_from_explicit_polynomials() {
    // A mean-reverting drift written out in the text polynomial form, solved
    // unconditionally; the mean must relax toward the long-run level.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("custom.toml");
    std::fs::write(
        &cfg,
        r#"
[model]
kind = "custom"
n = 1
m = 0
d = 1
eps = 1.0
free_drift = [0.0]
free_diffusion = [[0.4]]
drift = ["0.5\n-0.5 * x1"]

[law]
kind = "dirac"
x0 = [0.0]

[path]
source = "none"
horizon = 1.0

[solver]
scheme = "unconditional"
max_order = 1
dt = 0.001
substeps = 1000
substep_order = 1
modes = 65
xi_max = 12.0

[output]
z_min = -2.0
z_max = 3.0
points = 251
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let status = momfilter()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let mean: f64 = summary
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(7)
        .unwrap()
        .parse()
        .unwrap();
    // dX = 0.5 (1 - X) dt + noise from X0 = 0: E X_1 = 1 - exp(-0.5).
    let expected = 1.0 - (-0.5f64).exp();
    assert!(
        (mean - expected).abs() < 5e-3,
        "custom-model mean {mean} vs {expected}"
    );
}

#[test]
fn output_root_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let status = momfilter()
        .args(["preset", "fig1"])
        .env("MOMFILTER_OUT", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("fig1").join("summary.csv").exists());
}
