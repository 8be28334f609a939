use ozlab::Kernel;
use ozlab_cli::run_with;
use serde_json::Value;
use std::process::Command;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ozlab").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn csv_rows(s: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(s.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn diagnostic(err: &str) -> Value {
    serde_json::from_str(err.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {err}"))
}

#[test]
fn mass_prints_the_closed_form() {
    let (code, out, _) = run(&["mass", "--kernel", "nn", "--d", "2", "--z", "0.5"]);
    assert_eq!(code, 0);
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, ["z", "mass"]);
    let m: f64 = rows[0][1].parse().unwrap();
    assert!((m - 3f64.acosh()).abs() < 1e-14);
    assert!(rows[0][1].starts_with("1.762747"));
}

#[test]
fn validation_errors_exit_with_two() {
    for args in [
        vec!["mass", "--kernel", "nn", "--d", "2", "--z", "1.5"],
        vec!["mass", "--kernel", "hexagonal", "--d", "2", "--z", "0.5"],
        vec!["norm", "--kernel", "nn", "--d", "2", "--z", "0.5", "--x", "1,2,3"],
        vec!["mass", "--kernel", "nn", "--z", "0.5"],
        vec!["mass", "--z", "0.5", "--kernel", "nn", "--d", "2", "--threads", "0"],
        vec!["frobnicate"],
    ] {
        let (code, out, err) = run(&args);
        assert_eq!(code, 2, "{args:?}: {err}");
        assert!(out.is_empty());
        let d = diagnostic(&err);
        assert!(d["error"].is_string() && d["message"].is_string(), "{d}");
    }
}

#[test]
fn saturated_mass_is_a_solver_failure() {
    let (code, _, err) = run(&["mass", "--kernel", "saturation_1d", "--p", "2", "--z", "0.01"]);
    assert_eq!(code, 3, "{err}");
    assert!(diagnostic(&err)["error"].is_string());
}

#[test]
fn csv_and_json_outputs_reparse() {
    let cases: Vec<Vec<&str>> = vec![
        vec!["norm", "--kernel", "nn", "--d", "2", "--z", "0.5", "--x", "1,1", "--x", "3,4"],
        vec!["tilt", "--kernel", "linf_box", "--d", "2", "--z", "0.5", "--x", "2,1"],
        vec!["wulff", "--kernel", "nn", "--d", "2", "--z", "0.5", "--samples", "12"],
        vec!["green", "--kernel", "nn", "--d", "2", "--z", "0.5", "--x", "0,0", "--x", "3,1"],
        vec!["green", "--kernel", "nn", "--d", "1", "--z", "0.6", "--x", "2", "--method", "exact"],
        vec!["chi", "--kernel", "nn", "--d", "2", "--z", "0.5", "--mu", "0.2,0"],
        vec!["xi", "--kernel", "nn", "--d", "1", "--z", "0.6", "--tol", "1e-6"],
        vec!["crossover", "--kernel", "nn", "--d", "2", "--z", "0.8", "--ray", "1,1", "--nmin", "2", "--nmax", "4"],
        vec!["oz", "--kernel", "nn", "--d", "3", "--z", "0.5", "--x", "10,0,0"],
        vec!["envelope", "--kernel", "nn", "--d", "3", "--z", "0.6", "--ray", "1,0,0", "--nmin", "5", "--nmax", "7"],
        vec!["critical-decay", "--kernel", "nn", "--d", "3", "--zs", "0.9,0.95"],
        vec!["ncgl", "--kernel", "nn", "--d", "2", "--z", "0.9", "--x", "3,3", "--x", "5,5"],
        vec!["saturation", "--p", "2", "--z", "0.01", "--xmax", "10"],
        vec!["scan-monotone", "--kernel", "nn", "--d", "2", "--x", "1,1", "--steps", "8"],
        vec!["qcheck", "--kernel", "nn", "--d", "2", "--z", "0.5", "--grid", "32"],
    ];
    for args in cases {
        let (code, out, err) = run(&args);
        assert_eq!(code, 0, "{args:?}: {err}");
        let (header, rows) = csv_rows(&out);
        assert!(!rows.is_empty(), "{args:?}");
        assert!(rows.iter().all(|r| r.len() == header.len()), "{args:?}");

        let mut json_args = args.clone();
        json_args.extend(["--format", "json"]);
        let (code, out, err) = run(&json_args);
        assert_eq!(code, 0, "{args:?}: {err}");
        let v: Value = serde_json::from_str(&out).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        assert!(v.is_object() || v.is_array());
    }
}

#[test]
fn ball_at_small_z_approximates_the_l1_ball() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ball.csv");
    let p = path.to_str().unwrap();
    let (code, out, err) = run(&["ball", "--kernel", "nn", "--d", "2", "--z", "0.001", "--samples", "360", "--out", p]);
    assert_eq!(code, 0, "{err}");
    assert!(out.is_empty());
    let (header, rows) = csv_rows(&std::fs::read_to_string(&path).unwrap());
    assert_eq!(header, ["theta", "x_1", "x_2"]);
    assert_eq!(rows.len(), 360);
    for r in &rows {
        let x: f64 = r[1].parse().unwrap();
        let y: f64 = r[2].parse().unwrap();
        assert!((x.abs() + y.abs() - 1.0).abs() < 0.2, "{x} {y}");
    }
}

#[test]
fn scan_flags_the_non_monotone_witness() {
    let args = ["scan-monotone", "--kernel", "perturbed_nn", "--alpha", "0.05", "--x", "1,1", "--zmin", "0.01", "--zmax", "0.99", "--steps", "98"];
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 99);
    assert!(rows.iter().any(|r| r[2] == "1"));
    let (_, out, _) = run(&["scan-monotone", "--kernel", "nn", "--d", "2", "--x", "1,1"]);
    assert!(csv_rows(&out).1.iter().all(|r| r[2] == "0"));
}

#[test]
fn kernel_files_match_named_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.json");
    std::fs::write(&path, Kernel::linf_box(2).unwrap().to_json().to_string()).unwrap();
    let (code, from_file, err) = run(&["norm", "--kernel-file", path.to_str().unwrap(), "--z", "0.4", "--x", "2,1"]);
    assert_eq!(code, 0, "{err}");
    let (_, named, _) = run(&["norm", "--kernel", "linf_box", "--d", "2", "--z", "0.4", "--x", "2,1"]);
    assert_eq!(from_file, named);

    std::fs::write(&path, "{\"not\": \"a kernel\"}").unwrap();
    let (code, _, _) = run(&["mass", "--kernel-file", path.to_str().unwrap(), "--z", "0.4"]);
    assert_eq!(code, 2);
}

#[test]
fn crossover_csv_writes_a_metadata_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let p = path.to_str().unwrap();
    let (code, _, err) = run(&["crossover", "--kernel", "nn", "--d", "2", "--z", "0.8", "--x", "3,3", "--out", p]);
    assert_eq!(code, 0, "{err}");
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.csv.meta.json")).unwrap()).unwrap();
    assert!(meta.is_object());
}

fn binary(args: &[&str], env: &[(&str, &str)]) -> std::process::Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ozlab"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

#[test]
fn identical_runs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = vec![];
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let path = dir.path().join(format!("g{i}.csv"));
        let o = binary(
            &["green", "--kernel", "nn", "--d", "3", "--z", "0.7", "--x", "0,0,0", "--x", "4,2,1", "--threads", threads, "--out", path.to_str().unwrap()],
            &[],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&path).unwrap());
    }
    let again = dir.path().join("g2.csv");
    let o = binary(
        &["green", "--kernel", "nn", "--d", "3", "--z", "0.7", "--x", "0,0,0", "--x", "4,2,1", "--threads", "4", "--out", again.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success());
    outputs.push(std::fs::read(&again).unwrap());
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn memory_cap_comes_from_the_environment() {
    let args = ["green", "--kernel", "nn", "--d", "3", "--z", "0.99", "--x", "40,0,0", "--method", "series"];
    let o = binary(&args, &[("OZLAB_MEM_CAP_MB", "1")]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let d = diagnostic(&String::from_utf8(o.stderr).unwrap());
    assert_eq!(d["error"], "box_too_large");

    let o = binary(&["mass", "--kernel", "nn", "--d", "2", "--z", "0.5"], &[("OZLAB_MEM_CAP_MB", "lots")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for s in [
        "mass", "norm", "tilt", "wulff", "ball", "green", "chi", "xi", "crossover", "oz", "envelope", "critical-decay", "ncgl",
        "saturation", "scan-monotone", "qcheck",
    ] {
        assert!(out.contains(s), "{s}");
    }
}
