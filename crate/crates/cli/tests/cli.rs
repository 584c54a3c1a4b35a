//! End-to-end tests of the `edm` binary: generation, pipeline runs,
//! format handling, exit codes, and the distributed commands.

use std::path::Path;
use std::process::{Command, Output};

fn edm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edm"))
}

fn run(args: &[&str]) -> Output {
    edm().args(args).output().expect("spawn edm")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed.\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_coupled(dir: &Path, name: &str, pairs: usize, length: usize) -> std::path::PathBuf {
    let path = dir.join(name);
    let out = run(&[
        "gen",
        "--kind",
        "coupled",
        "--pairs",
        &pairs.to_string(),
        "--length",
        &length.to_string(),
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_success(&out);
    path
}

#[test]
fn pipeline_writes_map_with_correct_header() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_coupled(dir.path(), "pairs.csv", 2, 300);
    let output = dir.path().join("map.edm1");
    let out = run(&[
        "pipeline",
        "--input",
        input.to_str().unwrap(),
        "--emax",
        "5",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_success(&out);

    let bytes = std::fs::read(&output).unwrap();
    assert_eq!(&bytes[0..4], b"EDM1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
    assert_eq!(bytes[12], 0); // float32
    assert_eq!(bytes.len(), 16 + 4 * 4 * 4);
    assert!(dir.path().join("map.edm1.manifest.toml").exists());
    assert!(dir.path().join("map.edm1.opt_e.csv").exists());
}

#[test]
fn naive_and_default_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_coupled(dir.path(), "pairs.csv", 2, 250);
    let fast = dir.path().join("fast.edm1");
    let naive = dir.path().join("naive.edm1");
    for (flag, path) in [(false, &fast), (true, &naive)] {
        let mut args = vec![
            "pipeline",
            "--input",
            input.to_str().unwrap(),
            "--emax",
            "4",
            "--output",
            path.to_str().unwrap(),
        ];
        if flag {
            args.push("--naive");
        }
        assert_success(&run(&args));
    }
    assert_eq!(std::fs::read(&fast).unwrap(), std::fs::read(&naive).unwrap());
}

#[test]
fn missing_input_exits_2() {
    let out = run(&[
        "pipeline",
        "--input",
        "/definitely/not/here.csv",
        "--output",
        "/tmp/unused.edm1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("No such file"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["pipeline", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_csv_exits_2_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "1,2\n3\n").unwrap();
    let out = run(&[
        "pipeline",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("m.edm1").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line") || stderr.contains(":2"), "stderr: {stderr}");
}

#[test]
fn help_documents_every_flag() {
    let checks: &[(&str, &[&str])] = &[
        (
            "pipeline",
            &[
                "--input",
                "--format",
                "--emax",
                "--tau",
                "--output",
                "--threads",
                "--naive",
                "--no-self-exclusion",
                "--knn-budget-mib",
                "--manifest",
                "--opt-e",
            ],
        ),
        (
            "simplex",
            &["--input", "--format", "--emax", "--tau", "--report", "--threads"],
        ),
        (
            "master",
            &[
                "--bind",
                "--input",
                "--output",
                "--emax",
                "--tau",
                "--tasks-per-request",
                "--push-dataset",
                "--no-self-exclusion",
            ],
        ),
        (
            "worker",
            &["--master", "--threads", "--worker-id", "--workdir", "--max-reconnect"],
        ),
        (
            "gen",
            &[
                "--kind",
                "--pairs",
                "--series",
                "--length",
                "--beta-yx",
                "--beta-xy",
                "--rx",
                "--ry",
                "--seed",
                "--output",
                "--format",
            ],
        ),
        (
            "bench",
            &["--mode", "--seeds", "--report", "--threads", "--emax", "--seed"],
        ),
    ];
    for (cmd, flags) in checks {
        let out = run(&[cmd, "--help"]);
        assert_success(&out);
        let help = String::from_utf8_lossy(&out.stdout);
        for flag in *flags {
            assert!(help.contains(flag), "{cmd} --help missing {flag}");
        }
    }
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (path, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert_success(&run(&[
            "gen",
            "--kind",
            "noise",
            "--series",
            "3",
            "--length",
            "50",
            "--seed",
            seed,
            "--output",
            path.to_str().unwrap(),
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn simplex_report_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_coupled(dir.path(), "pairs.csv", 3, 200);
    let report = dir.path().join("report.csv");
    assert_success(&run(&[
        "simplex",
        "--input",
        input.to_str().unwrap(),
        "--emax",
        "6",
        "--report",
        report.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 6); // header + one row per series
    assert_eq!(lines[0].split(',').count(), 4 + 6); // meta + rho_e1..rho_e6
}

#[test]
fn edm1_roundtrip_through_gen_and_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.edm1");
    assert_success(&run(&[
        "gen",
        "--kind",
        "dummy",
        "--series",
        "4",
        "--length",
        "200",
        "--output",
        input.to_str().unwrap(),
    ]));
    let output = dir.path().join("map.edm1");
    assert_success(&run(&[
        "pipeline",
        "--input",
        input.to_str().unwrap(),
        "--emax",
        "3",
        "--output",
        output.to_str().unwrap(),
    ]));
    assert!(output.exists());
}

#[test]
fn master_and_worker_processes_complete() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_coupled(dir.path(), "pairs.csv", 2, 200);
    let output = dir.path().join("map.edm1");

    let mut master = edm()
        .args([
            "master",
            "--bind",
            "127.0.0.1:0",
            "--input",
            input.to_str().unwrap(),
            "--emax",
            "3",
            "--output",
            output.to_str().unwrap(),
        ])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();

    // The master prints its bound address on the first line. Keep the
    // pipe open and drained so later prints cannot hit a broken pipe.
    use std::io::{BufRead, BufReader, Read};
    let stdout = master.stdout.take().unwrap();
    let mut reader = BufReader::new(stdout);
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .rsplit(' ')
        .next()
        .expect("address in line")
        .to_string();
    let drain = std::thread::spawn(move || {
        let mut rest = String::new();
        let _ = reader.read_to_string(&mut rest);
        rest
    });

    let worker = edm()
        .args([
            "worker",
            "--master",
            &addr,
            "--threads",
            "1",
            "--workdir",
            dir.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(worker.success());
    assert!(master.wait().unwrap().success());
    let _ = drain.join();
    assert!(output.exists());
}
