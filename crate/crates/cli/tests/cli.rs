use std::fs;
use std::process::{Command, Output};

fn balred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_balred"))
        .args(args)
        .env_remove("BALRED_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: &[&str] = &[
    "--set",
    "d=20",
    "--set",
    "end_times=0.5, 1",
    "--set",
    "ranks=1-3",
    "--set",
    "step=0.05",
    "--set",
    "n_trials=5",
];

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&balred(&["--help"])), 0);
    assert_eq!(code(&balred(&["run", "--help"])), 0);
    assert_eq!(code(&balred(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&balred(&[])), 1);
    assert_eq!(code(&balred(&["frobnicate"])), 1);
    assert_eq!(code(&balred(&["gramians", "heat"])), 1);
    assert_eq!(code(&balred(&["gramians", "heat", "--te", "soon"])), 1);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cases: &[&[&str]] = &[
        &["run", "no-such-preset", "--out", out],
        &["run", "heat", "--out", out, "--set", "ranks"],
        &["run", "heat", "--out", out, "--set", "colour=blue"],
        &["run", "heat", "--out", out, "--set", "ranks=500"],
        &["run", "advdiff", "--out", out, "--set", "methods=BT"],
        &["fourdvar", "heat", "--experiment", "other"],
    ];
    for args in cases {
        let res = balred(args);
        assert_eq!(
            code(&res),
            1,
            "{args:?}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
        assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
    }

    let bad = dir.path().join("bad.ini");
    fs::write(&bad, "[x]\nmodel = heat\nd = many\n").unwrap();
    assert_eq!(
        code(&balred(&["run", bad.to_str().unwrap(), "--out", out])),
        1
    );
}

#[test]
fn bad_worker_count_exits_1() {
    let res = Command::new(env!("CARGO_BIN_EXE_balred"))
        .args(["gramians", "heat", "--te", "1", "--set", "d=5"])
        .env("BALRED_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&res), 1);
}

#[test]
fn run_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let mut args = vec!["run", "heat", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let res = balred(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    let listed: Vec<String> = stdout(&res).lines().map(String::from).collect();
    assert!(listed.iter().all(|p| fs::metadata(p).is_ok()));
    let csv = fs::read_to_string(out.join("heat.csv")).unwrap();
    // 4 methods x 2 end times x 3 ranks
    assert_eq!(csv.lines().count(), 1 + 24);
    assert!(csv.starts_with("model,method,t_e,rank,"));
    assert!(out.join("heat_foerstner.svg").exists());
    assert!(out.join("heat_risk.svg").exists());
    assert!(out.join("summary_heat.txt").exists());

    // same seed, same bytes
    let again = dir.path().join("again");
    let mut args = vec![
        "run",
        "heat",
        "--out",
        again.to_str().unwrap(),
        "--no-plots",
    ];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&balred(&args)), 0);
    assert_eq!(
        fs::read(out.join("heat.csv")).unwrap(),
        fs::read(again.join("heat.csv")).unwrap()
    );
    assert!(!again.join("heat_risk.svg").exists());
}

#[test]
fn run_reads_an_ini_file_and_skips_large() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("exp.ini");
    fs::write(
        &ini,
        "methods = TLBT, OLR\nprior = identity\nsigma_obs = 0.01\nseed = 3\nend_times = 1\nranks = 1-2\nstep = 0.1\nn_trials = 0\n\
         [small]\nmodel = heat\nd = 10\n\
         [big]\nmodel = heat\nd = 12\nlarge = true\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = balred(&["run", ini.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("small.csv").exists());
    assert!(!out.join("big.csv").exists());
    assert!(String::from_utf8_lossy(&res.stderr).contains("--large"));

    let res = balred(&[
        "run",
        ini.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--large",
    ]);
    assert_eq!(code(&res), 0);
    assert!(out.join("big.csv").exists());
}

#[test]
fn gramians_prints_spectra() {
    let res = balred(&[
        "gramians",
        "heat",
        "--te",
        "1",
        "--set",
        "d=10",
        "--set",
        "step=0.1",
        "--set",
        "ranks=1-5",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = stdout(&res);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("experiment,method,index,value,normalized")
    );
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().any(|l| l.starts_with("heat,TLBT,1,")));
    assert!(rows.iter().any(|l| l.starts_with("heat,BT-H,1,")));
}

#[test]
fn fourdvar_reports_one_iteration() {
    let res = balred(&[
        "fourdvar",
        "heat",
        "--set",
        "d=20",
        "--set",
        "fourdvar_steps=10",
        "--set",
        "fourdvar_rank=5",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = stdout(&res);
    assert!(text.contains("state dimension: 20, steps: 10"));
    assert!(text.contains("full: 1 outer iterations, converged = true"));
}
