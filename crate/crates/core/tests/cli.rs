use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;

use qecc_lab::codes::read_code_file;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qecc-lab"))
}

fn run(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = bin().args(args).current_dir(cwd).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn code_export_writes_an_8_by_16_parity_check_for_toric_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["code", "export", "--family", "toric", "--L", "2", "--out", "code.bin"], dir.path());
    assert_eq!(code, 0, "{err}");
    let text = fs::read(dir.path().join("code.bin")).unwrap();
    let header = String::from_utf8_lossy(&text[..text.windows(2).position(|w| w == b"\n\n").unwrap()]).into_owned();
    for line in ["family=toric", "L=2", "n=8", "n_s=8"] {
        assert!(header.lines().any(|l| l == line), "{line} missing from {header}");
    }
    let parsed = read_code_file(&mut BufReader::new(fs::File::open(dir.path().join("code.bin")).unwrap())).unwrap();
    assert_eq!((parsed.parity_check().rows(), parsed.parity_check().cols()), (8, 16));
    assert!(dir.path().join("code.bin.manifest").is_file());
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&["selftest"], dir.path());
    assert_eq!(code, 0, "{out}{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("ok")).count(), 6, "{out}");
}

#[test]
fn plot_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let (mwpm, qecct) = (data("mwpm.csv"), data("qecct.csv"));
    let args = ["plot", "--in", mwpm.to_str().unwrap(), qecct.to_str().unwrap(), "--out", "fig.svg", "--thresholds"];
    let (code, _, err) = run(&args, dir.path());
    assert_eq!(code, 0, "{err}");
    let svg = fs::read_to_string(dir.path().join("fig.svg")).unwrap();
    let golden = data("golden_plot.svg");
    if std::env::var_os("QECC_BLESS").is_some() {
        fs::write(&golden, &svg).unwrap();
    }
    assert_eq!(svg, fs::read_to_string(golden).unwrap());
    assert_eq!(svg.matches("<polyline").count(), 3);

    let (code, _, _) = run(&args, dir.path());
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(dir.path().join("fig.svg")).unwrap(), svg);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["plot", "--out", "fig.svg"],
        vec!["plot", "--in", "--out", "fig.svg"],
        vec!["frobnicate"],
        vec!["code", "export", "--family", "hexagonal", "--L", "3", "--out", "x"],
        vec!["eval", "--decoder", "neural", "--p", "0.1", "--out", "x.csv"],
        vec!["sample", "--code", "toric", "--channel", "independent", "--p", "0.1", "--n-samples", "3", "--out", "x"],
    ] {
        let (code, _, err) = run(&args, dir.path());
        assert_eq!(code, 2, "{args:?}: {err}");
        assert!(!err.is_empty(), "{args:?}");
    }
    let (code, out, _) = run(&["--help"], dir.path());
    assert_eq!(code, 0);
    assert!(out.contains("selftest"));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(
        &["decode", "mwpm", "--code", "toric:3", "--dataset", "missing.qsyn", "--out", "r.csv"],
        dir.path(),
    );
    assert_eq!(code, 1, "{err}");
    fs::write(dir.path().join("bad.csv"), "not,a,report\n").unwrap();
    let (code, _, _) = run(&["threshold", "--in", "bad.csv"], dir.path());
    assert_eq!(code, 1);
}

#[test]
fn sample_decode_and_threshold_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, _, err) = run(
        &[
            "sample", "--code", "toric:3", "--channel", "independent", "--p", "0.05", "--n-samples", "200", "--seed",
            "4", "--out", "s.qsyn",
        ],
        d,
    );
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = run(
        &["decode", "mwpm", "--code", "toric:3", "--dataset", "s.qsyn", "--out", "r.csv"],
        d,
    );
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("200 runs"));
    let report = fs::read_to_string(d.join("r.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("sample,weight,logical_class,failure"));
    assert_eq!(lines.clone().count(), 200);
    for (i, l) in lines.enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[0], i.to_string());
        assert_eq!(f[2].len(), 4);
        assert_eq!(f[3] == "1", f[2].contains('1'));
    }
    let (code, _, err) = run(
        &["decode", "mwpm", "--code", "toric:4", "--dataset", "s.qsyn", "--out", "r.csv"],
        d,
    );
    assert_eq!(code, 1, "wrong code must be rejected: {err}");

    let (mwpm, qecct) = (data("mwpm.csv"), data("qecct.csv"));
    let (code, out, _) = run(&["threshold", "--in", mwpm.to_str().unwrap(), qecct.to_str().unwrap()], d);
    assert_eq!(code, 0);
    assert!(out.contains("mwpm toric independent x T=1 q=0 L={4,6}: threshold"), "{out}");
    assert!(out.contains("qecct toric independent x T=1 q=0 L={4}: no estimate"), "{out}");
}

#[test]
fn replay_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::copy(data("mwpm.csv"), d.join("in.csv")).unwrap();
    let (code, _, err) = run(&["plot", "--in", "in.csv", "--out", "f.svg"], d);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = run(&["replay", "--manifest", "f.svg.manifest"], d);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.trim(), "identical f.svg");
    fs::write(d.join("in.csv"), fs::read_to_string(data("qecct.csv")).unwrap()).unwrap();
    let (code, _, err) = run(&["replay", "--manifest", "f.svg.manifest"], d);
    assert_eq!(code, 1);
    assert!(err.contains("changed"), "{err}");
}

#[test]
fn faulty_sampling_defaults_to_l_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (q, rounds) in [("0.02", 3), ("0", 1)] {
        let args = [
            "sample", "--code", "toric:3", "--channel", "independent", "--p", "0.05", "--q", q, "--n-samples", "5",
            "--out", "s.qsyn",
        ];
        let (code, _, err) = run(&args, d);
        assert_eq!(code, 0, "{err}");
        let (header, runs) =
            qecc_lab::dataset::read_dataset(&mut BufReader::new(fs::File::open(d.join("s.qsyn")).unwrap())).unwrap();
        assert_eq!(header.rounds, rounds, "q={q}");
        assert!(runs.iter().all(|r| r.rounds() == rounds));
    }
}
