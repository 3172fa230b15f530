use std::fs;
use std::path::Path;
use std::process::Command;

use teleop_cli::manifest::{Manifest, RunStatus};
use teleop_cli::{cmd_metrics, cmd_plotdata, cmd_run, cmd_stats, ExperimentSpec, EXIT_ANALYSIS, EXIT_OK, EXIT_USAGE};

const SMALL: &str = r#"
[experiment]
name = "small"
master_seed = 11
repetitions = 2
experts = 3

[base]
duration_ms = 1500

[[condition]]
name = "gallop"
transport = "gallop"

[[condition]]
name = "wired"
transport = "wired"

[[condition]]
name = "wireless"
transport = "wireless"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teleop"))
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn run_small(out: &Path) -> ExperimentSpec {
    let spec = ExperimentSpec::parse(SMALL).unwrap();
    assert_eq!(cmd_run(&spec, out, 2, None).unwrap().code, EXIT_OK);
    spec
}

#[test]
fn run_writes_traces_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path());
    let m = Manifest::load(dir.path()).unwrap();
    assert_eq!(m.runs.len(), 18);
    assert_eq!(m.files.len(), 36);
    assert!(m.runs.iter().all(|r| r.status == RunStatus::Ok));
    assert_eq!(m.spec.experiment.output, None);
    for (rel, _) in &m.files {
        m.verify(dir.path(), rel).unwrap();
    }
    // Same spec, same hashes.
    let again = tempfile::tempdir().unwrap();
    run_small(again.path());
    assert_eq!(Manifest::load(again.path()).unwrap().files, m.files);
}

#[test]
fn single_run_spec() {
    let text = SMALL
        .replace("repetitions = 2", "repetitions = 1")
        .replace("experts = 3", "experts = 1");
    let text = &text[..text.find("[[condition]]\nname = \"wired\"").unwrap()];
    let spec = ExperimentSpec::parse(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cmd_run(&spec, dir.path(), 1, None).unwrap().code, EXIT_OK);
    assert_eq!(fs::read_dir(dir.path().join("traces")).unwrap().count(), 2);
    // Metrics work on one condition; stats need two.
    assert_eq!(cmd_metrics(dir.path()).unwrap().code, EXIT_OK);
    assert!(cmd_stats(dir.path(), 0.05).is_err());
}

#[test]
fn metrics_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path());
    assert_eq!(cmd_metrics(dir.path()).unwrap().code, EXIT_OK);
    let (header, rows) = read_csv(&dir.path().join("metrics/metrics.csv"));
    assert_eq!(rows.len(), 18);
    assert_eq!(header.len(), 7 + 14 + 4);
    for cond in ["gallop", "wired", "wireless"] {
        for dir_name in ["l2f", "f2l"] {
            let (h, r) = read_csv(&dir.path().join(format!("metrics/timing_{cond}_{dir_name}.csv")));
            assert_eq!(h, ["stat", "t_send_ms", "t_recv_ms"]);
            let names: Vec<&str> = r.iter().map(|x| x[0].as_str()).collect();
            assert_eq!(names, ["N", "mean", "sigma", "range", "iqr"]);
        }
    }
    let first = fs::read(dir.path().join("metrics/metrics.csv")).unwrap();
    assert_eq!(cmd_metrics(dir.path()).unwrap().code, EXIT_OK);
    assert_eq!(fs::read(dir.path().join("metrics/metrics.csv")).unwrap(), first);
}

#[test]
fn zero_motion_run_has_zero_error() {
    let text = SMALL.replace("duration_ms = 1500", "duration_ms = 1500\ntrajectory.kind = \"still\"");
    let spec = ExperimentSpec::parse(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&spec, dir.path(), 1, None).unwrap();
    cmd_metrics(dir.path()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("metrics/metrics.csv"));
    let e = header.iter().position(|h| h == "epsilon").unwrap();
    for r in rows {
        assert!(r[e].parse::<f64>().unwrap() <= 1e-9);
    }
}

#[test]
fn corrupt_trace_is_reported_and_others_continue() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path());
    let victim = dir.path().join("traces/wired-e1-r0.states.csv");
    let mut bytes = fs::read(&victim).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0x01;
    fs::write(&victim, bytes).unwrap();
    fs::remove_file(dir.path().join("traces/gallop-e0-r1.packets.csv")).unwrap();
    assert_eq!(cmd_metrics(dir.path()).unwrap().code, EXIT_ANALYSIS);
    let (_, rows) = read_csv(&dir.path().join("metrics/metrics.csv"));
    assert_eq!(rows.len(), 16);
    // The missing cells make the comparison non-rectangular.
    let err = cmd_stats(dir.path(), 0.05).unwrap_err().to_string();
    assert!(err.contains("wired block 2") && err.contains("gallop block 1"), "{err}");
}

#[test]
fn stats_and_plotdata_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path());
    cmd_metrics(dir.path()).unwrap();
    assert_eq!(cmd_stats(dir.path(), 0.05).unwrap().code, EXIT_OK);
    let text = fs::read_to_string(dir.path().join("stats/stats_report.txt")).unwrap();
    assert!(text.contains("per-comparison threshold 0.0167"));
    assert_eq!(cmd_plotdata(dir.path()).unwrap().code, EXIT_OK);

    let (h, rows) = read_csv(&dir.path().join("plotdata/boxplot_epsilon.csv"));
    assert_eq!(h, ["condition", "min", "q1", "median", "q3", "max", "n"]);
    assert_eq!(rows.len(), 3);

    // Histogram counts add up to the packets on disk.
    let m = Manifest::load(dir.path()).unwrap();
    let mut packets = [0usize; 3];
    for r in &m.runs {
        let j = ["gallop", "wired", "wireless"].iter().position(|c| *c == r.condition).unwrap();
        let (_, rows) = read_csv(&dir.path().join(r.packets.as_ref().unwrap()));
        packets[j] += rows.iter().filter(|p| p[0] == "l2f").count();
    }
    let (h, rows) = read_csv(&dir.path().join("plotdata/hist_t_recv_l2f.csv"));
    assert_eq!(&h[3..], ["gallop", "wired", "wireless"]);
    assert_eq!(rows.len(), 62);
    for j in 0..3 {
        let total: usize = rows.iter().map(|r| r[3 + j].parse::<usize>().unwrap()).sum();
        assert_eq!(total, packets[j]);
    }
    // Every file on disk is in the manifest and vice versa.
    let m = Manifest::load(dir.path()).unwrap();
    let mut on_disk = Vec::new();
    for sub in ["traces", "metrics", "stats", "plotdata"] {
        for e in fs::read_dir(dir.path().join(sub)).unwrap() {
            on_disk.push(format!("{sub}/{}", e.unwrap().file_name().to_string_lossy()));
        }
    }
    on_disk.sort();
    assert_eq!(on_disk, m.files.keys().cloned().collect::<Vec<_>>());
}

#[test]
fn identical_conditions_are_not_significant() {
    let text = SMALL
        .replace("transport = \"gallop\"", "transport = \"wired\"")
        .replace("transport = \"wireless\"", "transport = \"wired\"")
        .replace("repetitions = 2", "repetitions = 3");
    let spec = ExperimentSpec::parse(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&spec, dir.path(), 1, None).unwrap();
    cmd_metrics(dir.path()).unwrap();
    assert_eq!(cmd_stats(dir.path(), 0.05).unwrap().code, EXIT_OK);
    let (h, rows) = read_csv(&dir.path().join("stats/stats_report.csv"));
    let (t, s) = (
        h.iter().position(|x| x == "test").unwrap(),
        h.iter().position(|x| x == "significant").unwrap(),
    );
    for r in rows.iter().filter(|r| r[t] != "ks_normality") {
        assert_eq!(r[s], "false", "{r:?}");
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("small.spec");
    fs::write(&spec_path, SMALL).unwrap();
    let out = dir.path().join("out");

    assert_eq!(bin().arg("--help").status().unwrap().code(), Some(EXIT_OK));
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(EXIT_USAGE));
    assert_eq!(bin().args(["run"]).status().unwrap().code(), Some(EXIT_USAGE));

    let bad = dir.path().join("bad.spec");
    fs::write(&bad, SMALL.replace("master_seed = 11", "master_sed = 11")).unwrap();
    let o = bin().args(["run", "--spec"]).arg(&bad).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("master_sed"));

    // Without an output path anywhere, run is a usage error.
    let o = bin().args(["run", "--spec"]).arg(&spec_path).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_USAGE));

    assert_eq!(bin().args(["metrics", "--out"]).arg(&out).status().unwrap().code(), Some(EXIT_USAGE));

    let status = bin()
        .args(["all", "--jobs", "2", "--spec"])
        .arg(&spec_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    assert!(out.join("plotdata/hist_t_send_f2l.csv").exists());
    assert_eq!(
        bin().args(["stats", "--alpha", "1.5", "--out"]).arg(&out).status().unwrap().code(),
        Some(EXIT_USAGE)
    );
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::parse(SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_run(&spec, &a, 1, None).unwrap();
    cmd_run(&spec, &b, 1, Some(12)).unwrap();
    let (ma, mb) = (Manifest::load(&a).unwrap(), Manifest::load(&b).unwrap());
    assert_eq!(mb.master_seed, 12);
    assert_ne!(ma.files, mb.files);
}
