use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evstar::bank::{plan_instances, EdgeSet};
use evstar::config::Config;
use evstar::manifest::RunManifest;

fn evstar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evstar"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("evstar runs")
}

fn ok(args: &[&str]) {
    let out = evstar(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seconds: &str) -> PathBuf {
    let out = dir.join("sim");
    ok(&["simulate", "--seed", "1", "--duration-s", seconds, "--axis", "0.3,-0.5,1", "-o", p(&out)]);
    out
}

#[test]
fn simulate_writes_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), "0.2");
    for f in ["events.txt", "groundtruth.csv", "intrinsics.txt", "manifest.txt"] {
        assert!(sim.join(f).is_file(), "{f} missing");
    }
    let m = RunManifest::load(&sim).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, Some(1));
    assert!(m.outputs.contains(&"events.txt".to_string()));
    assert!(!m.args.iter().any(|a| a == "--seed" || a == "-o"));

    let again = dir.path().join("again");
    ok(&["simulate", "--seed", "1", "--duration-s", "0.2", "--axis", "0.3,-0.5,1", "-o", p(&again)]);
    for f in ["events.txt", "groundtruth.csv"] {
        assert_eq!(std::fs::read(sim.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = evstar(&["simulate", "--outlier-ratio", "1.5", "-o", p(&dir.path().join("a"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = evstar(&["track", "--events", "nowhere.txt", "-o", p(&dir.path().join("b"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.starts_with("error: ") && !msg.contains("error: error:"), "{msg}");

    let out = evstar(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_edges_report_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    std::fs::write(
        &edges,
        "alpha_us,beta_us,r00,r01,r02,r10,r11,r12,r20,r21,r22\n0,100000,1,0,0,0,1,0,0,0,1\n100000,oops\n",
    )
    .unwrap();
    let out = evstar(&["average", "--edges", p(&edges), "-o", p(&dir.path().join("avg"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn disconnected_edges_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    std::fs::write(
        &edges,
        "alpha_us,beta_us,r00,r01,r02,r10,r11,r12,r20,r21,r22\n\
         0,100000,1,0,0,0,1,0,0,0,1\n200000,300000,1,0,0,0,1,0,0,0,1\n",
    )
    .unwrap();
    let anchors = dir.path().join("anchors.csv");
    std::fs::write(&anchors, "t_us,r00,r01,r02,r10,r11,r12,r20,r21,r22\n0,1,0,0,0,1,0,0,0,1\n").unwrap();
    let out = evstar(&["average", "--edges", p(&edges), "--anchors", p(&anchors), "-o", p(&dir.path().join("avg"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn out_dir_holds_one_command() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), "0.1");
    let gt = sim.join("groundtruth.csv");
    let out = evstar(&["anchors", "--groundtruth", p(&gt), "-o", p(&sim)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn track_average_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), "0.4");
    let cfg = dir.path().join("config.txt");
    std::fs::write(&cfg, "resolutions_ms=200,100\n").unwrap();
    let track = dir.path().join("track");
    ok(&[
        "track",
        "--config",
        p(&cfg),
        "--events",
        p(&sim.join("events.txt")),
        "--intrinsics",
        p(&sim.join("intrinsics.txt")),
        "-o",
        p(&track),
    ]);
    let edges = EdgeSet::read_csv(std::io::BufReader::new(std::fs::File::open(track.join("edges.csv")).unwrap())).unwrap();
    let config = Config::parse("resolutions_ms=200,100\n").unwrap();
    let plan = plan_instances(400_000, &config.bank().unwrap()).unwrap();
    assert_eq!(edges.len(), plan.len());
    let diag = std::fs::read_to_string(track.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), plan.len() + 1);

    let anchors = dir.path().join("anchors");
    ok(&["anchors", "--groundtruth", p(&sim.join("groundtruth.csv")), "--count", "2", "-o", p(&anchors)]);
    let avg = dir.path().join("avg");
    ok(&[
        "average",
        "--config",
        p(&cfg),
        "--edges",
        p(&track.join("edges.csv")),
        "--anchors",
        p(&anchors.join("anchors.csv")),
        "-o",
        p(&avg),
    ]);
    let eval = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--groundtruth",
        p(&sim.join("groundtruth.csv")),
        "--edges",
        p(&track.join("edges.csv")),
        "--attitudes",
        p(&avg.join("attitudes.csv")),
        "-o",
        p(&eval),
    ]);
    let summary = std::fs::read_to_string(eval.join("relative_summary.csv")).unwrap();
    for row in summary.lines().skip(1) {
        let rms: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!(rms < 0.5, "{row}");
    }
    let abs = std::fs::read_to_string(eval.join("absolute_errors.csv")).unwrap();
    assert_eq!(abs.lines().count(), 1 + 9);
}

#[test]
fn evaluating_ground_truth_against_itself_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), "0.2");
    let gt = sim.join("groundtruth.csv");
    let eval = dir.path().join("eval");
    ok(&["evaluate", "--groundtruth", p(&gt), "--attitudes", p(&gt), "-o", p(&eval)]);
    let abs = std::fs::read_to_string(eval.join("absolute_errors.csv")).unwrap();
    for row in abs.lines().skip(1) {
        let e: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(e < 1e-6, "{row}");
    }
}

#[test]
fn compensation_sharpens_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), "0.2");
    for method in ["hough", "cm"] {
        let out = dir.path().join(method);
        ok(&[
            "compensate",
            "--events",
            p(&sim.join("events.txt")),
            "--intrinsics",
            p(&sim.join("intrinsics.txt")),
            "--method",
            method,
            "-o",
            p(&out),
        ]);
        let csv = std::fs::read_to_string(out.join("compensate.csv")).unwrap();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert!(row[4] > row[3], "{method}: {csv}");
        assert!(out.join("before.pgm").is_file() && out.join("after.pgm").is_file());
    }
}

#[test]
fn benchmark_emits_one_row_per_method_and_duration() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), "0.4");
    let out = dir.path().join("bench");
    ok(&[
        "benchmark",
        "--events",
        p(&sim.join("events.txt")),
        "--intrinsics",
        p(&sim.join("intrinsics.txt")),
        "--chunks",
        "1",
        "--durations-ms",
        "100,200",
        "-o",
        p(&out),
    ]);
    let csv = std::fs::read_to_string(out.join("benchmark.csv")).unwrap();
    let keys: Vec<(String, String)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    assert_eq!(keys.len(), 4);
    for m in ["HT", "CM"] {
        for d in ["100", "200"] {
            assert!(keys.contains(&(m.to_string(), d.to_string())), "{csv}");
        }
    }
}
