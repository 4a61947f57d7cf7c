use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use supportcal::support_map::SupportMap;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_supportcal"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CAMERA: &str = r#"
[camera]
fx = 500.0
fy = 500.0
cx = 320.0
cy = 240.0
width = 640
height = 480

[reference]
rotation = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]
translation = [0.05, -0.10, 0.02]
"#;

fn config(dir: &Path, header: &str, classes: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, format!("{header}\n{CAMERA}\n{classes}")).unwrap();
    path
}

fn one_class(dir: &Path) -> PathBuf {
    config(
        dir,
        "seed = 11\nn_runs = 2\nn_frames = 3\n[perturbation]\ntranslation_magnitude = 0.1\nrotation_magnitude = 2.0\n",
        r#"
[[classes]]
id = 0
name = "wall"
residual_sigma = 1.0
count = 400
extent = { kind = "box", min = [5.0, -8.0, -2.0], max = [20.0, 8.0, 4.0] }
"#,
    )
}

fn two_class(dir: &Path, frames: usize) -> PathBuf {
    config(
        dir,
        &format!("seed = 12\nn_runs = 2\nn_frames = {frames}\n[perturbation]\ntranslation_magnitude = 0.1\nrotation_magnitude = 2.0\n"),
        r#"
[[classes]]
id = 0
name = "trunk"
residual_sigma = 1.0
count = 800
extent = { kind = "strips", min = [5.0, -8.0, -1.8], max = [15.0, 8.0, -0.3], count = 10, width = 0.4 }

[[classes]]
id = 1
name = "foliage"
residual_sigma = 6.0
count = 800
extent = { kind = "blobs", min = [4.0, -12.0, 1.5], max = [20.0, 12.0, 6.0], count = 8, radius = 3.0 }
"#,
    )
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulate_writes_frames_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&b)]).status.success());
    for t in 0..3 {
        let scene = format!("scene_{t:03}.csv");
        let corr = format!("corr_{t:03}.csv");
        assert_eq!(data_rows(&a.join(&scene)), 400);
        let n = data_rows(&a.join(&corr));
        assert!(n > 0 && n <= 400);
        assert_eq!(fs::read(a.join(&corr)).unwrap(), fs::read(b.join(&corr)).unwrap());
        assert_eq!(fs::read(a.join(&scene)).unwrap(), fs::read(b.join(&scene)).unwrap());
    }
    assert!(a.join("classes.toml").exists());
    let header = fs::read_to_string(a.join("corr_000.csv")).unwrap();
    assert!(header.starts_with("point_id,class_id,u,v,du,dv\n"));

    let c = tmp.path().join("c");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "99"]).status.success());
    assert_ne!(fs::read(a.join("corr_000.csv")).unwrap(), fs::read(c.join("corr_000.csv")).unwrap());
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let out = tmp.path().join("out");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let text = fs::read_to_string(out.join("corr_000.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    for field in row.split(',').skip(2) {
        let mantissa = field.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{field}");
    }
}

#[test]
fn unwritable_output_fails_with_status_2_and_no_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, b"").unwrap();
    let out = blocker.join("sub");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_config_is_status_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", s(&tmp.path().join("nope.toml")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn build_map_from_one_file_is_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let sim = tmp.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let out = tmp.path().join("map");
    let o = run(&["build-map", "--config", s(&cfg), "--out", s(&out), s(&sim.join("corr_000.csv"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let map = SupportMap::load(&out.join("support_map.smap")).unwrap();
    assert!(map.is_normalized());
    assert_eq!(map.max_value(), 1.0);
    assert!(out.join("support_map.png").exists());
}

#[test]
fn build_map_without_inputs_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let o = run(&["build-map", "--config", s(&cfg), "--out", s(&tmp.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn build_map_with_no_evidence_is_status_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let corr = tmp.path().join("corr.csv");
    fs::write(&corr, "point_id,class_id,u,v,du,dv\n0,0,100.0,100.0,1000.0,1000.0\n1,0,200.0,50.0,-900.0,800.0\n").unwrap();
    let out = tmp.path().join("map");
    let o = run(&["build-map", "--config", s(&cfg), "--out", s(&out), s(&corr)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn split_build_and_merge_equals_single_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_class(tmp.path(), 10);
    let sim = tmp.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let files: Vec<String> = (0..10).map(|t| s(&sim.join(format!("corr_{t:03}.csv"))).to_string()).collect();
    let build = |out: &Path, files: &[String], extra: &[&str]| {
        let mut args = vec!["build-map", "--config", s(&cfg), "--out", s(out)];
        args.extend(extra);
        args.extend(files.iter().map(String::as_str));
        assert!(run(&args).status.success());
    };
    let single = tmp.path().join("single");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let merged = tmp.path().join("merged");
    build(&single, &files, &[]);
    build(&a, &files[..5], &["--no-normalize"]);
    build(&b, &files[5..], &["--no-normalize"]);
    assert!(!a.join("support_map.png").exists());
    let o = run(&[
        "merge-maps",
        "--out",
        s(&merged),
        s(&a.join("support_map.smap")),
        s(&b.join("support_map.smap")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let x = SupportMap::load(&single.join("support_map.smap")).unwrap();
    let y = SupportMap::load(&merged.join("support_map.smap")).unwrap();
    let diff = x.cells().iter().zip(y.cells()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff:e}");
}

#[test]
fn merging_normalized_maps_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let sim = tmp.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let m = tmp.path().join("m");
    assert!(run(&["build-map", "--config", s(&cfg), "--out", s(&m), s(&sim.join("corr_000.csv"))]).status.success());
    let smap = m.join("support_map.smap");
    let o = run(&["merge-maps", "--out", s(&tmp.path().join("x")), s(&smap), s(&smap)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_flags_noisy_class_in_class_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_class(tmp.path(), 2);
    let sim = tmp.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let out = tmp.path().join("an");
    let o = run(&[
        "analyze",
        "--out",
        s(&out),
        s(&sim.join("corr_001.csv")),
        s(&sim.join("corr_000.csv")),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("class_stats.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][5]), ("0", "false"));
    assert_eq!((rows[1][0], rows[1][5]), ("1", "true"));
}

#[test]
fn analyze_missing_file_is_status_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["analyze", "--out", s(&tmp.path().join("an")), s(&tmp.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn refine_is_reproducible_and_reports_both_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_class(tmp.path(), 4);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = run(&["refine", "--config", s(&cfg), "--out", s(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run(&["refine", "--config", s(&cfg), "--out", s(&b)]).status.success());
    for f in ["runs.csv", "aggregate.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let runs = fs::read_to_string(a.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("uniform") && table.contains("sgis") && table.contains("improvement"));
}

#[test]
fn refine_without_noise_or_perturbation_reports_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        "seed = 3\nn_runs = 1\nn_frames = 2\n[perturbation]\ntranslation_magnitude = 0.0\nrotation_magnitude = 0.0\n",
        r#"
[[classes]]
id = 0
name = "wall"
residual_sigma = 0.0
count = 300
extent = { kind = "box", min = [5.0, -8.0, -2.0], max = [20.0, 8.0, 4.0] }
"#,
    );
    let out = tmp.path().join("r");
    assert!(run(&["refine", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    for row in runs.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn refine_on_collinear_points_is_rank_deficient() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        "seed = 4\nn_runs = 1\nn_frames = 2\n[perturbation]\ntranslation_magnitude = 0.05\nrotation_magnitude = 1.0\n",
        r#"
[[classes]]
id = 0
name = "cable"
residual_sigma = 0.5
count = 200
extent = { kind = "plane", origin = [10.0, -3.0, 0.5], edge_u = [0.0, 6.0, 0.0], edge_v = [0.0, 0.0, 0.0] }
"#,
    );
    let out = tmp.path().join("r");
    let o = run(&["refine", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn refine_rejects_map_of_wrong_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = one_class(tmp.path());
    let sim = tmp.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let other = fs::read_to_string(&cfg).unwrap().replace("width = 640", "width = 320");
    let other_cfg = tmp.path().join("other.toml");
    fs::write(&other_cfg, other).unwrap();
    let m = tmp.path().join("m");
    assert!(run(&["build-map", "--config", s(&cfg), "--out", s(&m), s(&sim.join("corr_000.csv"))]).status.success());
    let o = run(&[
        "refine",
        "--config",
        s(&other_cfg),
        "--map",
        s(&m.join("support_map.smap")),
        "--out",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
