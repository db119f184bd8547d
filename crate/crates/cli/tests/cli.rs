use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_channeling"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "schema_version = 1\n[beam]\nenergy = 2.0e6\n[ensemble]\nn_particles = 50\nseed = 3\nthickness = 60.0\n";

#[test]
fn run_writes_manifest_and_threads_only_change_speed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut exits = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = bin(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let printed = String::from_utf8_lossy(&o.stdout);
        assert!(printed.trim().ends_with("manifest.json"), "{printed}");
        exits.push(std::fs::read(out.join("run/exit_position.chsf")).unwrap());
    }
    assert_eq!(exits[0], exits[1]);
}

#[test]
fn global_overrides_reach_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let o = bin(&["--config", &cfg, "--seed", "11", "--particles", "7", "--out", out.to_str().unwrap(), "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = std::fs::read_to_string(out.join("run/manifest.json")).unwrap();
    assert!(m.contains("\"seed\": 11"), "{m}");
    assert!(m.contains("\"n_particles\": 7"), "{m}");
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("energy = 2.0e6", "energy = 2.0e6\ntilt_fraction = 0.25"));
    let o = bin(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("beam.tilt_fraction"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), &format!("{SMALL}unknown_key = 1\n"));
    let o = bin(&["run", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown_key"), "{}", stderr(&o));

    let o = bin(&["run", "--threads", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn io_errors_exit_4() {
    let o = bin(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("/definitely/not/here.toml"));
}

#[test]
fn missing_prerequisite_exits_3_and_names_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["plot-data", "--kind", "thickness-scan", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("`scan-thickness`"), "{}", stderr(&o));
}

#[test]
fn geometry_dump_and_plot_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = bin(&["geometry-dump", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = std::fs::read_to_string(dir.path().join("geometry-dump/strings.csv")).unwrap();
    assert_eq!(s.lines().count(), 37);

    let o = bin(&["plot-data", "--kind", "no-such-kind"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tilt-profiles"));
}
