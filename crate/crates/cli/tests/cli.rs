use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roomkmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roomkmd")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn spectrum_of_default_analytic_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("an");
    assert!(roomkmd(&["synth-analytic", "--out-dir", &s(&data)]).status.success());
    let out = tmp.path().join("sp");
    let r = roomkmd(&[
        "spectrum",
        "--snapshots",
        &s(&data.join("snapshots.csv")),
        "--layout",
        &s(&data.join("layout.csv")),
        "--out-dir",
        &s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("ranked_modes.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("couple,abs_lam,period_min,mode_norm,energy"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "\"{1");
    assert_eq!(first[3], "14.23");
    let truth = fs::read_to_string(data.join("truth_modes.json")).unwrap();
    assert!(truth.contains("\"couple\""));
}

#[test]
fn constant_dataset_gives_bias_only_table() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = tmp.path().join("c.csv");
    let mut text = String::from("time,TH-1,TH-2\n");
    for k in 0..20 {
        text.push_str(&format!("{},21.5,23\n", 60 * k));
    }
    fs::write(&rec, text).unwrap();
    let out = tmp.path().join("out");
    let r = roomkmd(&["spectrum", "--snapshots", &s(&rec), "--out-dir", &s(&out)]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("ranking is empty"));
    assert_eq!(fs::read_to_string(out.join("ranked_modes.csv")).unwrap().lines().count(), 1);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("mode_table.json")).unwrap()).unwrap();
    let modes = json["modes"].as_array().unwrap();
    assert!(!modes.is_empty() && modes.iter().all(|m| m["bias_flag"] == true));
}

#[test]
fn missing_layout_exits_2_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("an");
    assert!(roomkmd(&["synth-analytic", "--out-dir", &s(&data)]).status.success());
    let missing = tmp.path().join("nowhere/layout.csv");
    let r = roomkmd(&[
        "spectrum",
        "--snapshots",
        &s(&data.join("snapshots.csv")),
        "--layout",
        &s(&missing),
        "--out-dir",
        &s(&tmp.path().join("o")),
    ]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains(&s(&missing)), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn numerical_failures_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = tmp.path().join("z.csv");
    fs::write(&rec, "time,a,b\n0,0,0\n60,0,0\n120,0,0\n180,0,0\n").unwrap();
    let r = roomkmd(&["spectrum", "--snapshots", &s(&rec), "--out-dir", &s(&tmp.path().join("o"))]);
    assert_eq!(r.status.code(), Some(1));

    let data = tmp.path().join("an");
    assert!(roomkmd(&["synth-analytic", "--out-dir", &s(&data)]).status.success());
    let r = roomkmd(&[
        "phase-average",
        "--snapshots",
        &s(&data.join("snapshots.csv")),
        "--period",
        "200",
        "--out-dir",
        &s(&tmp.path().join("pa")),
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn unstable_room_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("room.toml");
    fs::write(
        &cfg,
        "width = 14.0\ndepth = 7.0\nnx = 28\nny = 14\nkappa = 0.1\nleak = 2e-4\nambient = 30.0\n\
         initial = 25.0\nsim_dt = 5.0\nsample_dt = 60.0\nduration = 3600.0\n",
    )
    .unwrap();
    let r = roomkmd(&["synth-room", "--config", &s(&cfg), "--out-dir", &s(&tmp.path().join("o"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("unstable"));
}

#[test]
fn staged_commands_match_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |x: &str| s(&tmp.path().join(x));
    assert!(roomkmd(&["synth-room", "--out-dir", &p("room")]).status.success());
    let base = ["--snapshots", &p("room/snapshots.csv")];
    assert!(roomkmd(&[&["phase-average"][..], &base, &["--out-dir", &p("pa")]].concat()).status.success());
    let r = roomkmd(&[
        "gradient",
        "--mode",
        &p("pa/phase_average.csv"),
        "--layout",
        &p("room/layout.csv"),
        "--sources",
        &p("room/sources.csv"),
        "--out-dir",
        &p("gr"),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = roomkmd(&[
        &["pipeline"][..],
        &base,
        &["--layout", &p("room/layout.csv"), "--sources", &p("room/sources.csv"), "--out-dir", &p("full")],
    ]
    .concat());
    assert!(r.status.success());
    for f in ["gradient.csv", "rms_gradient.csv", "flux_consistency.csv"] {
        assert_eq!(fs::read(tmp.path().join("gr").join(f)).unwrap(), fs::read(tmp.path().join("full").join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        fs::read(tmp.path().join("pa/phase_average.csv")).unwrap(),
        fs::read(tmp.path().join("full/phase_average.csv")).unwrap()
    );
    let svg = fs::read_to_string(tmp.path().join("gr/gradient.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("arrow scale"));
    let log = fs::read_to_string(tmp.path().join("room/switch_log.csv")).unwrap();
    assert!(log.starts_with("time,ac_id,state\n"));
}

#[test]
fn pipeline_config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |x: &str| s(&tmp.path().join(x));
    assert!(roomkmd(&["synth-analytic", "--out-dir", &p("an")]).status.success());
    fs::write(
        tmp.path().join("run.toml"),
        "snapshots = \"an/snapshots.csv\"\nlayout = \"an/layout.csv\"\nout_dir = \"cfg_out\"\nperiod = 14\ngradient_source = \"dmd_mode\"\nsvg = false\n",
    )
    .unwrap();
    let r = roomkmd(&["pipeline", "--config", &p("run.toml")]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let meta = fs::read_to_string(tmp.path().join("cfg_out/run_metadata.json")).unwrap();
    assert!(meta.contains("\"gradient_source\": \"dmd_mode\""));
    assert!(!tmp.path().join("cfg_out/gradient.svg").exists());
    let gcsv = fs::read_to_string(tmp.path().join("cfg_out/gradient.csv")).unwrap();
    assert!(gcsv.starts_with("channel_id,x,y,gx_re,gy_re,gx_im,gy_im,valid,method\n"));

    let r = roomkmd(&["pipeline", "--config", &p("run.toml"), "--period", "auto", "--out-dir", &p("o2")]);
    assert!(r.status.success());
    assert!(fs::read_to_string(tmp.path().join("o2/run_metadata.json")).unwrap().contains("\"period_rule\": \"auto\""));

    let r = roomkmd(&["pipeline", "--config", &p("run.toml"), "--gradient-source", "fourier"]);
    assert_eq!(r.status.code(), Some(2));
}
