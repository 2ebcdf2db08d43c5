//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use roomkmd::gradient::{gradient_field, load_sources, rms_gradient, GradientOptions, ModeSource, ModeValues};
use roomkmd::phaseavg::{harmonic_amplitude, phase_average};
use roomkmd::pipeline::{run_pipeline, PipelineConfig};
use roomkmd::spectral::{companion_kmd, rank_modes};
use roomkmd::synth::{
    analytic_default, cycle_periods, format_sources, generate_analytic, room_default, room_sensor_layout,
    simulate_room,
};
use roomkmd::timeseries::{write_layout, write_snapshots, GridDecl, SensorLayout, SnapshotMatrix};

fn report(n: u32, name: &str, ok: bool, detail: String) {
    println!("acceptance {n} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "acceptance {n} {name} failed: {detail}");
}

fn record(channels: &[Vec<f64>], ids: &[String]) -> SnapshotMatrix {
    SnapshotMatrix::from_channels(channels, 60.0, 0.0, ids.to_vec()).unwrap()
}

#[test]
fn c1_oracle_eigenvalue_recovery() {
    let spec = analytic_default();
    let start = Instant::now();
    let (s, truth) = generate_analytic(&spec).unwrap();
    let table = companion_kmd(&s).unwrap();
    let ranked = rank_modes(&table, 6).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut ok = elapsed < 2.0;
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for want in truth.entries.iter().filter(|e| e.lam().im > 0.0) {
        let t_true = want.period.unwrap();
        match ranked.entries.iter().filter(|e| e.lam().im > 0.0).find(|e| {
            e.period.is_some_and(|t| (t - t_true).abs() <= 1e-3 * t_true)
        }) {
            Some(got) => {
                worst_abs = worst_abs.max((got.abs_lam - 1.0).abs());
                worst_rel = worst_rel.max((got.period.unwrap() - t_true).abs() / t_true);
            }
            None => ok = false,
        }
    }
    ok &= worst_abs <= 1e-4;
    let first = ranked.entries[0].period.unwrap_or(0.0);
    ok &= ranked.entries[0].couple == [1, 2] && (first - 853.8).abs() <= 1e-3 * 853.8;
    report(
        1,
        "oracle eigenvalue recovery",
        ok,
        format!(
            "max ||lam|-1| = {worst_abs:.2e} <= 1e-4, max period error = {worst_rel:.2e} <= 1e-3, top couple T = {:.4} min, {elapsed:.3} s < 2 s",
            first / 60.0
        ),
    );
}

#[test]
fn c2_phase_average_identity() {
    let layout = room_sensor_layout();
    let amps: Vec<Complex64> = layout
        .coords()
        .iter()
        .map(|c| Complex64::from_polar(0.5 + 0.05 * c[0], 0.3 * c[0] - 0.2 * c[1]))
        .collect();
    let n = 239;
    let clean: Vec<Vec<f64>> = amps
        .iter()
        .map(|a| (0..n).map(|k| 2.0 * (a * Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 14.0)).re).collect())
        .collect();
    let want: Vec<f64> = amps.iter().map(|a| 2.0 * a.re).collect();
    let r = phase_average(&record(&clean, layout.ids()), 14).unwrap();
    let err = r.sum_real.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let peak = amps.iter().map(|a| 2.0 * a.norm()).fold(0.0, f64::max);
    let sigma = 0.01 * peak;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let noise = Normal::new(0.0, sigma).unwrap();
    let noisy: Vec<Vec<f64>> = clean.iter().map(|ch| ch.iter().map(|v| v + noise.sample(&mut rng)).collect()).collect();
    let rn = phase_average(&record(&noisy, layout.ids()), 14).unwrap();
    let bound = 5.0 * sigma / (rn.cycles_used as f64).sqrt();
    let err_noisy = rn.sum_real.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    report(
        2,
        "phase-average identity",
        r.cycles_used == 18 && err <= 1e-9 && err_noisy <= bound,
        format!("Q = {}, noiseless error {err:.2e} <= 1e-9, noisy error {err_noisy:.3e} <= {bound:.3e}", r.cycles_used),
    );
}

fn line_grid(h: f64, len: f64) -> SensorLayout {
    let n = (len / h).round() as usize + 1;
    SensorLayout::new(
        (0..n).map(|i| format!("x{i}")).collect(),
        (0..n).map(|i| vec![i as f64 * h]).collect(),
        Some(GridDecl {
            rows: 1,
            cols: n,
            dx: None,
            dy: None,
        }),
    )
    .unwrap()
}

fn interior_error(h: f64) -> f64 {
    let l = line_grid(h, 2.0);
    let f: Vec<f64> = l.coords().iter().map(|c| (PI * c[0]).sin()).collect();
    let g = gradient_field(ModeValues::Real(&f), &l, ModeSource::PhaseAverage, &GradientOptions::default()).unwrap();
    (1..l.len() - 1)
        .map(|i| (g.real(i)[0] - PI * (PI * l.coords()[i][0]).cos()).abs())
        .fold(0.0, f64::max)
}

#[test]
fn c3_gradient_convergence() {
    let ratio = interior_error(0.2) / interior_error(0.1);

    let pts: Vec<(f64, f64)> = (0..20).map(|i| ((i % 5) as f64 * 0.7, (i / 5) as f64 * 0.9)).collect();
    let grid = SensorLayout::new(
        (0..20).map(|i| format!("g{i}")).collect(),
        pts.iter().map(|&(x, y)| vec![x, y]).collect(),
        Some(GridDecl {
            rows: 4,
            cols: 5,
            dx: None,
            dy: None,
        }),
    )
    .unwrap();
    let room = room_sensor_layout();
    let mut affine_err: f64 = 0.0;
    for l in [&grid, &grid.without_grid(), &room] {
        let f: Vec<f64> = l.coords().iter().map(|c| 1.5 + 3.0 * c[0] + 2.0 * c[1]).collect();
        let g = gradient_field(ModeValues::Real(&f), l, ModeSource::PhaseAverage, &GradientOptions::default()).unwrap();
        for i in (0..l.len()).filter(|&i| g.valid[i]) {
            let v = g.real(i);
            affine_err = affine_err.max(((v[0] - 3.0).abs()).max((v[1] - 2.0).abs()) / 3.0);
        }
    }
    report(
        3,
        "gradient convergence",
        (3.2..=4.8).contains(&ratio) && affine_err <= 1e-10,
        format!("error ratio h=0.2/h=0.1 = {ratio:.4} in [3.2, 4.8], affine relative error {affine_err:.2e} <= 1e-10"),
    );
}

#[test]
fn c4_end_to_end_flux_direction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let start = Instant::now();
    let spec = room_default();
    let run = simulate_room(&spec).unwrap();
    write_snapshots(dir.join("snapshots.csv"), &run.record).unwrap();
    write_layout(dir.join("layout.csv"), &spec.sensors).unwrap();
    fs::write(dir.join("sources.csv"), format_sources(&spec)).unwrap();
    let mut cfg = PipelineConfig::new(dir.join("snapshots.csv"), dir.join("layout.csv"), dir.join("out"));
    cfg.sources = Some(dir.join("sources.csv"));
    let a = run_pipeline(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let t0 = run.record.t0();
    let t_end = t0 + spec.duration;
    let ons: Vec<f64> = run
        .switch_log
        .iter()
        .filter(|e| e.ac_id == "AC-2" && e.on && e.time >= t0 && e.time <= t_end)
        .map(|e| e.time)
        .collect();
    let cycle = (ons[ons.len() - 1] - ons[0]) / (ons.len() - 1) as f64;
    let all = cycle_periods(&run.switch_log, "AC-2");
    let dmd = a.top_couple().and_then(|e| e.period).unwrap_or(f64::NAN);
    let score = a.flux.iter().find(|(s, _)| s.id == "AC-2").map(|f| f.1).unwrap_or(f64::NAN);
    assert_eq!(load_sources(dir.join("sources.csv")).unwrap().len(), 4);
    report(
        4,
        "end-to-end flux direction",
        (dmd - cycle).abs() <= 60.0 && score >= 0.7 && elapsed < 30.0,
        format!(
            "dominant T = {dmd:.1} s vs switch-log cycle {cycle:.1} s over {} cycles (last {:.1} s), |diff| <= 60 s; AC-2 score {score:.4} >= 0.7; {elapsed:.2} s < 30 s",
            ons.len() - 1,
            all.last().unwrap()
        ),
    );
}

#[test]
fn c5_reconstruction_invariant() {
    let spec = analytic_default();
    let (s, _) = generate_analytic(&spec).unwrap();
    let t = companion_kmd(&s).unwrap();
    let n = s.snapshots();
    let scale = (0..n).map(|k| s.snapshot(k).norm()).fold(0.0, f64::max);
    let mut rec_err: f64 = 0.0;
    let mut real_err: f64 = 0.0;
    for k in 0..n {
        let r = t.reconstruct(k);
        let re_max = r.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        let im_max = r.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        real_err = real_err.max(im_max / re_max);
        if k < n - 1 {
            let e = r.iter().zip(s.snapshot(k).iter()).map(|(a, b)| (a.re - b).powi(2)).sum::<f64>().sqrt();
            rec_err = rec_err.max(e / scale);
        }
    }
    report(
        5,
        "reconstruction invariant",
        rec_err <= 1e-8 && real_err <= 1e-10,
        format!("relative reconstruction error {rec_err:.2e} <= 1e-8, realness residual {real_err:.2e} <= 1e-10"),
    );
}

#[test]
fn c6_rms_cross_check() {
    let rows = 4;
    let cols = 6;
    let h = 0.5;
    let l = SensorLayout::new(
        (0..rows * cols).map(|i| format!("g{i}")).collect(),
        (0..rows * cols).map(|i| vec![(i % cols) as f64 * h, (i / cols) as f64 * h]).collect(),
        Some(GridDecl {
            rows,
            cols,
            dx: None,
            dy: None,
        }),
    )
    .unwrap();
    let ax = Complex64::new(1.0, 0.5);
    let ay = Complex64::new(0.2, -0.3);
    let amp = |c: &[f64]| ax * c[0] + ay * c[1];
    let p = 14;
    let n = 239;
    let channels: Vec<Vec<f64>> = l
        .coords()
        .iter()
        .map(|c| (0..n).map(|k| 2.0 * (amp(c) * Complex64::from_polar(1.0, 2.0 * PI * k as f64 / p as f64)).re).collect())
        .collect();
    let s = record(&channels, l.ids());
    let rms = rms_gradient(&harmonic_amplitude(&s, p).unwrap(), &l, &GradientOptions::default()).unwrap();

    // time-domain RMS of the analytic gradient 2 Re(dA/dr exp(i w t)) over one period
    let samples = 1000;
    let time_rms = |d: Complex64| {
        ((0..samples)
            .map(|j| (2.0 * (d * Complex64::from_polar(1.0, 2.0 * PI * j as f64 / samples as f64)).re).powi(2))
            .sum::<f64>()
            / samples as f64)
            .sqrt()
    };
    let want = [time_rms(ax), time_rms(ay)];
    let err = rms
        .values
        .iter()
        .flat_map(|v| v.iter().zip(&want).map(|(g, w)| (g - w).abs() / w))
        .fold(0.0, f64::max);
    report(
        6,
        "rms cross-check",
        err <= 1e-6,
        format!("max relative difference {err:.2e} <= 1e-6 (time RMS {:.6}, {:.6})", want[0], want[1]),
    );
}

fn run_bin(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_roomkmd")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_json_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.ends_with(".csv") || name.ends_with(".json")
        })
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn c7_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    run_bin(&["synth-room", "--out-dir", &d("room")]);
    let (snap, layout, sources) = (d("room/snapshots.csv"), d("room/layout.csv"), d("room/sources.csv"));
    for out in ["a", "b"] {
        run_bin(&[
            "pipeline",
            "--snapshots",
            &snap,
            "--layout",
            &layout,
            "--sources",
            &sources,
            "--out-dir",
            &d(out),
        ]);
    }
    let a = csv_json_bytes(&tmp.path().join("a"));
    let b = csv_json_bytes(&tmp.path().join("b"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    report(
        7,
        "determinism",
        a == b && a.len() >= 8,
        format!("{} CSV/JSON artifacts byte-identical across two runs: {}", a.len(), names.join(" ")),
    );
}
