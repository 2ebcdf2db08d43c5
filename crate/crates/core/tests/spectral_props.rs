use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use roomkmd::spectral::{companion_kmd, format_table_csv, table_json, ModeTable};
use roomkmd::timeseries::SnapshotMatrix;

/// Sum of travelling tones plus a constant, rank `2 * tones + 1`.
fn tones(m: usize, n: usize, periods: &[f64], phases: &[Vec<f64>], amps: &[Vec<f64>], bias: &[f64]) -> SnapshotMatrix {
    let ch: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..n)
                .map(|k| {
                    bias[i]
                        + periods
                            .iter()
                            .enumerate()
                            .map(|(t, p)| amps[t][i] * (2.0 * PI * k as f64 / p + phases[t][i]).cos())
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let ids = (0..m).map(|i| format!("c{i}")).collect();
    SnapshotMatrix::from_channels(&ch, 60.0, 0.0, ids).unwrap()
}

fn dataset() -> impl Strategy<Value = SnapshotMatrix> {
    // tones closer than two frequency bins are not resolvable in 120 samples
    let periods = prop::collection::vec(5.0f64..40.0, 2)
        .prop_filter("resolvable tones", |p| (1.0 / p[0] - 1.0 / p[1]).abs() >= 2.0 / 120.0);
    (6usize..10, periods).prop_flat_map(|(m, periods)| {
        (
            prop::collection::vec(prop::collection::vec(-PI..PI, m), 2),
            prop::collection::vec(prop::collection::vec(0.2f64..2.0, m), 2),
            prop::collection::vec(-3.0f64..3.0, m),
        )
            .prop_map(move |(ph, am, b)| tones(m, 120, &periods, &ph, &am, &b))
    })
}

fn realness(t: &ModeTable, k: usize) -> f64 {
    let r = t.reconstruct(k);
    let re = r.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let im = r.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    im / re.max(f64::MIN_POSITIVE)
}

fn reconstruction_error(t: &ModeTable, s: &SnapshotMatrix) -> f64 {
    let n = s.snapshots();
    let scale = (0..n).map(|k| s.snapshot(k).norm()).fold(0.0, f64::max);
    (0..n - 1)
        .map(|k| {
            let r = t.reconstruct(k);
            r.iter()
                .zip(s.snapshot(k).iter())
                .map(|(a, b)| (a.re - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
        / scale
}

/// Significant entries with non-negative imaginary part, sorted by
/// eigenvalue. Spurious companion roots carry round-off energy only and
/// are not stable under any perturbation, so they are left out.
fn spectrum(t: &ModeTable) -> Vec<(Complex64, f64, f64)> {
    let top = t.entries.iter().map(|e| e.energy).fold(0.0, f64::max);
    let mut v: Vec<_> = t
        .entries
        .iter()
        .filter(|e| e.lam().im >= 0.0 && e.energy > 1e-6 * top)
        .map(|e| (e.lam(), e.energy, e.mode_norm))
        .collect();
    v.sort_by(|a, b| a.0.arg().total_cmp(&b.0.arg()).then(a.0.norm().total_cmp(&b.0.norm())));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstructs_and_stays_real(s in dataset()) {
        let t = companion_kmd(&s).unwrap();
        prop_assert!(reconstruction_error(&t, &s) <= 1e-8);
        for k in [0, 17, s.snapshots() - 1] {
            prop_assert!(realness(&t, k) <= 1e-10);
        }
        // the last snapshot is off by exactly the companion residual
        let n = s.snapshots();
        let last = t.reconstruct(n - 1);
        let defect = last
            .iter()
            .zip(s.snapshot(n - 1).iter())
            .map(|(a, b)| (a.re - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = s.snapshot(n - 1).norm();
        prop_assert!((defect - t.residual).abs() <= 1e-8 * scale);
    }

    #[test]
    fn permutation_leaves_spectrum(s in dataset()) {
        let m = s.channels();
        let order: Vec<usize> = (0..m).rev().collect();
        let a = companion_kmd(&s).unwrap();
        let b = companion_kmd(&s.permute_channels(&order).unwrap()).unwrap();
        let (sa, sb) = (spectrum(&a), spectrum(&b));
        prop_assert_eq!(sa.len(), sb.len());
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert!((x.0 - y.0).norm() <= 1e-10);
            prop_assert!((x.1 - y.1).abs() <= 1e-8 * x.1.max(1.0));
        }
        // modes move with their channels
        let top_a = a.entries.iter().find(|e| e.lam().im > 0.0).unwrap();
        let top_b = b.entries.iter().find(|e| (e.lam() - top_a.lam()).norm() < 1e-9).unwrap();
        for (i, &j) in order.iter().enumerate() {
            prop_assert!((top_b.pair.mode[i] - top_a.pair.mode[j]).norm() <= 1e-8 * top_a.mode_norm);
        }
    }

    #[test]
    fn scaling_scales_modes(s in dataset(), alpha in 0.01f64..100.0) {
        let a = companion_kmd(&s).unwrap();
        let b = companion_kmd(&s.scaled(alpha).unwrap()).unwrap();
        let (sa, sb) = (spectrum(&a), spectrum(&b));
        prop_assert_eq!(sa.len(), sb.len());
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert!((x.0 - y.0).norm() <= 1e-10 * x.0.norm().max(1.0));
            prop_assert!((y.1 - alpha * x.1).abs() <= 1e-10 * alpha * x.1);
            prop_assert!((y.2 - alpha * x.2).abs() <= 1e-10 * alpha * x.2);
        }
    }
}

#[test]
fn identical_input_gives_identical_bytes() {
    let ph = vec![vec![0.1, 0.7, -1.0, 2.0, 0.3, 1.1], vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]];
    let am = vec![vec![1.0; 6], vec![0.3; 6]];
    let s = tones(6, 241, &[14.23, 89.16], &ph, &am, &[20.0, 21.0, 22.0, 23.0, 24.0, 25.0]);
    let a = companion_kmd(&s).unwrap();
    let b = companion_kmd(&s.clone()).unwrap();
    assert_eq!(table_json(&a, "raw").to_string(), table_json(&b, "raw").to_string());
    assert_eq!(format_table_csv(&a), format_table_csv(&b));
}
