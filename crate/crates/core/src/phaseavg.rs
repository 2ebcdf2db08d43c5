//! Phase averaging at an integer period and single-frequency projection.
//!
//! For a zero-mean record, averaging `y_0, y_P, y_2P, ...` keeps every
//! component whose eigenvalue satisfies `lam^P = 1` and suppresses the rest.
//! With one resonant couple that is `V_l + V_{l+1} = 2 Re V_l`. Harmonics of
//! the period (`P/m`) survive too; nothing here filters them.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::timeseries::SnapshotMatrix;

/// Channel means above this fraction of the channel RMS raise a warning.
pub const MEAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// The record was not mean-removed before averaging.
    Bias { channel: String, mean: f64, rms: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::Bias { channel, mean, rms } => {
                write!(f, "channel `{channel}` is not mean-removed (mean {mean:e}, rms {rms:e})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAverageResult {
    /// Period `P` in samples.
    pub period_samples: usize,
    /// Number of averaged samples `Q`.
    pub cycles_used: usize,
    pub dt: f64,
    pub channel_ids: Vec<String>,
    /// Phase-averaged value per channel, the estimate of `V_l + V_{l+1}`.
    pub sum_real: Vec<f64>,
    /// Single-frequency amplitude per channel, the estimate of `V_l`.
    pub harmonic: Vec<Complex64>,
    pub warnings: Vec<Warning>,
}

fn check_period(n: usize, p: usize) -> Result<()> {
    let max = (n - 1) / 2;
    if p < 2 || p > max {
        return Err(Error::Period(format!(
            "period of {p} samples outside 2..={max} for {n} snapshots"
        )));
    }
    Ok(())
}

/// Averages `y_0, y_P, ..., y_{(Q-1)P}` with `Q = floor((N-1)/P) + 1`.
///
/// The record should be mean-removed; a channel whose mean exceeds
/// `1e-9 * rms` produces a [`Warning::Bias`] on the result.
pub fn phase_average(s: &SnapshotMatrix, period_samples: usize) -> Result<PhaseAverageResult> {
    let n = s.snapshots();
    check_period(n, period_samples)?;
    let q = (n - 1) / period_samples + 1;
    let y = s.values();

    let mut warnings = Vec::new();
    for (i, row) in y.row_iter().enumerate() {
        let mean = row.iter().sum::<f64>() / n as f64;
        let rms = (row.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if mean.abs() > MEAN_TOL * rms {
            warnings.push(Warning::Bias {
                channel: s.channel_ids()[i].clone(),
                mean,
                rms,
            });
        }
    }
    if !warnings.is_empty() {
        log::warn!("phase averaging a record with {} biased channel(s)", warnings.len());
    }

    let sum_real = (0..s.channels())
        .map(|i| (0..q).map(|k| y[(i, k * period_samples)]).sum::<f64>() / q as f64)
        .collect();
    let harmonic = harmonic_amplitude(s, period_samples)?;
    Ok(PhaseAverageResult {
        period_samples,
        cycles_used: q,
        dt: s.dt(),
        channel_ids: s.channel_ids().to_vec(),
        sum_real,
        harmonic,
        warnings,
    })
}

/// `A = (1/L) sum_{k<L} y_k exp(-i 2 pi k / P)` over the first
/// `L = P * floor(N/P)` snapshots, so that `y_k = 2 Re(A0 exp(i 2 pi k/P))`
/// gives back `A0` exactly.
pub fn harmonic_amplitude(s: &SnapshotMatrix, period_samples: usize) -> Result<Vec<Complex64>> {
    let n = s.snapshots();
    check_period(n, period_samples)?;
    let p = period_samples;
    let len = p * (n / p);
    if len < 2 * p {
        return Err(Error::Period(format!("fewer than two whole cycles of {p} samples")));
    }
    let phasors: Vec<Complex64> = (0..p)
        .map(|r| Complex64::from_polar(1.0, -2.0 * PI * r as f64 / p as f64))
        .collect();
    let y = s.values();
    Ok((0..s.channels())
        .map(|i| {
            (0..len)
                .map(|k| phasors[k % p] * y[(i, k)])
                .fold(Complex64::new(0.0, 0.0), |acc, v| acc + v)
                / len as f64
        })
        .collect())
}

impl PhaseAverageResult {
    /// `channel_id,sum_real,harmonic_re,harmonic_im`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel_id,sum_real,harmonic_re,harmonic_im\n");
        for ((id, s), h) in self.channel_ids.iter().zip(&self.sum_real).zip(&self.harmonic) {
            writeln!(out, "{id},{s},{},{}", h.re, h.im).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "P": self.period_samples,
            "Q": self.cycles_used,
            "dt": self.dt,
            "period_seconds": self.period_samples as f64 * self.dt,
            "warnings": self.warnings,
        })
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let json_path = json_path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.to_json()).expect("serializes");
        text.push('\n');
        fs::write(json_path, text).map_err(|e| Error::io(json_path, e))
    }
}
