use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::ModeTable;
use crate::error::{Error, Result};

#[derive(Serialize)]
struct ComplexJson {
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct ModeJson {
    couple: Vec<usize>,
    index: usize,
    lam: ComplexJson,
    abs_lam: f64,
    period_minutes: Option<f64>,
    mode_norm: f64,
    energy: f64,
    bias_flag: bool,
    nyquist_flag: bool,
    singleton: bool,
    mode: Vec<ComplexJson>,
}

#[derive(Serialize)]
struct TableJson<'a> {
    dt_seconds: f64,
    residual: f64,
    snapshots: usize,
    energy_data: &'a str,
    warnings: &'a [String],
    modes: Vec<ModeJson>,
}

/// JSON form of a mode table. `energy_data` says which data the energies
/// were computed on (e.g. `"raw"` or `"mean-removed"`).
pub fn table_json(table: &ModeTable, energy_data: &str) -> serde_json::Value {
    let modes = table
        .entries
        .iter()
        .map(|e| ModeJson {
            couple: e.couple.clone(),
            index: e.pair.index,
            lam: ComplexJson {
                re: e.pair.lam.re,
                im: e.pair.lam.im,
            },
            abs_lam: e.abs_lam,
            period_minutes: e.period.map(|t| t / 60.0),
            mode_norm: e.mode_norm,
            energy: e.energy,
            bias_flag: e.bias,
            nyquist_flag: e.nyquist,
            singleton: e.is_singleton(),
            mode: e.pair.mode.iter().map(|v| ComplexJson { re: v.re, im: v.im }).collect(),
        })
        .collect();
    serde_json::to_value(TableJson {
        dt_seconds: table.dt,
        residual: table.residual,
        snapshots: table.snapshots,
        energy_data,
        warnings: &table.warnings,
        modes,
    })
    .expect("table serializes")
}

pub fn write_table_json(path: impl AsRef<Path>, table: &ModeTable, energy_data: &str) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&table_json(table, energy_data)).expect("table serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 3 - v.abs().log10().floor() as i32;
    format!("{:.*}", digits.max(0) as usize, v)
}

/// Table-style CSV: `{j,j+1}`, `|lam_j|`, `T_j` in minutes, `||V_j||`,
/// `E_j`, four significant digits. One row per listed non-bias entry with
/// `Im lam >= 0`.
pub fn format_table_csv(table: &ModeTable) -> String {
    let mut out = String::from("couple,abs_lam,period_min,mode_norm,energy\n");
    for e in table.entries.iter().filter(|e| !e.bias && e.pair.lam.im >= 0.0) {
        let label = e.couple.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let period = e.period.map_or_else(|| "nyquist".to_owned(), |t| sig4(t / 60.0));
        writeln!(
            out,
            "\"{{{label}}}\",{},{period},{},{}",
            sig4(e.abs_lam),
            sig4(e.mode_norm),
            sig4(e.energy)
        )
        .unwrap();
    }
    out
}

pub fn write_table_csv(path: impl AsRef<Path>, table: &ModeTable) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_table_csv(table)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{ModeEntry, RitzPair};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig4(0.99129), "0.9913");
        assert_eq!(sig4(14.2301), "14.23");
        assert_eq!(sig4(133.921), "133.9");
        assert_eq!(sig4(7.18234), "7.182");
        assert_eq!(sig4(11.2599), "11.26");
    }

    #[test]
    fn table_row_layout() {
        let lam = Complex64::from_polar(0.9913, 2.0 * PI / 14.23);
        let mut e = ModeEntry::new(
            RitzPair {
                lam,
                mode: vec![Complex64::new(1.0640, 0.0)],
                index: 0,
            },
            60.0,
            241,
            Some(1),
        );
        e.couple = vec![1, 2];
        let t = ModeTable {
            dt: 60.0,
            residual: 0.0,
            snapshots: 241,
            entries: vec![e],
            warnings: vec![],
        };
        let csv = format_table_csv(&t);
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("\"{1,2}\",0.9913,14.23,1.064,"), "{row}");
        let json = table_json(&t, "mean-removed");
        assert_eq!(json["modes"][0]["couple"], serde_json::json!([1, 2]));
        assert!((json["modes"][0]["period_minutes"].as_f64().unwrap() - 14.23).abs() < 1e-9);
    }
}
