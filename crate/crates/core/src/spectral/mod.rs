//! Ritz approximations of Koopman eigenvalues and modes.
//!
//! [`companion_kmd`] fits the companion-matrix (Arnoldi-type) model to a
//! record and returns a [`ModeTable`]: every Ritz value `lam` with its
//! scaled mode, sorted by the energy-oriented norm.

mod companion;
mod export;

pub use companion::{companion_kmd, companion_kmd_with, CompanionOptions};
pub use export::{format_table_csv, table_json, write_table_csv, write_table_json};

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `|arg lam|` below this (radians) marks the bias / trend entry.
pub const BIAS_THRESHOLD: f64 = 1e-6;
/// Relative distance within which `lam` and `conj(lam')` form a couple.
pub const CONJUGATE_TOL: f64 = 1e-8;

/// One Ritz value with its scaled mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RitzPair {
    pub lam: Complex64,
    pub mode: Vec<Complex64>,
    /// Position of `lam` in the eigen-solver output.
    pub index: usize,
}

impl RitzPair {
    pub fn is_real(&self) -> bool {
        self.lam.im == 0.0
    }

    pub fn mode_norm(&self) -> f64 {
        self.mode.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
    }
}

/// Energy-oriented norm of a Ritz pair over `n` snapshots.
///
/// Real `lam` sums `|lam^k V|^2`; complex `lam` sums `|2 Re(lam^k V)|^2`,
/// i.e. the contribution of the whole conjugate couple. `0^0` is taken as 1.
pub fn energy_norm(p: &RitzPair, n: usize) -> f64 {
    let mut power = Complex64::new(1.0, 0.0);
    let mut total = 0.0;
    for _ in 0..n {
        total += if p.is_real() {
            p.mode.iter().map(|v| (power * v).norm_sqr()).sum::<f64>()
        } else {
            p.mode.iter().map(|v| (2.0 * (power * v).re).powi(2)).sum::<f64>()
        };
        power *= p.lam;
    }
    total.sqrt()
}

/// Oscillation period `2 pi dt / |arg lam|` in seconds, or `None` for the
/// bias entry (`|arg lam| < threshold`).
pub fn period_of(lam: Complex64, dt: f64) -> Option<f64> {
    period_with_threshold(lam, dt, BIAS_THRESHOLD)
}

pub fn period_with_threshold(lam: Complex64, dt: f64, threshold: f64) -> Option<f64> {
    let arg = lam.arg().abs();
    (arg >= threshold).then(|| 2.0 * PI * dt / arg)
}

/// A row of the mode table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeEntry {
    pub pair: RitzPair,
    /// `{j, j+1}` label for a couple, `{j}` for a singleton, empty for bias.
    pub couple: Vec<usize>,
    pub abs_lam: f64,
    /// Period in seconds; `None` for the bias entry and at Nyquist.
    pub period: Option<f64>,
    pub mode_norm: f64,
    pub energy: f64,
    pub bias: bool,
    /// `lam` sits at (or beyond) the Nyquist frequency: negative real.
    pub nyquist: bool,
    /// Eigen-solver index of the conjugate partner, when paired.
    pub conjugate: Option<usize>,
}

impl ModeEntry {
    pub(crate) fn new(pair: RitzPair, dt: f64, n: usize, conjugate: Option<usize>) -> Self {
        let raw_period = period_of(pair.lam, dt);
        let bias = raw_period.is_none();
        let nyquist = !bias && pair.is_real();
        ModeEntry {
            abs_lam: pair.lam.norm(),
            period: raw_period.filter(|_| !nyquist),
            mode_norm: pair.mode_norm(),
            energy: energy_norm(&pair, n),
            bias,
            nyquist,
            conjugate,
            couple: Vec::new(),
            pair,
        }
    }

    pub fn lam(&self) -> Complex64 {
        self.pair.lam
    }

    pub fn is_complex(&self) -> bool {
        !self.pair.is_real()
    }

    /// Complex entry without a conjugate partner among the solver output.
    pub fn is_singleton(&self) -> bool {
        self.is_complex() && self.conjugate.is_none()
    }
}

/// Ranked list of Ritz pairs with derived columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTable {
    pub dt: f64,
    /// Norm of the companion least-squares defect `y_{N-1} - K c`.
    pub residual: f64,
    /// Snapshot count `N` the energies were summed over.
    pub snapshots: usize,
    pub entries: Vec<ModeEntry>,
    pub warnings: Vec<String>,
}

impl ModeTable {
    /// Sorts by energy (descending) and assigns `{j, j+1}` labels to the
    /// non-bias entries. Couples are kept adjacent, `Im lam > 0` first.
    pub(crate) fn sort_and_label(&mut self) {
        self.entries.sort_by(|a, b| {
            b.energy
                .total_cmp(&a.energy)
                .then(b.pair.lam.im.total_cmp(&a.pair.lam.im))
                .then(a.pair.index.cmp(&b.pair.index))
        });
        // Re-seat each conjugate directly after its Im > 0 partner.
        let mut ordered: Vec<ModeEntry> = Vec::with_capacity(self.entries.len());
        let mut taken = vec![false; self.entries.len()];
        for i in 0..self.entries.len() {
            if taken[i] {
                continue;
            }
            taken[i] = true;
            ordered.push(self.entries[i].clone());
            if let Some(partner) = self.entries[i].conjugate {
                if let Some(j) = (0..self.entries.len()).find(|&j| !taken[j] && self.entries[j].pair.index == partner) {
                    taken[j] = true;
                    ordered.push(self.entries[j].clone());
                }
            }
        }
        let mut label = 1;
        let mut i = 0;
        while i < ordered.len() {
            if ordered[i].bias {
                ordered[i].couple.clear();
                i += 1;
                continue;
            }
            let paired_next = ordered[i]
                .conjugate
                .is_some_and(|p| i + 1 < ordered.len() && ordered[i + 1].pair.index == p);
            if paired_next {
                ordered[i].couple = vec![label, label + 1];
                ordered[i + 1].couple = vec![label, label + 1];
                label += 2;
                i += 2;
            } else {
                ordered[i].couple = vec![label];
                label += 1;
                i += 1;
            }
        }
        self.entries = ordered;
    }

    /// Entries flagged as bias.
    pub fn bias_entries(&self) -> impl Iterator<Item = &ModeEntry> {
        self.entries.iter().filter(|e| e.bias)
    }

    /// Oscillatory entries in rank order, one per couple (`Im lam > 0`).
    pub fn oscillatory(&self) -> impl Iterator<Item = &ModeEntry> {
        self.entries
            .iter()
            .filter(|e| !e.bias && e.is_complex() && (e.pair.lam.im > 0.0 || e.conjugate.is_none()))
    }

    /// Reconstructs snapshot `k` from the listed entries. A complex entry
    /// whose conjugate is not listed contributes `2 Re(lam^k V)`.
    pub fn reconstruct(&self, k: usize) -> Vec<Complex64> {
        let m = self.entries.first().map_or(0, |e| e.pair.mode.len());
        let listed: std::collections::HashSet<usize> = self.entries.iter().map(|e| e.pair.index).collect();
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        for e in &self.entries {
            let p = e.pair.lam.powu(k as u32);
            let implicit_conj = e.is_complex() && !e.conjugate.is_some_and(|c| listed.contains(&c));
            for (yi, v) in y.iter_mut().zip(&e.pair.mode) {
                let term = p * v;
                *yi += if implicit_conj {
                    Complex64::new(2.0 * term.re, 0.0)
                } else {
                    term
                };
            }
        }
        y
    }

    /// The `Im lam > 0` member of the top-ranked couple, if any.
    pub fn dominant(&self) -> Option<&ModeEntry> {
        self.oscillatory().next()
    }
}

/// Keeps the `top` highest-energy couples, relabeled `{1,2}, {3,4}, ...`,
/// listing only the `Im lam > 0` member of each. Bias entries are retained,
/// flagged and unlabeled, after the ranked rows.
pub fn rank_modes(table: &ModeTable, top: usize) -> Result<ModeTable> {
    if top < 1 {
        return Err(Error::Argument("top must be at least 1".into()));
    }
    let mut entries: Vec<ModeEntry> = table.oscillatory().take(top).cloned().collect();
    for (n, e) in entries.iter_mut().enumerate() {
        e.couple = if e.conjugate.is_some() {
            vec![2 * n + 1, 2 * n + 2]
        } else {
            vec![2 * n + 1]
        };
    }
    entries.extend(table.bias_entries().cloned());
    let mut warnings = table.warnings.clone();
    if entries.iter().all(|e| e.bias) {
        warnings.push("no oscillatory couples: ranking is empty".into());
    }
    Ok(ModeTable {
        dt: table.dt,
        residual: table.residual,
        snapshots: table.snapshots,
        entries,
        warnings,
    })
}
