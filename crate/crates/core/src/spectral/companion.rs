use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{ModeEntry, ModeTable, RitzPair, CONJUGATE_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::timeseries::SnapshotMatrix;

/// Tunables of the companion-matrix fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompanionOptions {
    /// Relative singular-value cutoff for the companion least-squares solve.
    pub rank_tol: f64,
    /// Relative singular-value cutoff for the Vandermonde mode solve.
    pub vandermonde_tol: f64,
    /// Modes whose energy falls below this fraction of the record energy are
    /// dropped as numerically zero.
    pub zero_mode_tol: f64,
}

impl Default for CompanionOptions {
    fn default() -> Self {
        CompanionOptions {
            rank_tol: 1e-10,
            vandermonde_tol: 1e-13,
            zero_mode_tol: 1e-12,
        }
    }
}

/// Companion-matrix Koopman mode decomposition with default options.
pub fn companion_kmd(s: &SnapshotMatrix) -> Result<ModeTable> {
    companion_kmd_with(s, &CompanionOptions::default())
}

/// Companion-matrix Koopman mode decomposition.
///
/// With `K = [y_0 ... y_{N-2}]`, solves `K c ~ y_{N-1}` by truncated SVD,
/// takes the eigenvalues of the companion matrix of `c` as Ritz values and
/// fits the modes to `y_k = sum_j lam_j^k V_j`, `k = 0..N-2`, by least
/// squares over a real basis (conjugate couples share `Re V`, `Im V`).
pub fn companion_kmd_with(s: &SnapshotMatrix, opts: &CompanionOptions) -> Result<ModeTable> {
    let n = s.snapshots();
    let m = s.channels();
    if n < 3 {
        return Err(Error::TooShort { rows: n });
    }
    let p = n - 1;
    let y = s.values();
    let krylov = y.columns(0, p).into_owned();
    let last = y.column(p).into_owned();

    let fit = linalg::lstsq(&krylov, &DMatrix::from_column_slice(m, 1, last.as_slice()), opts.rank_tol)?;
    if fit.rank < 1 || fit.sigma_max == 0.0 {
        return Err(Error::DegenerateData("record has effective rank 0".into()));
    }
    let c = fit.x.column(0).into_owned();
    let residual = (&last - &krylov * &c).norm();

    let mut companion = DMatrix::<f64>::zeros(p, p);
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    companion.column_mut(p - 1).copy_from(&c);
    let mut lams = linalg::eigenvalues(&companion)?;
    for lam in &mut lams {
        if lam.im.abs() <= 4.0 * f64::EPSILON * lam.norm() {
            lam.im = 0.0;
        }
    }

    let mut warnings = Vec::new();
    let partner = pair_conjugates(&lams);
    for (j, lam) in lams.iter().enumerate() {
        if lam.im != 0.0 && partner[j].is_none() {
            warnings.push(format!("Ritz value {lam} has no conjugate partner; reported as singleton"));
        }
    }

    let modes = fit_modes(&krylov, &lams, &partner, opts.vandermonde_tol)?;

    let record_energy = y.norm();
    let mut entries = Vec::with_capacity(p);
    let mut dropped = 0;
    for (j, lam) in lams.iter().enumerate() {
        let pair = RitzPair {
            lam: *lam,
            mode: modes[j].clone(),
            index: j,
        };
        let entry = ModeEntry::new(pair, s.dt(), n, partner[j]);
        // Couples are dropped together, judged on the shared energy.
        let energy = partner[j].map_or(entry.energy, |q| entry.energy.max(energy_of(&modes[q], lams[q], n)));
        if entry.mode_norm == 0.0 || energy <= opts.zero_mode_tol * record_energy {
            dropped += 1;
            continue;
        }
        entries.push(entry);
    }
    if dropped > 0 {
        log::debug!("dropped {dropped} numerically zero modes");
        warnings.push(format!("dropped {dropped} numerically zero mode(s)"));
    }
    let mut table = ModeTable {
        dt: s.dt(),
        residual,
        snapshots: n,
        entries,
        warnings,
    };
    table.sort_and_label();
    Ok(table)
}

fn energy_of(mode: &[Complex64], lam: Complex64, n: usize) -> f64 {
    super::energy_norm(
        &RitzPair {
            lam,
            mode: mode.to_vec(),
            index: 0,
        },
        n,
    )
}

/// Matches every complex value with its nearest unmatched conjugate.
fn pair_conjugates(lams: &[Complex64]) -> Vec<Option<usize>> {
    let mut partner = vec![None; lams.len()];
    for i in 0..lams.len() {
        if lams[i].im <= 0.0 || partner[i].is_some() {
            continue;
        }
        let target = lams[i].conj();
        let best = (0..lams.len())
            .filter(|&j| j != i && lams[j].im < 0.0 && partner[j].is_none())
            .map(|j| (j, (lams[j] - target).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, dist)) = best {
            if dist <= CONJUGATE_TOL * lams[i].norm().max(1.0) {
                partner[i] = Some(j);
                partner[j] = Some(i);
            }
        }
    }
    partner
}

/// Solves the Vandermonde system for the modes in real arithmetic.
///
/// Real `lam` contributes the basis column `lam^k`; a couple (or a complex
/// singleton) contributes `2 Re(lam^k)` and `-2 Im(lam^k)` with unknowns
/// `Re V` and `Im V`, so the fitted field is real by construction.
fn fit_modes(
    krylov: &DMatrix<f64>,
    lams: &[Complex64],
    partner: &[Option<usize>],
    rcond: f64,
) -> Result<Vec<Vec<Complex64>>> {
    let (m, p) = krylov.shape();
    // (eigen index, has imaginary column)
    let mut groups: Vec<(usize, bool)> = Vec::new();
    for (j, lam) in lams.iter().enumerate() {
        if lam.im == 0.0 {
            groups.push((j, false));
        } else if lam.im > 0.0 || partner[j].is_none() {
            groups.push((j, true));
        }
    }
    let ncols: usize = groups.iter().map(|&(_, c)| if c { 2 } else { 1 }).sum();
    let mut basis = DMatrix::<f64>::zeros(p, ncols);
    let mut col = 0;
    for &(j, complex) in &groups {
        let mut power = Complex64::new(1.0, 0.0);
        for k in 0..p {
            if complex {
                basis[(k, col)] = 2.0 * power.re;
                basis[(k, col + 1)] = -2.0 * power.im;
            } else {
                basis[(k, col)] = power.re;
            }
            power *= lams[j];
        }
        col += if complex { 2 } else { 1 };
    }
    // Column equilibration before the SVD; undone on the solution.
    let scales: Vec<f64> = basis
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for (mut c, s) in basis.column_iter_mut().zip(&scales) {
        c /= *s;
    }
    let sol = linalg::lstsq(&basis, &krylov.transpose(), rcond)?;
    if sol.rank < ncols {
        log::debug!("Vandermonde basis rank {} of {}", sol.rank, ncols);
    }

    let mut modes = vec![vec![Complex64::new(0.0, 0.0); m]; lams.len()];
    let mut col = 0;
    for &(j, complex) in &groups {
        for i in 0..m {
            let re = sol.x[(col, i)] / scales[col];
            modes[j][i] = if complex {
                Complex64::new(re, sol.x[(col + 1, i)] / scales[col + 1])
            } else {
                Complex64::new(re, 0.0)
            };
        }
        if complex {
            if let Some(q) = partner[j] {
                modes[q] = modes[j].iter().map(Complex64::conj).collect();
            }
            col += 2;
        } else {
            col += 1;
        }
    }
    Ok(modes)
}
