//! Spatial differentiation of a mode over the sensor layout.
//!
//! Every method reduces to a per-sensor linear stencil `g_i = sum_j w_ij f_j`
//! (one `d`-vector of weights per contributing sensor), which is then
//! applied to the real and imaginary parts of the mode alike.
//!
//! * Declared grids: central differences on interior lattice points,
//!   one-sided differences on the edges, per axis.
//! * Scattered layouts: the affine model `f_i + g . (r - r_i)` is fitted to
//!   the `k` nearest neighbors by least squares with weights `1/|r - r_i|`.
//!   The sensor's own value is matched exactly (its weight is unbounded).

mod flux;
mod svg;

pub use flux::{flux_consistency, load_sources, parse_sources, Source, SourceKind};
pub use svg::{quiver_svg, write_quiver_svg};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::timeseries::{distance, SensorLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    GridCentral,
    GridOnesided,
    ScatteredLsq,
}

impl GradientMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GradientMethod::GridCentral => "grid_central",
            GradientMethod::GridOnesided => "grid_onesided",
            GradientMethod::ScatteredLsq => "scattered_lsq",
        }
    }
}

/// Where the differentiated mode came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSource {
    PhaseAverage,
    DmdMode,
}

impl ModeSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeSource::PhaseAverage => "phase_average",
            ModeSource::DmdMode => "dmd_mode",
        }
    }
}

/// Mode values at the sensors, in layout order.
#[derive(Debug, Clone, Copy)]
pub enum ModeValues<'a> {
    Real(&'a [f64]),
    Complex(&'a [Complex64]),
}

impl ModeValues<'_> {
    fn len(&self) -> usize {
        match self {
            ModeValues::Real(v) => v.len(),
            ModeValues::Complex(v) => v.len(),
        }
    }

    fn get(&self, i: usize) -> Complex64 {
        match self {
            ModeValues::Real(v) => Complex64::new(v[i], 0.0),
            ModeValues::Complex(v) => v[i],
        }
    }

    fn is_complex(&self) -> bool {
        matches!(self, ModeValues::Complex(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    /// Neighbor count for the scattered fit (capped at `M - 1`).
    pub neighbors: usize,
    /// Neighbor geometries with a weighted design condition number above
    /// this are marked invalid.
    pub max_condition: f64,
    /// Ignore a declared grid and use the scattered fit everywhere.
    pub force_scattered: bool,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions {
            neighbors: 6,
            max_condition: 1e8,
            force_scattered: false,
        }
    }
}

/// Per-sensor gradient vectors of a mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    /// One `d`-vector per sensor, data units per meter. Zero where invalid.
    pub vectors: Vec<Vec<Complex64>>,
    pub valid: Vec<bool>,
    pub methods: Vec<GradientMethod>,
    /// The differentiated mode was complex.
    pub complex: bool,
    pub source: ModeSource,
}

impl GradientField {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Real part of sensor `i`'s gradient.
    pub fn real(&self, i: usize) -> Vec<f64> {
        self.vectors[i].iter().map(|g| g.re).collect()
    }
}

struct Stencil {
    /// `(sensor, weight per axis)`
    terms: Vec<(usize, Vec<f64>)>,
    valid: bool,
    method: GradientMethod,
}

fn grid_stencils(layout: &SensorLayout) -> Vec<Stencil> {
    let g = layout.grid().expect("grid declared");
    let mut at = vec![usize::MAX; g.rows * g.cols];
    for i in 0..layout.len() {
        let (r, c) = layout.lattice_index(i).expect("grid declared");
        at[r * g.cols + c] = i;
    }
    let d = layout.dim();
    (0..layout.len())
        .map(|i| {
            let (r, c) = layout.lattice_index(i).expect("grid declared");
            let mut terms: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut central = true;
            let axes: &[(usize, usize, usize, f64)] = &[(0, c, g.cols, g.dx), (1, r, g.rows, g.dy)];
            for &(axis, pos, count, h) in axes.iter().take(d) {
                let idx = |p: usize| if axis == 0 { at[r * g.cols + p] } else { at[p * g.cols + c] };
                let mut push = |sensor: usize, w: f64| {
                    let mut v = vec![0.0; d];
                    v[axis] = w;
                    terms.push((sensor, v));
                };
                if pos > 0 && pos + 1 < count {
                    push(idx(pos - 1), -0.5 / h);
                    push(idx(pos + 1), 0.5 / h);
                } else if pos + 1 < count {
                    central = false;
                    push(i, -1.0 / h);
                    push(idx(pos + 1), 1.0 / h);
                } else {
                    central = false;
                    push(idx(pos - 1), -1.0 / h);
                    push(i, 1.0 / h);
                }
            }
            Stencil {
                terms,
                valid: true,
                method: if central {
                    GradientMethod::GridCentral
                } else {
                    GradientMethod::GridOnesided
                },
            }
        })
        .collect()
}

/// Indices of the `k` sensors nearest to sensor `i` (ties by index).
pub(crate) fn nearest_neighbors(layout: &SensorLayout, i: usize, k: usize) -> Vec<usize> {
    let coords = layout.coords();
    let mut others: Vec<(f64, usize)> = (0..layout.len())
        .filter(|&j| j != i)
        .map(|j| (distance(&coords[i], &coords[j]), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

fn scattered_stencils(layout: &SensorLayout, opts: &GradientOptions) -> Result<Vec<Stencil>> {
    let d = layout.dim();
    let k = opts.neighbors.min(layout.len().saturating_sub(1));
    let coords = layout.coords();
    (0..layout.len())
        .map(|i| {
            let invalid = Stencil {
                terms: Vec::new(),
                valid: false,
                method: GradientMethod::ScatteredLsq,
            };
            if k < d {
                return Ok(invalid);
            }
            let nbrs = nearest_neighbors(layout, i, k);
            // Rows sqrt(w_j) (r_j - r_i), w_j = 1 / |r_j - r_i|.
            let mut design = DMatrix::<f64>::zeros(k, d);
            let mut sqrt_w = Vec::with_capacity(k);
            for (row, &j) in nbrs.iter().enumerate() {
                let dist = distance(&coords[j], &coords[i]);
                let sw = dist.recip().sqrt();
                sqrt_w.push(sw);
                for a in 0..d {
                    design[(row, a)] = sw * (coords[j][a] - coords[i][a]);
                }
            }
            if linalg::condition_number(&design)? > opts.max_condition {
                return Ok(invalid);
            }
            // g = (D^T D)^{-1} D^T sqrt(W) (f_nbr - f_i)
            let normal = design.transpose() * &design;
            let Some(inv) = normal.try_inverse() else {
                return Ok(invalid);
            };
            let op = inv * design.transpose();
            let mut self_w = vec![0.0; d];
            let mut terms = Vec::with_capacity(k + 1);
            for (col, &j) in nbrs.iter().enumerate() {
                let w: Vec<f64> = (0..d).map(|a| op[(a, col)] * sqrt_w[col]).collect();
                for a in 0..d {
                    self_w[a] -= w[a];
                }
                terms.push((j, w));
            }
            terms.push((i, self_w));
            Ok(Stencil {
                terms,
                valid: true,
                method: GradientMethod::ScatteredLsq,
            })
        })
        .collect()
}

/// Gradient of `mode` at every sensor of `layout`.
pub fn gradient_field(
    mode: ModeValues<'_>,
    layout: &SensorLayout,
    source: ModeSource,
    opts: &GradientOptions,
) -> Result<GradientField> {
    if mode.len() != layout.len() {
        return Err(Error::Argument(format!(
            "mode has {} entries, layout has {} sensors",
            mode.len(),
            layout.len()
        )));
    }
    let stencils = if layout.grid().is_some() && !opts.force_scattered {
        grid_stencils(layout)
    } else {
        scattered_stencils(layout, opts)?
    };
    if stencils.iter().all(|s| !s.valid) {
        return Err(Error::Geometry("no sensor has a usable neighborhood".into()));
    }
    let d = layout.dim();
    let vectors = stencils
        .iter()
        .map(|s| {
            let mut g = vec![Complex64::new(0.0, 0.0); d];
            for (j, w) in &s.terms {
                let f = mode.get(*j);
                for a in 0..d {
                    g[a] += f * w[a];
                }
            }
            g
        })
        .collect();
    Ok(GradientField {
        vectors,
        valid: stencils.iter().map(|s| s.valid).collect(),
        methods: stencils.iter().map(|s| s.method).collect(),
        complex: mode.is_complex(),
        source,
    })
}

/// Component-wise RMS of the couple's gradient over one period.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsGradient {
    pub values: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
}

/// `sqrt(2) |dV/dr_a|` per sensor and axis for the scaled mode `V`.
pub fn rms_gradient(complex_mode: &[Complex64], layout: &SensorLayout, opts: &GradientOptions) -> Result<RmsGradient> {
    let field = gradient_field(ModeValues::Complex(complex_mode), layout, ModeSource::DmdMode, opts)?;
    Ok(rms_of_field(&field))
}

pub fn rms_of_field(field: &GradientField) -> RmsGradient {
    RmsGradient {
        values: field
            .vectors
            .iter()
            .map(|g| g.iter().map(|c| std::f64::consts::SQRT_2 * c.norm()).collect())
            .collect(),
        valid: field.valid.clone(),
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// `channel_id,x,y,gx_re,gy_re[,gx_im,gy_im],valid,method`
pub fn gradient_csv(field: &GradientField, layout: &SensorLayout) -> String {
    let d = layout.dim();
    let mut out = String::from("channel_id");
    for a in &AXES[..d] {
        write!(out, ",{a}").unwrap();
    }
    for a in &AXES[..d] {
        write!(out, ",g{a}_re").unwrap();
    }
    if field.complex {
        for a in &AXES[..d] {
            write!(out, ",g{a}_im").unwrap();
        }
    }
    out.push_str(",valid,method\n");
    for (i, id) in layout.ids().iter().enumerate() {
        out.push_str(id);
        for v in &layout.coords()[i] {
            write!(out, ",{v}").unwrap();
        }
        for g in &field.vectors[i] {
            write!(out, ",{}", g.re).unwrap();
        }
        if field.complex {
            for g in &field.vectors[i] {
                write!(out, ",{}", g.im).unwrap();
            }
        }
        writeln!(out, ",{},{}", field.valid[i], field.methods[i].as_str()).unwrap();
    }
    out
}

pub fn rms_csv(rms: &RmsGradient, layout: &SensorLayout) -> String {
    let d = layout.dim();
    let mut out = String::from("channel_id");
    for a in &AXES[..d] {
        write!(out, ",rms_g{a}").unwrap();
    }
    out.push_str(",valid\n");
    for (i, id) in layout.ids().iter().enumerate() {
        out.push_str(id);
        for v in &rms.values[i] {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{}", rms.valid[i]).unwrap();
    }
    out
}

pub fn write_gradient_csv(path: impl AsRef<Path>, field: &GradientField, layout: &SensorLayout) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, gradient_csv(field, layout)).map_err(|e| Error::io(path, e))
}
