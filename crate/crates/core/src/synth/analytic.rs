use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use super::{resolve, room_sensor_layout};
use crate::error::{Error, Result};
use crate::spectral::{ModeEntry, ModeTable, RitzPair};
use crate::timeseries::{load_layout, SensorLayout, SnapshotMatrix};

/// Complex-valued function of position.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialField {
    /// `sum coef * x^px * y^py * z^pz`
    Polynomial(Vec<PolyTerm>),
    /// `amp * exp(i k . r)`
    PlaneWave { amp: Complex64, wavevector: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyTerm {
    pub coef: Complex64,
    pub powers: [u32; 3],
}

impl SpatialField {
    pub fn zero() -> Self {
        SpatialField::Polynomial(Vec::new())
    }

    pub fn eval(&self, r: &[f64]) -> Complex64 {
        match self {
            SpatialField::Polynomial(terms) => terms
                .iter()
                .map(|t| {
                    let mono: f64 = t
                        .powers
                        .iter()
                        .enumerate()
                        .map(|(a, &p)| if p == 0 { 1.0 } else { r.get(a).copied().unwrap_or(0.0).powi(p as i32) })
                        .product();
                    t.coef * mono
                })
                .sum(),
            SpatialField::PlaneWave { amp, wavevector } => {
                let phase: f64 = wavevector.iter().zip(r).map(|(k, x)| k * x).sum();
                amp * Complex64::from_polar(1.0, phase)
            }
        }
    }

    fn is_real(&self) -> bool {
        match self {
            SpatialField::Polynomial(terms) => terms.iter().all(|t| t.coef.im == 0.0),
            SpatialField::PlaneWave { amp, wavevector } => amp.im == 0.0 && wavevector.iter().all(|k| *k == 0.0),
        }
    }
}

/// One oscillatory component `2 Re(A(r) exp(i (2 pi t / period + phase)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tone {
    /// Seconds.
    pub period: f64,
    pub amplitude: SpatialField,
    /// Radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSpec {
    pub layout: SensorLayout,
    pub dt: f64,
    pub snapshots: usize,
    pub t0: f64,
    /// Real-valued, constant in time.
    pub bias: SpatialField,
    pub tones: Vec<Tone>,
    pub noise_std: f64,
    pub seed: u64,
}

impl AnalyticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Argument("dt must be positive".into()));
        }
        if self.snapshots < 3 {
            return Err(Error::Argument("need at least 3 snapshots".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Argument("noise_std must be non-negative".into()));
        }
        if !self.bias.is_real() {
            return Err(Error::Argument("bias must be real-valued".into()));
        }
        for t in &self.tones {
            if !(t.period.is_finite() && t.period > 2.0 * self.dt) {
                return Err(Error::Argument(format!(
                    "tone period {} s is not above the Nyquist period {} s",
                    t.period,
                    2.0 * self.dt
                )));
            }
        }
        Ok(())
    }

    /// Discrete-time eigenvalue `exp(i 2 pi dt / T)` of a tone.
    pub fn eigenvalue(&self, tone: &Tone) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * self.dt / tone.period)
    }
}

/// Samples the analytic field and returns it with the exact mode table.
///
/// The truth modes are `A_m(r_i) exp(i psi_m)`, the scaled modes that
/// reproduce the record as `sum_j lam_j^k V_j`.
pub fn generate_analytic(spec: &AnalyticSpec) -> Result<(SnapshotMatrix, ModeTable)> {
    spec.validate()?;
    let coords = spec.layout.coords();
    let m = coords.len();
    let n = spec.snapshots;
    let bias: Vec<f64> = coords.iter().map(|r| spec.bias.eval(r).re).collect();
    let amps: Vec<Vec<Complex64>> = spec
        .tones
        .iter()
        .map(|t| coords.iter().map(|r| t.amplitude.eval(r) * Complex64::from_polar(1.0, t.phase)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut channels = vec![vec![0.0; n]; m];
    for k in 0..n {
        let phasors: Vec<Complex64> = spec
            .tones
            .iter()
            .map(|t| {
                let cycles = (k as f64 * spec.dt / t.period).fract();
                Complex64::from_polar(1.0, 2.0 * PI * cycles)
            })
            .collect();
        for i in 0..m {
            let mut v = bias[i];
            for (a, p) in amps.iter().zip(&phasors) {
                v += 2.0 * (a[i] * p).re;
            }
            if spec.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            channels[i][k] = v;
        }
    }
    let record = SnapshotMatrix::from_channels(&channels, spec.dt, spec.t0, spec.layout.ids().to_vec())?;

    let mut entries = Vec::new();
    let mut index = 0;
    if bias.iter().any(|b| *b != 0.0) {
        let pair = RitzPair {
            lam: Complex64::new(1.0, 0.0),
            mode: bias.iter().map(|&b| Complex64::new(b, 0.0)).collect(),
            index,
        };
        entries.push(ModeEntry::new(pair, spec.dt, n, None));
        index += 1;
    }
    for (t, a) in spec.tones.iter().zip(&amps) {
        let lam = spec.eigenvalue(t);
        let up = RitzPair {
            lam,
            mode: a.clone(),
            index,
        };
        let down = RitzPair {
            lam: lam.conj(),
            mode: a.iter().map(Complex64::conj).collect(),
            index: index + 1,
        };
        entries.push(ModeEntry::new(up, spec.dt, n, Some(index + 1)));
        entries.push(ModeEntry::new(down, spec.dt, n, Some(index)));
        index += 2;
    }
    let mut truth = ModeTable {
        dt: spec.dt,
        residual: 0.0,
        snapshots: n,
        entries,
        warnings: Vec::new(),
    };
    truth.sort_and_label();
    Ok((record, truth))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermConfig {
    re: f64,
    #[serde(default)]
    im: f64,
    #[serde(default)]
    x: u32,
    #[serde(default)]
    y: u32,
    #[serde(default)]
    z: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaneWaveConfig {
    re: f64,
    #[serde(default)]
    im: f64,
    #[serde(default)]
    kx: f64,
    #[serde(default)]
    ky: f64,
    #[serde(default)]
    kz: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToneConfig {
    /// Seconds.
    period: f64,
    #[serde(default)]
    phase: f64,
    #[serde(default)]
    poly: Vec<TermConfig>,
    plane_wave: Option<PlaneWaveConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyticConfig {
    dt: f64,
    snapshots: usize,
    #[serde(default)]
    t0: f64,
    #[serde(default)]
    noise_std: f64,
    #[serde(default)]
    seed: u64,
    layout: Option<String>,
    #[serde(default)]
    bias: Vec<TermConfig>,
    #[serde(default)]
    tone: Vec<ToneConfig>,
}

fn poly(terms: &[TermConfig]) -> SpatialField {
    SpatialField::Polynomial(
        terms
            .iter()
            .map(|t| PolyTerm {
                coef: Complex64::new(t.re, t.im),
                powers: [t.x, t.y, t.z],
            })
            .collect(),
    )
}

/// Parses an analytic dataset config. A relative `layout` path is resolved
/// against `base_dir`; without one the built-in 28-sensor room is used.
pub fn parse_analytic_config(text: &str, base_dir: Option<&Path>) -> Result<AnalyticSpec> {
    let cfg: AnalyticConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let layout = match &cfg.layout {
        Some(p) => load_layout(resolve(base_dir, p))?,
        None => room_sensor_layout(),
    };
    let tones = cfg
        .tone
        .iter()
        .map(|t| {
            let amplitude = match (&t.plane_wave, t.poly.is_empty()) {
                (Some(pw), true) => SpatialField::PlaneWave {
                    amp: Complex64::new(pw.re, pw.im),
                    wavevector: vec![pw.kx, pw.ky, pw.kz],
                },
                (None, false) => poly(&t.poly),
                _ => {
                    return Err(Error::Config(
                        "each tone needs exactly one of `poly` terms or `plane_wave`".into(),
                    ))
                }
            };
            Ok(Tone {
                period: t.period,
                amplitude,
                phase: t.phase,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = AnalyticSpec {
        layout,
        dt: cfg.dt,
        snapshots: cfg.snapshots,
        t0: cfg.t0,
        bias: poly(&cfg.bias),
        tones,
        noise_std: cfg.noise_std,
        seed: cfg.seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub const ANALYTIC_DEFAULT_TOML: &str = include_str!("../../configs/analytic_two_tone.toml");

/// Two travelling tones at 14.23 min and 89.16 min over the 28-sensor room.
pub fn analytic_default() -> AnalyticSpec {
    parse_analytic_config(ANALYTIC_DEFAULT_TOML, None).expect("built-in config is valid")
}
