//! Mean removal, decomposition, period selection, phase averaging and
//! gradient estimation in one pass, plus the file outputs of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradient::{
    flux_consistency, gradient_csv, gradient_field, load_sources, quiver_svg, rms_csv, rms_gradient, rms_of_field,
    GradientField, GradientOptions, ModeSource, ModeValues, RmsGradient, Source, SourceKind,
};
use crate::phaseavg::{phase_average, PhaseAverageResult, MEAN_TOL};
use crate::spectral::{
    companion_kmd_with, format_table_csv, rank_modes, table_json, CompanionOptions, ModeEntry, ModeTable,
    BIAS_THRESHOLD, CONJUGATE_TOL,
};
use crate::timeseries::{load_layout, load_snapshots, remove_mean, SensorLayout, SnapshotMatrix};

/// How the phase-averaging period is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodRule {
    /// Period of the top-ranked couple, rounded to whole samples (ties to even).
    Auto,
    Samples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub top: usize,
    pub period: PeriodRule,
    pub gradient_source: ModeSource,
    pub companion: CompanionOptions,
    pub gradient: GradientOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            top: 6,
            period: PeriodRule::Auto,
            gradient_source: ModeSource::PhaseAverage,
            companion: CompanionOptions::default(),
            gradient: GradientOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// Layout reordered to the record's channel order.
    pub layout: SensorLayout,
    /// All modes of the mean-removed record.
    pub table: ModeTable,
    pub ranked: ModeTable,
    /// `T / dt` of the top-ranked couple, before rounding.
    pub top_period_samples: Option<f64>,
    pub period_samples: usize,
    pub phase: PhaseAverageResult,
    /// Scaled mode `V` of the top-ranked couple (`Im lam > 0` member).
    pub dmd_mode: Option<Vec<Complex64>>,
    pub field: GradientField,
    pub rms: RmsGradient,
    pub flux: Vec<(Source, f64)>,
}

impl Analysis {
    pub fn top_couple(&self) -> Option<&ModeEntry> {
        top_couple(&self.ranked)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self.table.warnings.clone();
        w.extend(self.ranked.warnings.iter().filter(|s| !self.table.warnings.contains(s)).cloned());
        w.extend(self.phase.warnings.iter().map(ToString::to_string));
        let invalid = self.field.valid.iter().filter(|v| !**v).count();
        if invalid > 0 {
            w.push(format!("{invalid} sensor(s) without a usable gradient stencil"));
        }
        w
    }
}

fn top_couple(ranked: &ModeTable) -> Option<&ModeEntry> {
    ranked.entries.iter().find(|e| !e.bias && e.period.is_some())
}

/// Runs the analysis on an in-memory record.
pub fn analyze(
    record: &SnapshotMatrix,
    layout: &SensorLayout,
    sources: &[Source],
    opts: &AnalysisOptions,
) -> Result<Analysis> {
    let layout = layout.aligned_to(record.channel_ids())?;
    let y = remove_mean(record);
    let table = companion_kmd_with(&y, &opts.companion)?;
    let ranked = rank_modes(&table, opts.top)?;
    let top = top_couple(&ranked);
    let top_period_samples = top.and_then(|e| e.period).map(|t| t / y.dt());
    let period_samples = match opts.period {
        PeriodRule::Samples(p) => p,
        PeriodRule::Auto => match top_period_samples {
            Some(p) => p.round_ties_even() as usize,
            None => return Err(Error::Period("no oscillatory couple to take a period from".into())),
        },
    };
    let phase = phase_average(&y, period_samples)?;
    let dmd_mode = top.map(|e| e.pair.mode.clone());

    let (field, rms) = match opts.gradient_source {
        ModeSource::PhaseAverage => {
            let field = gradient_field(ModeValues::Real(&phase.sum_real), &layout, ModeSource::PhaseAverage, &opts.gradient)?;
            let rms = rms_gradient(&phase.harmonic, &layout, &opts.gradient)?;
            (field, rms)
        }
        ModeSource::DmdMode => {
            let mode = dmd_mode
                .as_deref()
                .ok_or_else(|| Error::DegenerateData("no oscillatory couple to differentiate".into()))?;
            let field = gradient_field(ModeValues::Complex(mode), &layout, ModeSource::DmdMode, &opts.gradient)?;
            let rms = rms_of_field(&field);
            (field, rms)
        }
    };
    let flux = if sources.is_empty() {
        Vec::new()
    } else {
        let scores = flux_consistency(&field, &layout, sources)?;
        sources.iter().cloned().zip(scores).collect()
    };
    Ok(Analysis {
        layout,
        table,
        ranked,
        top_period_samples,
        period_samples,
        phase,
        dmd_mode,
        field,
        rms,
        flux,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub snapshots: PathBuf,
    pub layout: PathBuf,
    pub sources: Option<PathBuf>,
    pub dt_override: Option<f64>,
    pub out_dir: PathBuf,
    pub svg: bool,
    pub analysis: AnalysisOptions,
}

impl PipelineConfig {
    pub fn new(snapshots: impl Into<PathBuf>, layout: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            snapshots: snapshots.into(),
            layout: layout.into(),
            sources: None,
            dt_override: None,
            out_dir: out_dir.into(),
            svg: true,
            analysis: AnalysisOptions::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PeriodConfig {
    Samples(usize),
    Word(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    snapshots: String,
    layout: String,
    sources: Option<String>,
    dt: Option<f64>,
    out_dir: Option<String>,
    svg: Option<bool>,
    top: Option<usize>,
    period: Option<PeriodConfig>,
    gradient_source: Option<String>,
    neighbors: Option<usize>,
    max_condition: Option<f64>,
    force_scattered: Option<bool>,
}

pub fn parse_period_rule(s: &str) -> Result<PeriodRule> {
    if s == "auto" {
        return Ok(PeriodRule::Auto);
    }
    s.parse()
        .map(PeriodRule::Samples)
        .map_err(|_| Error::Config(format!("period must be `auto` or a sample count, got `{s}`")))
}

pub fn parse_mode_source(s: &str) -> Result<ModeSource> {
    match s {
        "phase_average" => Ok(ModeSource::PhaseAverage),
        "dmd_mode" => Ok(ModeSource::DmdMode),
        _ => Err(Error::Config(format!("gradient source must be `phase_average` or `dmd_mode`, got `{s}`"))),
    }
}

/// Reads a pipeline config; relative paths are taken from `base_dir`.
pub fn parse_pipeline_config(text: &str, base_dir: Option<&Path>) -> Result<PipelineConfig> {
    let f: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let path = |p: &str| match base_dir {
        Some(b) if Path::new(p).is_relative() => b.join(p),
        _ => PathBuf::from(p),
    };
    let mut cfg = PipelineConfig::new(path(&f.snapshots), path(&f.layout), path(f.out_dir.as_deref().unwrap_or("out")));
    cfg.sources = f.sources.as_deref().map(path);
    cfg.dt_override = f.dt;
    if let Some(v) = f.svg {
        cfg.svg = v;
    }
    let a = &mut cfg.analysis;
    if let Some(v) = f.top {
        a.top = v;
    }
    match f.period {
        Some(PeriodConfig::Samples(p)) => a.period = PeriodRule::Samples(p),
        Some(PeriodConfig::Word(w)) => a.period = parse_period_rule(&w)?,
        None => {}
    }
    if let Some(s) = f.gradient_source {
        a.gradient_source = parse_mode_source(&s)?;
    }
    if let Some(v) = f.neighbors {
        a.gradient.neighbors = v;
    }
    if let Some(v) = f.max_condition {
        a.gradient.max_condition = v;
    }
    if let Some(v) = f.force_scattered {
        a.gradient.force_scattered = v;
    }
    Ok(cfg)
}

pub fn load_pipeline_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pipeline_config(&text, path.parent())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

/// `source_id,kind,score`
pub fn flux_csv(flux: &[(Source, f64)]) -> String {
    let mut s = String::from("source_id,kind,score\n");
    for (src, score) in flux {
        let kind = match src.kind {
            SourceKind::Cooling => "cooling",
            SourceKind::Heating => "heating",
        };
        writeln!(s, "{},{kind},{score}", src.id).unwrap();
    }
    s
}

/// `channel_id,re,im`
pub fn mode_csv(ids: &[String], mode: &[Complex64]) -> String {
    let mut s = String::from("channel_id,re,im\n");
    for (id, v) in ids.iter().zip(mode) {
        writeln!(s, "{id},{},{}", v.re, v.im).unwrap();
    }
    s
}

/// Mode values read back from `phase_average.csv` or `dmd_mode.csv`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeFile {
    PhaseAverage {
        ids: Vec<String>,
        sum_real: Vec<f64>,
        harmonic: Vec<Complex64>,
    },
    Dmd {
        ids: Vec<String>,
        mode: Vec<Complex64>,
    },
}

impl ModeFile {
    pub fn ids(&self) -> &[String] {
        match self {
            ModeFile::PhaseAverage { ids, .. } | ModeFile::Dmd { ids, .. } => ids,
        }
    }

    pub fn source(&self) -> ModeSource {
        match self {
            ModeFile::PhaseAverage { .. } => ModeSource::PhaseAverage,
            ModeFile::Dmd { .. } => ModeSource::DmdMode,
        }
    }
}

/// Recognizes the file by its header.
pub fn parse_mode_file(text: &str) -> Result<ModeFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let pa = header == ["channel_id", "sum_real", "harmonic_re", "harmonic_im"];
    let dmd = header == ["channel_id", "re", "im"];
    if !pa && !dmd {
        return Err(Error::parse(
            1,
            "expected `channel_id,sum_real,harmonic_re,harmonic_im` or `channel_id,re,im`",
        ));
    }
    let mut ids = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len() - 1];
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        ids.push(rec[0].to_owned());
        for (c, col) in cols.iter_mut().enumerate() {
            let v: f64 = rec[c + 1]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("bad number `{}`", &rec[c + 1])))?;
            col.push(v);
        }
    }
    let complex = |re: &[f64], im: &[f64]| re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
    Ok(if pa {
        ModeFile::PhaseAverage {
            ids,
            harmonic: complex(&cols[1], &cols[2]),
            sum_real: cols.swap_remove(0),
        }
    } else {
        ModeFile::Dmd {
            ids,
            mode: complex(&cols[0], &cols[1]),
        }
    })
}

pub fn load_mode_file(path: impl AsRef<Path>) -> Result<ModeFile> {
    let path = path.as_ref();
    parse_mode_file(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Gradient, RMS gradient and optional flux scores of a stored mode.
pub fn gradient_of_mode(
    mode: &ModeFile,
    layout: &SensorLayout,
    sources: &[Source],
    opts: &GradientOptions,
) -> Result<(SensorLayout, GradientField, RmsGradient, Vec<(Source, f64)>)> {
    let layout = layout.aligned_to(mode.ids())?;
    let (field, rms) = match mode {
        ModeFile::PhaseAverage { sum_real, harmonic, .. } => (
            gradient_field(ModeValues::Real(sum_real), &layout, ModeSource::PhaseAverage, opts)?,
            rms_gradient(harmonic, &layout, opts)?,
        ),
        ModeFile::Dmd { mode, .. } => {
            let f = gradient_field(ModeValues::Complex(mode), &layout, ModeSource::DmdMode, opts)?;
            let r = rms_of_field(&f);
            (f, r)
        }
    };
    let flux = if sources.is_empty() {
        Vec::new()
    } else {
        sources.iter().cloned().zip(flux_consistency(&field, &layout, sources)?).collect()
    };
    Ok((layout, field, rms, flux))
}

/// Prefixes parse errors with the file they came from.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Loads the inputs, runs [`analyze`] and writes every artifact into
/// `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Analysis> {
    let record = in_file(&cfg.snapshots, load_snapshots(&cfg.snapshots, cfg.dt_override))?;
    let layout = in_file(&cfg.layout, load_layout(&cfg.layout))?;
    let sources = match &cfg.sources {
        Some(p) => in_file(p, load_sources(p))?,
        None => Vec::new(),
    };
    let a = analyze(&record, &layout, &sources, &cfg.analysis)?;

    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let energy_data = "mean-removed";
    write(dir, "mode_table.json", &pretty(&table_json(&a.table, energy_data)))?;
    write(dir, "mode_table.csv", &format_table_csv(&a.table))?;
    write(dir, "ranked_modes.csv", &format_table_csv(&a.ranked))?;
    write(dir, "phase_average.csv", &a.phase.to_csv())?;
    write(dir, "phase_average.json", &pretty(&a.phase.to_json()))?;
    if let Some(mode) = &a.dmd_mode {
        write(dir, "dmd_mode.csv", &mode_csv(record.channel_ids(), mode))?;
    }
    write(dir, "gradient.csv", &gradient_csv(&a.field, &a.layout))?;
    write(dir, "rms_gradient.csv", &rms_csv(&a.rms, &a.layout))?;
    if !a.flux.is_empty() {
        write(dir, "flux_consistency.csv", &flux_csv(&a.flux))?;
    }
    if cfg.svg && a.layout.dim() == 2 {
        let title = format!(
            "{} gradient, T = {} samples",
            cfg.analysis.gradient_source.as_str(),
            a.period_samples
        );
        write(dir, "gradient.svg", &quiver_svg(&a.field, &a.layout, &sources, &title)?)?;
    }

    let mut inputs = serde_json::Map::new();
    inputs.insert(
        "snapshots".into(),
        json!({ "path": display(&cfg.snapshots), "sha256": file_digest(&cfg.snapshots)? }),
    );
    inputs.insert(
        "layout".into(),
        json!({ "path": display(&cfg.layout), "sha256": file_digest(&cfg.layout)? }),
    );
    if let Some(p) = &cfg.sources {
        inputs.insert("sources".into(), json!({ "path": display(p), "sha256": file_digest(p)? }));
    }
    let opts = &cfg.analysis;
    let meta = json!({
        "tool": "roomkmd",
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs,
        "energy_data": energy_data,
        "channels": record.channels(),
        "snapshots": record.snapshots(),
        "dt_seconds": record.dt(),
        "dt_override": cfg.dt_override,
        "top": opts.top,
        "period_rule": match opts.period { PeriodRule::Auto => "auto".to_string(), PeriodRule::Samples(p) => p.to_string() },
        "top_couple_period_samples": a.top_period_samples,
        "period_samples": a.period_samples,
        "period_seconds": a.period_samples as f64 * record.dt(),
        "cycles_used": a.phase.cycles_used,
        "gradient_source": opts.gradient_source.as_str(),
        "rms_source": match opts.gradient_source {
            ModeSource::PhaseAverage => "harmonic_amplitude",
            ModeSource::DmdMode => "dmd_mode",
        },
        "tolerances": {
            "rank_tol": opts.companion.rank_tol,
            "vandermonde_tol": opts.companion.vandermonde_tol,
            "zero_mode_tol": opts.companion.zero_mode_tol,
            "bias_threshold_rad": BIAS_THRESHOLD,
            "conjugate_tol": CONJUGATE_TOL,
            "mean_tol": MEAN_TOL,
            "max_condition": opts.gradient.max_condition,
        },
        "gradient": {
            "neighbors": opts.gradient.neighbors,
            "force_scattered": opts.gradient.force_scattered,
            "grid": a.layout.grid().is_some(),
            "flux_radius_m": 2.0 * a.layout.median_spacing(),
        },
        "svg": cfg.svg && a.layout.dim() == 2,
        "warnings": a.warnings(),
    });
    write(dir, "run_metadata.json", &pretty(&meta))?;
    Ok(a)
}
