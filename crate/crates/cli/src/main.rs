use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use roomkmd::gradient::{gradient_csv, load_sources, quiver_svg, rms_csv, GradientOptions, Source};
use roomkmd::phaseavg::phase_average;
use roomkmd::pipeline::{
    flux_csv, gradient_of_mode, load_mode_file, load_pipeline_config, parse_mode_source, parse_period_rule,
    run_pipeline, PeriodRule, PipelineConfig,
};
use roomkmd::spectral::{companion_kmd, format_table_csv, rank_modes, table_json};
use roomkmd::synth::{
    analytic_default, format_sources, format_switch_log, generate_analytic, parse_analytic_config,
    parse_room_config, room_default, simulate_room,
};
use roomkmd::timeseries::{format_layout, format_snapshots, load_layout, load_snapshots, remove_mean};

#[derive(Parser)]
#[command(name = "roomkmd", version, about = "Koopman mode analysis of multichannel room sensor records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an analytic multi-tone field and write its exact mode table.
    SynthAnalytic(SynthArgs),
    /// Run the thermostat room simulator.
    SynthRoom(SynthArgs),
    /// Decompose a record into eigenvalue/mode couples.
    Spectrum(SpectrumArgs),
    /// Phase-average a record at a fixed or detected period.
    PhaseAverage(PhaseAverageArgs),
    /// Gradient field of a stored phase-averaged or DMD mode.
    Gradient(GradientArgs),
    /// Full analysis from a record and a sensor layout.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML spec; the built-in default is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    snapshots: PathBuf,
    /// Sampling period in seconds, overriding the timestamps.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    record: RecordArgs,
    /// Checked against the record's channels when given.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    top: usize,
    /// Subtract each channel's mean before decomposing.
    #[arg(long)]
    remove_mean: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PhaseAverageArgs {
    #[command(flatten)]
    record: RecordArgs,
    /// Period in samples, or `auto` for the top-ranked couple.
    #[arg(long, default_value = "auto")]
    period: String,
    /// Average the record as given instead of mean-removing it first.
    #[arg(long)]
    keep_mean: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradientOpts {
    /// Neighbours used by the scattered fit.
    #[arg(long)]
    neighbors: Option<usize>,
    /// Condition number above which a sensor's fit is rejected.
    #[arg(long)]
    max_condition: Option<f64>,
    /// Ignore a grid declared in the layout file.
    #[arg(long)]
    force_scattered: bool,
    /// Heat sources (`id,x,y,kind`) to score the field against.
    #[arg(long)]
    sources: Option<PathBuf>,
    #[arg(long)]
    no_svg: bool,
}

impl GradientOpts {
    fn apply(&self, o: &mut GradientOptions) {
        if let Some(k) = self.neighbors {
            o.neighbors = k;
        }
        if let Some(c) = self.max_condition {
            o.max_condition = c;
        }
        o.force_scattered |= self.force_scattered;
    }
}

#[derive(Args)]
struct GradientArgs {
    /// `phase_average.csv` or `dmd_mode.csv` from an earlier run.
    #[arg(long)]
    mode: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    #[command(flatten)]
    opts: GradientOpts,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    top: Option<usize>,
    /// Period in samples, or `auto`.
    #[arg(long)]
    period: Option<String>,
    /// `phase_average` or `dmd_mode`.
    #[arg(long)]
    gradient_source: Option<String>,
    #[command(flatten)]
    opts: GradientOpts,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

/// Names the file in errors that do not already carry a path.
fn at<T>(r: roomkmd::Result<T>, what: &str, path: &Path) -> anyhow::Result<T> {
    match r {
        Err(e) if !matches!(e, roomkmd::Error::Io { .. }) => {
            Err(anyhow::Error::new(e).context(format!("{what} {}", path.display())))
        }
        other => Ok(other?),
    }
}

fn layout_at(path: &Path) -> anyhow::Result<roomkmd::timeseries::SensorLayout> {
    at(load_layout(path), "layout", path)
}

fn sources_at(path: Option<&Path>) -> anyhow::Result<Vec<Source>> {
    match path {
        Some(p) => at(load_sources(p), "sources", p),
        None => Ok(Vec::new()),
    }
}

fn synth_analytic(a: &SynthArgs) -> anyhow::Result<()> {
    let spec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            at(parse_analytic_config(&text, p.parent()), "config", p)?
        }
        None => analytic_default(),
    };
    let (record, truth) = generate_analytic(&spec)?;
    out_dir(&a.out_dir)?;
    write(&a.out_dir, "snapshots.csv", &format_snapshots(&record))?;
    write(&a.out_dir, "layout.csv", &format_layout(&spec.layout))?;
    write(&a.out_dir, "truth_modes.json", &pretty(&table_json(&truth, "analytic")))?;
    Ok(())
}

fn synth_room(a: &SynthArgs) -> anyhow::Result<()> {
    let spec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            at(parse_room_config(&text, p.parent()), "config", p)?
        }
        None => room_default(),
    };
    let run = simulate_room(&spec)?;
    out_dir(&a.out_dir)?;
    write(&a.out_dir, "snapshots.csv", &format_snapshots(&run.record))?;
    write(&a.out_dir, "layout.csv", &format_layout(&spec.sensors))?;
    write(&a.out_dir, "switch_log.csv", &format_switch_log(&run.switch_log))?;
    write(&a.out_dir, "sources.csv", &format_sources(&spec))?;
    Ok(())
}

fn spectrum(a: &SpectrumArgs) -> anyhow::Result<()> {
    let path = &a.record.snapshots;
    let mut record = at(load_snapshots(path, a.record.dt), "snapshots", path)?;
    if let Some(l) = &a.layout {
        at(layout_at(l)?.aligned_to(record.channel_ids()), "layout", l)?;
    }
    let energy_data = if a.remove_mean {
        record = remove_mean(&record);
        "mean-removed"
    } else {
        "raw"
    };
    let table = companion_kmd(&record)?;
    let ranked = rank_modes(&table, a.top)?;
    for w in &ranked.warnings {
        log::warn!("{w}");
    }
    out_dir(&a.out_dir)?;
    write(&a.out_dir, "mode_table.json", &pretty(&table_json(&table, energy_data)))?;
    write(&a.out_dir, "mode_table.csv", &format_table_csv(&table))?;
    write(&a.out_dir, "ranked_modes.csv", &format_table_csv(&ranked))?;
    Ok(())
}

fn phase_average_cmd(a: &PhaseAverageArgs) -> anyhow::Result<()> {
    let path = &a.record.snapshots;
    let mut record = at(load_snapshots(path, a.record.dt), "snapshots", path)?;
    if !a.keep_mean {
        record = remove_mean(&record);
    }
    let p = match parse_period_rule(&a.period)? {
        PeriodRule::Samples(p) => p,
        PeriodRule::Auto => {
            let ranked = rank_modes(&companion_kmd(&record)?, 1)?;
            let t = ranked
                .entries
                .iter()
                .find_map(|e| e.period)
                .ok_or_else(|| roomkmd::Error::Period("no oscillatory couple to take a period from".into()))?;
            (t / record.dt()).round_ties_even() as usize
        }
    };
    let r = phase_average(&record, p)?;
    for w in &r.warnings {
        log::warn!("{w}");
    }
    out_dir(&a.out_dir)?;
    r.write(a.out_dir.join("phase_average.csv"), a.out_dir.join("phase_average.json"))?;
    Ok(())
}

fn gradient_cmd(a: &GradientArgs) -> anyhow::Result<()> {
    let mode = at(load_mode_file(&a.mode), "mode", &a.mode)?;
    let layout = layout_at(&a.layout)?;
    let sources = sources_at(a.opts.sources.as_deref())?;
    let mut opts = GradientOptions::default();
    a.opts.apply(&mut opts);
    let (layout, field, rms, flux) = gradient_of_mode(&mode, &layout, &sources, &opts)?;
    out_dir(&a.out_dir)?;
    write(&a.out_dir, "gradient.csv", &gradient_csv(&field, &layout))?;
    write(&a.out_dir, "rms_gradient.csv", &rms_csv(&rms, &layout))?;
    if !flux.is_empty() {
        write(&a.out_dir, "flux_consistency.csv", &flux_csv(&flux))?;
    }
    if !a.opts.no_svg && layout.dim() == 2 {
        let title = format!("{} gradient", mode.source().as_str());
        write(&a.out_dir, "gradient.svg", &quiver_svg(&field, &layout, &sources, &title)?)?;
    }
    Ok(())
}

fn pipeline(a: &PipelineArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => at(load_pipeline_config(p), "config", p)?,
        None => {
            let (Some(s), Some(l)) = (&a.snapshots, &a.layout) else {
                anyhow::bail!(roomkmd::Error::Argument(
                    "--snapshots and --layout are required without --config".into()
                ));
            };
            PipelineConfig::new(s, l, a.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")))
        }
    };
    if let Some(s) = &a.snapshots {
        cfg.snapshots = s.clone();
    }
    if let Some(l) = &a.layout {
        cfg.layout = l.clone();
    }
    if let Some(o) = &a.out_dir {
        cfg.out_dir = o.clone();
    }
    if a.opts.sources.is_some() {
        cfg.sources = a.opts.sources.clone();
    }
    if a.dt.is_some() {
        cfg.dt_override = a.dt;
    }
    if let Some(t) = a.top {
        cfg.analysis.top = t;
    }
    if let Some(p) = &a.period {
        cfg.analysis.period = parse_period_rule(p)?;
    }
    if let Some(g) = &a.gradient_source {
        cfg.analysis.gradient_source = parse_mode_source(g)?;
    }
    a.opts.apply(&mut cfg.analysis.gradient);
    if a.opts.no_svg {
        cfg.svg = false;
    }
    let analysis = run_pipeline(&cfg)?;
    for w in analysis.warnings() {
        log::warn!("{w}");
    }
    if let Some(top) = analysis.top_couple() {
        log::info!(
            "top couple {:?}: T = {:.2} min, P = {} samples",
            top.couple,
            top.period.unwrap_or(f64::NAN) / 60.0,
            analysis.period_samples
        );
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<roomkmd::Error>())
        .map_or(2, |r| r.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthAnalytic(a) => synth_analytic(a),
        Command::SynthRoom(a) => synth_room(a),
        Command::Spectrum(a) => spectrum(a),
        Command::PhaseAverage(a) => phase_average_cmd(a),
        Command::Gradient(a) => gradient_cmd(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
