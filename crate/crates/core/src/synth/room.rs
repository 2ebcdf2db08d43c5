use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::Deserialize;

use super::{resolve, room_sensor_layout};
use crate::error::{Error, Result};
use crate::gradient::{Source, SourceKind};
use crate::timeseries::{load_layout, SensorLayout, SnapshotMatrix};

/// Largest admissible `kappa * sim_dt * (1/dx^2 + 1/dy^2)`.
pub const CFL_LIMIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcMode {
    Cool,
    Heat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcSpec {
    pub id: String,
    pub position: [f64; 2],
    pub mode: AcMode,
    /// Heating or cooling rate of the AC cell while running, degC/s.
    pub power: f64,
    pub thermostat_on: f64,
    pub thermostat_off: f64,
    /// A disabled unit stays off but is still reported as a source.
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomSimSpec {
    pub width: f64,
    pub depth: f64,
    pub nx: usize,
    pub ny: usize,
    pub kappa: f64,
    pub leak: f64,
    pub ambient: f64,
    pub initial: f64,
    /// Half-width of the uniform perturbation added to the initial field.
    pub init_noise: f64,
    pub acs: Vec<AcSpec>,
    pub sim_dt: f64,
    pub sample_dt: f64,
    /// Length of the recorded window, seconds.
    pub duration: f64,
    /// Unrecorded settling time, seconds.
    pub spinup: f64,
    /// Start recording at this AC's first switch-off after spin-up.
    pub trigger: Option<String>,
    pub sensors: SensorLayout,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    /// Seconds since the start of the simulation.
    pub time: f64,
    pub ac_id: String,
    pub on: bool,
    /// Temperature at the AC cell that triggered the switch.
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomRun {
    pub record: SnapshotMatrix,
    pub switch_log: Vec<SwitchEvent>,
}

impl RoomSimSpec {
    pub fn dx(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.depth / self.ny as f64
    }

    pub fn cfl(&self) -> f64 {
        self.kappa * self.sim_dt * (1.0 / self.dx().powi(2) + 1.0 / self.dy().powi(2))
    }

    pub fn steps_per_sample(&self) -> usize {
        (self.sample_dt / self.sim_dt).round() as usize
    }

    pub fn samples(&self) -> usize {
        (self.duration / self.sample_dt).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.width) && positive(self.depth)) || self.nx < 2 || self.ny < 2 {
            return Err(Error::Argument("domain needs positive size and at least 2x2 cells".into()));
        }
        if !(positive(self.sim_dt) && positive(self.sample_dt) && positive(self.duration)) {
            return Err(Error::Argument("sim_dt, sample_dt and duration must be positive".into()));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0 && self.leak.is_finite() && self.leak >= 0.0) {
            return Err(Error::Argument("kappa and leak must be non-negative".into()));
        }
        if !(self.spinup.is_finite() && self.spinup >= 0.0 && self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(Error::Argument("spinup and init_noise must be non-negative".into()));
        }
        if ![self.ambient, self.initial].iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("temperatures must be finite".into()));
        }
        let ratio = self.sample_dt / self.sim_dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(Error::Argument("sample_dt must be a whole multiple of sim_dt".into()));
        }
        let samples = self.duration / self.sample_dt;
        if (samples - samples.round()).abs() > 1e-9 * samples || self.samples() < 3 {
            return Err(Error::Argument("duration must span at least two whole sample intervals".into()));
        }
        let cfl = self.cfl();
        if cfl > CFL_LIMIT {
            return Err(Error::Stability(format!(
                "kappa*sim_dt*(1/dx^2+1/dy^2) = {cfl} exceeds {CFL_LIMIT}; reduce sim_dt"
            )));
        }
        if self.leak * self.sim_dt > 0.5 {
            return Err(Error::Stability(format!("leak*sim_dt = {} exceeds 0.5", self.leak * self.sim_dt)));
        }
        let inside = |x: f64, y: f64| (0.0..=self.width).contains(&x) && (0.0..=self.depth).contains(&y);
        if self.sensors.dim() != 2 {
            return Err(Error::Geometry("room sensors need 2-D coordinates".into()));
        }
        for (id, c) in self.sensors.ids().iter().zip(self.sensors.coords()) {
            if !inside(c[0], c[1]) {
                return Err(Error::Geometry(format!("sensor `{id}` lies outside the room")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for ac in &self.acs {
            if !seen.insert(ac.id.as_str()) {
                return Err(Error::Duplicate(ac.id.clone()));
            }
            if !inside(ac.position[0], ac.position[1]) {
                return Err(Error::Geometry(format!("AC `{}` lies outside the room", ac.id)));
            }
            if !(ac.power.is_finite() && ac.power >= 0.0) {
                return Err(Error::Argument(format!("AC `{}` needs non-negative power", ac.id)));
            }
            let band_ok = match ac.mode {
                AcMode::Cool => ac.thermostat_on > ac.thermostat_off,
                AcMode::Heat => ac.thermostat_on < ac.thermostat_off,
            };
            if !band_ok {
                return Err(Error::Argument(format!(
                    "AC `{}`: hysteresis band ({}, {}) is empty or inverted",
                    ac.id, ac.thermostat_on, ac.thermostat_off
                )));
            }
        }
        if let Some(t) = &self.trigger {
            if !self.acs.iter().any(|a| &a.id == t && a.enabled) {
                return Err(Error::Argument(format!("trigger `{t}` is not an enabled AC")));
            }
        }
        Ok(())
    }

    fn cell_of(&self, x: f64, y: f64) -> usize {
        let i = ((x / self.dx()).floor() as usize).min(self.nx - 1);
        let j = ((y / self.dy()).floor() as usize).min(self.ny - 1);
        j * self.nx + i
    }

    /// Bilinear weights over cell centres.
    fn stencil(&self, x: f64, y: f64) -> [(usize, f64); 4] {
        let axis = |v: f64, h: f64, n: usize| {
            let f = v / h - 0.5;
            let i0 = (f.floor().max(0.0) as usize).min(n - 2);
            let t = (f - i0 as f64).clamp(0.0, 1.0);
            (i0, t)
        };
        let (i, tx) = axis(x, self.dx(), self.nx);
        let (j, ty) = axis(y, self.dy(), self.ny);
        let c = j * self.nx + i;
        [
            (c, (1.0 - tx) * (1.0 - ty)),
            (c + 1, tx * (1.0 - ty)),
            (c + self.nx, (1.0 - tx) * ty),
            (c + self.nx + 1, tx * ty),
        ]
    }

    /// The ACs as heat sources for flux scoring.
    pub fn sources(&self) -> Vec<Source> {
        self.acs
            .iter()
            .map(|a| Source {
                id: a.id.clone(),
                position: a.position.to_vec(),
                kind: match a.mode {
                    AcMode::Cool => SourceKind::Cooling,
                    AcMode::Heat => SourceKind::Heating,
                },
            })
            .collect()
    }
}

/// Explicit finite-difference room model, advanced one `sim_dt` at a time.
pub struct RoomState<'a> {
    spec: &'a RoomSimSpec,
    pub theta: Vec<f64>,
    next: Vec<f64>,
    ac_cells: Vec<usize>,
    running: Vec<bool>,
    step: u64,
}

impl<'a> RoomState<'a> {
    pub fn new(spec: &'a RoomSimSpec) -> Result<Self> {
        spec.validate()?;
        let cells = spec.nx * spec.ny;
        let mut theta = vec![spec.initial; cells];
        if spec.init_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let u = Uniform::new_inclusive(-spec.init_noise, spec.init_noise).expect("valid range");
            theta.iter_mut().for_each(|t| *t += u.sample(&mut rng));
        }
        Ok(Self {
            spec,
            theta,
            next: vec![0.0; cells],
            ac_cells: spec.acs.iter().map(|a| spec.cell_of(a.position[0], a.position[1])).collect(),
            running: vec![false; spec.acs.len()],
            step: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.spec.sim_dt
    }

    pub fn running(&self) -> &[bool] {
        &self.running
    }

    /// Thermostat update followed by one explicit step. Returns the switch
    /// events, stamped with the time before the step.
    pub fn advance(&mut self) -> Vec<SwitchEvent> {
        let spec = self.spec;
        let mut events = Vec::new();
        for (j, ac) in spec.acs.iter().enumerate() {
            if !ac.enabled {
                continue;
            }
            let t = self.theta[self.ac_cells[j]];
            let (turn_on, turn_off) = match ac.mode {
                AcMode::Cool => (t >= ac.thermostat_on, t <= ac.thermostat_off),
                AcMode::Heat => (t <= ac.thermostat_on, t >= ac.thermostat_off),
            };
            let was = self.running[j];
            if !was && turn_on {
                self.running[j] = true;
            } else if was && turn_off {
                self.running[j] = false;
            }
            if self.running[j] != was {
                events.push(SwitchEvent {
                    time: self.time(),
                    ac_id: ac.id.clone(),
                    on: self.running[j],
                    temperature: t,
                });
            }
        }

        let (nx, ny) = (spec.nx, spec.ny);
        let rx = spec.kappa * spec.sim_dt / spec.dx().powi(2);
        let ry = spec.kappa * spec.sim_dt / spec.dy().powi(2);
        let leak = spec.leak * spec.sim_dt;
        let th = &self.theta;
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                let t = th[c];
                // insulated walls: the ghost cell mirrors its neighbour
                let w = if i > 0 { th[c - 1] } else { t };
                let e = if i + 1 < nx { th[c + 1] } else { t };
                let s = if j > 0 { th[c - nx] } else { t };
                let n = if j + 1 < ny { th[c + nx] } else { t };
                self.next[c] = t + rx * ((w + e) - 2.0 * t) + ry * ((s + n) - 2.0 * t) - leak * (t - spec.ambient);
            }
        }
        for (j, ac) in spec.acs.iter().enumerate() {
            if self.running[j] {
                let u = match ac.mode {
                    AcMode::Cool => -ac.power,
                    AcMode::Heat => ac.power,
                };
                self.next[self.ac_cells[j]] += u * spec.sim_dt;
            }
        }
        std::mem::swap(&mut self.theta, &mut self.next);
        self.step += 1;
        events
    }

    pub fn sample(&self, stencils: &[[(usize, f64); 4]]) -> Vec<f64> {
        stencils
            .iter()
            .map(|st| st.iter().map(|&(c, w)| w * self.theta[c]).sum())
            .collect()
    }
}

/// Runs spin-up, optionally waits for the trigger, then records
/// `duration / sample_dt + 1` snapshots.
pub fn simulate_room(spec: &RoomSimSpec) -> Result<RoomRun> {
    let mut state = RoomState::new(spec)?;
    let stencils: Vec<_> = spec.sensors.coords().iter().map(|c| spec.stencil(c[0], c[1])).collect();
    let mut log = Vec::new();

    let spinup_steps = (spec.spinup / spec.sim_dt).ceil() as u64;
    while state.step < spinup_steps {
        log.extend(state.advance());
    }
    if let Some(trigger) = &spec.trigger {
        // Wait for the trigger unit to switch off: the recorded window then
        // opens at the cold end of its cycle.
        let limit = state.step + (100.0 * spec.duration / spec.sim_dt).ceil() as u64;
        loop {
            if state.step > limit {
                return Err(Error::DegenerateData(format!("AC `{trigger}` never switched off")));
            }
            let events = state.advance();
            let fired = events.iter().any(|e| &e.ac_id == trigger && !e.on);
            log.extend(events);
            if fired {
                break;
            }
        }
    }
    let t0 = state.time();
    let n = spec.samples();
    let per = spec.steps_per_sample();
    let mut channels = vec![Vec::with_capacity(n); spec.sensors.len()];
    for k in 0..n {
        if k > 0 {
            for _ in 0..per {
                log.extend(state.advance());
            }
        }
        for (ch, v) in channels.iter_mut().zip(state.sample(&stencils)) {
            ch.push(v);
        }
    }
    let record = SnapshotMatrix::from_channels(&channels, spec.sample_dt, t0, spec.sensors.ids().to_vec())?;
    Ok(RoomRun { record, switch_log: log })
}

/// On-edge to on-edge intervals of one AC, seconds.
pub fn cycle_periods(log: &[SwitchEvent], ac_id: &str) -> Vec<f64> {
    let ons: Vec<f64> = log.iter().filter(|e| e.ac_id == ac_id && e.on).map(|e| e.time).collect();
    ons.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `time,ac_id,state`
pub fn format_switch_log(log: &[SwitchEvent]) -> String {
    let mut s = String::from("time,ac_id,state\n");
    for e in log {
        writeln!(s, "{},{},{}", e.time, e.ac_id, if e.on { "on" } else { "off" }).unwrap();
    }
    s
}

pub fn write_switch_log(path: impl AsRef<Path>, log: &[SwitchEvent]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_switch_log(log)).map_err(|e| Error::io(path, e))
}

/// `id,x,y,kind` for every AC, enabled or not.
pub fn format_sources(spec: &RoomSimSpec) -> String {
    let mut s = String::from("id,x,y,kind\n");
    for a in &spec.acs {
        let kind = match a.mode {
            AcMode::Cool => "cooling",
            AcMode::Heat => "heating",
        };
        writeln!(s, "{},{},{},{kind}", a.id, a.position[0], a.position[1]).unwrap();
    }
    s
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcConfig {
    id: String,
    x: f64,
    y: f64,
    mode: AcMode,
    power: f64,
    on: f64,
    off: f64,
    #[serde(default = "enabled_default")]
    enabled: bool,
}

fn enabled_default() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomConfig {
    width: f64,
    depth: f64,
    nx: usize,
    ny: usize,
    kappa: f64,
    leak: f64,
    ambient: f64,
    initial: f64,
    #[serde(default)]
    init_noise: f64,
    sim_dt: f64,
    sample_dt: f64,
    duration: f64,
    #[serde(default)]
    spinup: f64,
    trigger: Option<String>,
    sensors: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    ac: Vec<AcConfig>,
}

/// Parses a room config. A relative `sensors` path is resolved against
/// `base_dir`; without one the built-in 28-sensor layout is used.
pub fn parse_room_config(text: &str, base_dir: Option<&Path>) -> Result<RoomSimSpec> {
    let cfg: RoomConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let sensors = match &cfg.sensors {
        Some(p) => load_layout(resolve(base_dir, p))?,
        None => room_sensor_layout(),
    };
    let spec = RoomSimSpec {
        width: cfg.width,
        depth: cfg.depth,
        nx: cfg.nx,
        ny: cfg.ny,
        kappa: cfg.kappa,
        leak: cfg.leak,
        ambient: cfg.ambient,
        initial: cfg.initial,
        init_noise: cfg.init_noise,
        acs: cfg
            .ac
            .into_iter()
            .map(|a| AcSpec {
                id: a.id,
                position: [a.x, a.y],
                mode: a.mode,
                power: a.power,
                thermostat_on: a.on,
                thermostat_off: a.off,
                enabled: a.enabled,
            })
            .collect(),
        sim_dt: cfg.sim_dt,
        sample_dt: cfg.sample_dt,
        duration: cfg.duration,
        spinup: cfg.spinup,
        trigger: cfg.trigger,
        sensors,
        seed: cfg.seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub const ROOM_DEFAULT_TOML: &str = include_str!("../../configs/room_default.toml");

/// 14 m x 7 m room, four ceiling ACs with one cooler running, 28 sensors,
/// four hours at one sample per minute.
pub fn room_default() -> RoomSimSpec {
    parse_room_config(ROOM_DEFAULT_TOML, None).expect("built-in config is valid")
}
