//! Multichannel snapshot records and sensor layouts.
//!
//! Snapshot files are CSV with a `time,<id1>,...,<idM>` header and one row
//! per snapshot. Layout files are CSV with an `id,x[,y[,z]]` header and an
//! optional leading `# grid rows=R cols=C [dx=.. dy=..]` comment that
//! declares the sensors to sit on a rectangular lattice.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance for the sampling-uniformity check, relative to `dt`.
pub const UNIFORMITY_TOL: f64 = 1e-6;
/// Allowed distance between a sensor and its declared lattice point, meters.
pub const LATTICE_TOL: f64 = 1e-9;

/// Uniformly sampled multichannel record, `M` channels by `N` snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    values: DMatrix<f64>,
    dt: f64,
    t0: f64,
    channel_ids: Vec<String>,
}

impl SnapshotMatrix {
    pub fn new(values: DMatrix<f64>, dt: f64, t0: f64, channel_ids: Vec<String>) -> Result<Self> {
        if values.ncols() < 3 {
            return Err(Error::TooShort {
                rows: values.ncols(),
            });
        }
        if values.nrows() != channel_ids.len() {
            return Err(Error::Argument(format!(
                "{} channel ids for {} channels",
                channel_ids.len(),
                values.nrows()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Argument("no channels".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Argument(format!("sampling period must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::Argument("start time must be finite".into()));
        }
        if let Some(((i, k), v)) = values
            .iter()
            .enumerate()
            .map(|(n, v)| ((n % values.nrows(), n / values.nrows()), v))
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::Argument(format!(
                "non-finite value {v} in channel `{}` at snapshot {k}",
                channel_ids[i]
            )));
        }
        check_unique(&channel_ids)?;
        Ok(SnapshotMatrix {
            values,
            dt,
            t0,
            channel_ids,
        })
    }

    /// Builds a record from per-channel series (outer index = channel).
    pub fn from_channels(channels: &[Vec<f64>], dt: f64, t0: f64, channel_ids: Vec<String>) -> Result<Self> {
        let m = channels.len();
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Argument("channels have different lengths".into()));
        }
        let values = DMatrix::from_fn(m, n, |i, k| channels[i][k]);
        Self::new(values, dt, t0, channel_ids)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    /// Number of channels `M`.
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    /// Number of snapshots `N`.
    pub fn snapshots(&self) -> usize {
        self.values.ncols()
    }

    /// Snapshot `y_k` as a column vector.
    pub fn snapshot(&self, k: usize) -> nalgebra::DVectorView<'_, f64> {
        self.values.column(k)
    }

    /// Reorders channels; `order[i]` is the source index of output channel `i`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<Self> {
        let m = self.channels();
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Argument("channel order is not a permutation".into()));
        }
        let values = DMatrix::from_fn(m, self.snapshots(), |i, k| self.values[(order[i], k)]);
        let ids = order.iter().map(|&i| self.channel_ids[i].clone()).collect();
        Self::new(values, self.dt, self.t0, ids)
    }

    /// Same record with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.values * factor, self.dt, self.t0, self.channel_ids.clone())
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Duplicate(id.clone()));
        }
    }
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_position(err: &csv::Error) -> usize {
    err.position().map_or(0, |p| p.line() as usize)
}

fn parse_f64(cell: &str, line: usize, what: &str) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(Error::parse(line, format!("missing {what}")));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::parse(line, format!("non-numeric {what} `{cell}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite {what} `{cell}`")));
    }
    Ok(v)
}

/// Reads a snapshot CSV file.
///
/// `dt` is inferred from the first two timestamps unless `dt_override` is
/// given; timestamps must be uniform to within `1e-6 * dt` either way.
pub fn load_snapshots(path: impl AsRef<Path>, dt_override: Option<f64>) -> Result<SnapshotMatrix> {
    let text = read_to_string(path.as_ref())?;
    parse_snapshots(&text, dt_override)
}

pub fn parse_snapshots(text: &str, dt_override: Option<f64>) -> Result<SnapshotMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(csv_position(&e).max(1), e.to_string()))?
        .clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("time") {
        return Err(Error::parse(1, "header must be `time,<id1>,...,<idM>`"));
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if ids.iter().any(String::is_empty) {
        return Err(Error::parse(1, "empty channel id in header"));
    }
    check_unique(&ids)?;

    let mut times = Vec::new();
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(csv_position(&e), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        times.push(parse_f64(&rec[0], line, "timestamp")?);
        for (i, ch) in channels.iter_mut().enumerate() {
            ch.push(parse_f64(&rec[i + 1], line, &format!("value for `{}`", ids[i]))?);
        }
    }
    if times.len() < 3 {
        return Err(Error::TooShort { rows: times.len() });
    }

    let t0 = times[0];
    let spacing = times[1] - times[0];
    if !(spacing > 0.0) {
        return Err(Error::Uniformity {
            row: 2,
            expected: t0,
            found: times[1],
        });
    }
    for (k, &t) in times.iter().enumerate().skip(2) {
        let expected = t0 + k as f64 * spacing;
        if (t - expected).abs() > UNIFORMITY_TOL * spacing {
            return Err(Error::Uniformity {
                row: k + 1,
                expected,
                found: t,
            });
        }
    }
    let dt = match dt_override {
        Some(dt) if !(dt.is_finite() && dt > 0.0) => {
            return Err(Error::Argument(format!("dt override must be positive, got {dt}")))
        }
        Some(dt) => dt,
        None => spacing,
    };
    SnapshotMatrix::from_channels(&channels, dt, t0, ids)
}

/// Serializes a record in the snapshot CSV format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn format_snapshots(s: &SnapshotMatrix) -> String {
    let mut out = String::from("time");
    for id in s.channel_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for k in 0..s.snapshots() {
        write!(out, "{}", s.t0 + k as f64 * s.dt).unwrap();
        for i in 0..s.channels() {
            write!(out, ",{}", s.values[(i, k)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_snapshots(path: impl AsRef<Path>, s: &SnapshotMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_snapshots(s)).map_err(|e| Error::io(path, e))
}

/// Subtracts each channel's time mean over the whole record.
pub fn remove_mean(s: &SnapshotMatrix) -> SnapshotMatrix {
    let mut values = s.values.clone();
    // Two passes: the second removes the rounding residue of the first.
    for _ in 0..2 {
        for mut row in values.row_iter_mut() {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
    }
    SnapshotMatrix {
        values,
        dt: s.dt,
        t0: s.t0,
        channel_ids: s.channel_ids.clone(),
    }
}

/// Per-channel time means.
pub fn channel_means(s: &SnapshotMatrix) -> Vec<f64> {
    s.values
        .row_iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect()
}

/// Declared rectangular lattice: `x = x0 + col * dx`, `y = y0 + row * dy`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

/// Sensor positions in room coordinates (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLayout {
    ids: Vec<String>,
    coords: Vec<Vec<f64>>,
    dim: usize,
    grid: Option<GridSpec>,
    /// `(row, col)` of every sensor when a grid is declared.
    lattice: Vec<(usize, usize)>,
}

/// Grid declaration as written in the layout header, before validation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GridDecl {
    pub rows: usize,
    pub cols: usize,
    pub dx: Option<f64>,
    pub dy: Option<f64>,
}

impl SensorLayout {
    pub fn new(ids: Vec<String>, coords: Vec<Vec<f64>>, grid: Option<GridDecl>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Geometry("layout has no sensors".into()));
        }
        if ids.len() != coords.len() {
            return Err(Error::Argument("ids and coordinates differ in length".into()));
        }
        check_unique(&ids)?;
        let dim = coords[0].len();
        if !(1..=3).contains(&dim) {
            return Err(Error::Geometry(format!("spatial dimension {dim} not in 1..=3")));
        }
        for (id, c) in ids.iter().zip(&coords) {
            if c.len() != dim {
                return Err(Error::Geometry(format!("sensor `{id}` has {} coordinates, expected {dim}", c.len())));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Geometry(format!("sensor `{id}` has non-finite coordinates")));
            }
        }
        for i in 0..coords.len() {
            for j in 0..i {
                if coords[i] == coords[j] {
                    return Err(Error::Geometry(format!(
                        "sensors `{}` and `{}` share coordinates",
                        ids[j], ids[i]
                    )));
                }
            }
        }
        let mut layout = SensorLayout {
            ids,
            coords,
            dim,
            grid: None,
            lattice: Vec::new(),
        };
        if let Some(decl) = grid {
            layout.attach_grid(decl)?;
        }
        Ok(layout)
    }

    fn attach_grid(&mut self, decl: GridDecl) -> Result<()> {
        if self.dim == 3 {
            return Err(Error::Geometry("grid declarations are supported for 1-D and 2-D layouts only".into()));
        }
        if self.dim == 1 && decl.rows != 1 {
            return Err(Error::Geometry("a 1-D grid must have rows=1".into()));
        }
        if decl.rows == 0 || decl.cols == 0 || decl.rows * decl.cols != self.ids.len() {
            return Err(Error::Geometry(format!(
                "grid {}x{} does not match {} sensors",
                decl.rows,
                decl.cols,
                self.ids.len()
            )));
        }
        if decl.cols < 2 || (self.dim == 2 && decl.rows < 2) {
            return Err(Error::Geometry("every grid axis needs at least two points".into()));
        }
        let axis_min = |a: usize| self.coords.iter().map(|c| c[a]).fold(f64::INFINITY, f64::min);
        let axis_max = |a: usize| self.coords.iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = axis_min(0);
        let dx = decl.dx.unwrap_or((axis_max(0) - x0) / (decl.cols - 1) as f64);
        let (y0, dy) = if self.dim == 2 {
            let y0 = axis_min(1);
            (y0, decl.dy.unwrap_or((axis_max(1) - y0) / (decl.rows - 1) as f64))
        } else {
            (0.0, decl.dy.unwrap_or(1.0))
        };
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::Geometry("grid spacing must be positive".into()));
        }
        let mut occupied = vec![false; decl.rows * decl.cols];
        let mut lattice = Vec::with_capacity(self.ids.len());
        for (id, c) in self.ids.iter().zip(&self.coords) {
            let snap = |v: f64, o: f64, h: f64, n: usize| -> Option<usize> {
                let idx = ((v - o) / h).round();
                if idx < 0.0 || idx >= n as f64 || (o + idx * h - v).abs() > LATTICE_TOL {
                    None
                } else {
                    Some(idx as usize)
                }
            };
            let col = snap(c[0], x0, dx, decl.cols);
            let row = if self.dim == 2 { snap(c[1], y0, dy, decl.rows) } else { Some(0) };
            let (Some(row), Some(col)) = (row, col) else {
                return Err(Error::Geometry(format!("sensor `{id}` is off the declared grid")));
            };
            if std::mem::replace(&mut occupied[row * decl.cols + col], true) {
                return Err(Error::Geometry(format!("two sensors on lattice point ({row}, {col})")));
            }
            lattice.push((row, col));
        }
        self.grid = Some(GridSpec {
            rows: decl.rows,
            cols: decl.cols,
            dx,
            dy,
            x0,
            y0,
        });
        self.lattice = lattice;
        Ok(())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    /// `(row, col)` lattice index of sensor `i`; only meaningful with a grid.
    pub fn lattice_index(&self, i: usize) -> Option<(usize, usize)> {
        self.grid.as_ref().map(|_| self.lattice[i])
    }

    /// Same sensors with the grid declaration removed.
    pub fn without_grid(&self) -> Self {
        SensorLayout {
            grid: None,
            lattice: Vec::new(),
            ..self.clone()
        }
    }

    pub fn position_of(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|x| x == id).map(|i| self.coords[i].as_slice())
    }

    /// Restricts and reorders the layout to the channel order of `ids`.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Self> {
        if ids == self.ids.as_slice() {
            return Ok(self.clone());
        }
        let mut coords = Vec::with_capacity(ids.len());
        for id in ids {
            let pos = self
                .position_of(id)
                .ok_or_else(|| Error::Geometry(format!("channel `{id}` missing from layout")))?;
            coords.push(pos.to_vec());
        }
        if self.grid.is_some() && ids.len() != self.ids.len() {
            return Err(Error::Geometry(
                "layout declares a grid but lists sensors absent from the record".into(),
            ));
        }
        let decl = self.grid.as_ref().map(|g| GridDecl {
            rows: g.rows,
            cols: g.cols,
            dx: Some(g.dx),
            dy: Some(g.dy),
        });
        SensorLayout::new(ids.to_vec(), coords, decl)
    }

    /// Median over sensors of the distance to the nearest other sensor.
    pub fn median_spacing(&self) -> f64 {
        if self.len() < 2 {
            return 1.0;
        }
        let mut nearest: Vec<f64> = (0..self.len())
            .map(|i| {
                (0..self.len())
                    .filter(|&j| j != i)
                    .map(|j| distance(&self.coords[i], &self.coords[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        nearest.sort_by(f64::total_cmp);
        let n = nearest.len();
        if n % 2 == 1 {
            nearest[n / 2]
        } else {
            0.5 * (nearest[n / 2 - 1] + nearest[n / 2])
        }
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn parse_grid_comment(line: &str) -> Result<Option<GridDecl>> {
    let body = line.trim_start_matches('#').trim();
    let mut words = body.split_whitespace();
    if words.next() != Some("grid") {
        return Ok(None);
    }
    let mut decl = GridDecl::default();
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("malformed grid field `{w}`")))?;
        match k {
            "rows" | "cols" => {
                let n: usize = v.parse().map_err(|_| Error::parse(1, format!("bad {k} `{v}`")))?;
                if k == "rows" {
                    decl.rows = n;
                } else {
                    decl.cols = n;
                }
            }
            "dx" => decl.dx = Some(parse_f64(v, 1, "dx")?),
            "dy" => decl.dy = Some(parse_f64(v, 1, "dy")?),
            _ => return Err(Error::parse(1, format!("unknown grid field `{k}`"))),
        }
    }
    if decl.rows == 0 || decl.cols == 0 {
        return Err(Error::parse(1, "grid comment needs rows= and cols="));
    }
    Ok(Some(decl))
}

/// Reads a layout CSV file (`id,x[,y[,z]]`, meters).
pub fn load_layout(path: impl AsRef<Path>) -> Result<SensorLayout> {
    let text = read_to_string(path.as_ref())?;
    parse_layout(&text)
}

pub fn parse_layout(text: &str) -> Result<SensorLayout> {
    let mut grid = None;
    let mut skipped = 0;
    let mut body = text;
    while let Some(first) = body.lines().next() {
        if !first.trim_start().starts_with('#') {
            break;
        }
        if skipped == 0 {
            grid = parse_grid_comment(first)?;
        }
        skipped += 1;
        body = body.split_once('\n').map_or("", |(_, rest)| rest);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(skipped + csv_position(&e).max(1), e.to_string()))?
        .clone();
    let axes = ["x", "y", "z"];
    let dim = header.len().saturating_sub(1);
    if !(1..=3).contains(&dim)
        || !header[0].eq_ignore_ascii_case("id")
        || header.iter().skip(1).zip(axes).any(|(h, a)| !h.eq_ignore_ascii_case(a))
    {
        return Err(Error::parse(skipped + 1, "header must be `id,x,y[,z]`"));
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(skipped + csv_position(&e), e.to_string()))?;
        let line = skipped + rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].to_owned();
        if id.is_empty() {
            return Err(Error::parse(line, "empty sensor id"));
        }
        let c = (0..dim)
            .map(|a| parse_f64(&rec[a + 1], line, axes[a]))
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        coords.push(c);
    }
    SensorLayout::new(ids, coords, grid)
}

pub fn format_layout(layout: &SensorLayout) -> String {
    let mut out = String::new();
    if let Some(g) = &layout.grid {
        writeln!(out, "# grid rows={} cols={} dx={} dy={}", g.rows, g.cols, g.dx, g.dy).unwrap();
    }
    out.push_str("id");
    for a in ["x", "y", "z"].iter().take(layout.dim) {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for (id, c) in layout.ids.iter().zip(&layout.coords) {
        out.push_str(id);
        for v in c {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_layout(path: impl AsRef<Path>, layout: &SensorLayout) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_layout(layout)).map_err(|e| Error::io(path, e))
}
