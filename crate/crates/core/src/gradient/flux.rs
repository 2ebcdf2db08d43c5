use std::fs;
use std::path::Path;

use serde::Serialize;

use super::GradientField;
use crate::error::{Error, Result};
use crate::timeseries::{distance, SensorLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Heating,
    Cooling,
}

/// A heat source or sink at a known location, e.g. an air conditioner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Source {
    pub id: String,
    pub position: Vec<f64>,
    pub kind: SourceKind,
}

/// Agreement of the field with heat flowing away from heaters and toward
/// coolers, per source.
///
/// For each source, averages `cos` of the angle between the real gradient
/// and the unit vector from the source to the sensor, over valid sensors
/// within twice the median sensor spacing; negated for heating sources.
/// A sensor with a zero gradient contributes 0.
pub fn flux_consistency(field: &GradientField, layout: &SensorLayout, sources: &[Source]) -> Result<Vec<f64>> {
    if field.vectors.len() != layout.len() {
        return Err(Error::Argument("field and layout differ in size".into()));
    }
    let radius = 2.0 * layout.median_spacing();
    sources
        .iter()
        .map(|src| {
            if src.position.len() != layout.dim() {
                return Err(Error::Argument(format!("source `{}` has wrong dimension", src.id)));
            }
            let mut total = 0.0;
            let mut count = 0usize;
            for (i, r) in layout.coords().iter().enumerate() {
                let dist = distance(r, &src.position);
                if !field.valid[i] || dist > radius || dist == 0.0 {
                    continue;
                }
                let g = field.real(i);
                let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cos = if g_norm == 0.0 {
                    0.0
                } else {
                    g.iter().zip(r.iter().zip(&src.position)).map(|(gv, (a, b))| gv * (a - b)).sum::<f64>()
                        / (g_norm * dist)
                };
                total += cos;
                count += 1;
            }
            if count == 0 {
                return Err(Error::Geometry(format!(
                    "no valid sensor within {radius} m of source `{}`",
                    src.id
                )));
            }
            let score = total / count as f64;
            Ok(match src.kind {
                SourceKind::Cooling => score,
                SourceKind::Heating => -score,
            })
        })
        .collect()
}

/// Reads `id,x,y[,z],kind` rows, `kind` being `cooling` or `heating`.
pub fn parse_sources(text: &str) -> Result<Vec<Source>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let dim = header.len().saturating_sub(2);
    if !(1..=3).contains(&dim) || &header[0] != "id" || &header[header.len() - 1] != "kind" {
        return Err(Error::parse(1, "header must be `id,x,y[,z],kind`"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let position = (0..dim)
            .map(|a| {
                rec[a + 1]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(line, format!("bad coordinate `{}`", &rec[a + 1])))
            })
            .collect::<Result<Vec<_>>>()?;
        let kind = match &rec[dim + 1] {
            "cooling" | "cool" => SourceKind::Cooling,
            "heating" | "heat" => SourceKind::Heating,
            other => return Err(Error::parse(line, format!("unknown source kind `{other}`"))),
        };
        out.push(Source {
            id: rec[0].to_owned(),
            position,
            kind,
        });
    }
    Ok(out)
}

pub fn load_sources(path: impl AsRef<Path>) -> Result<Vec<Source>> {
    let path = path.as_ref();
    parse_sources(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::{gradient_field, GradientMethod, GradientOptions, ModeSource, ModeValues};
    use num_complex::Complex64;

    fn square_grid(n: usize, h: f64) -> SensorLayout {
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        for r in 0..n {
            for c in 0..n {
                ids.push(format!("s{r}_{c}"));
                coords.push(vec![c as f64 * h, r as f64 * h]);
            }
        }
        SensorLayout::new(ids, coords, None).unwrap()
    }

    fn exact_radial(l: &SensorLayout, src: &[f64], sign: f64) -> GradientField {
        let vectors = l
            .coords()
            .iter()
            .map(|c| {
                let d = distance(c, src);
                c.iter().zip(src).map(|(a, b)| Complex64::new(sign * (a - b) / d, 0.0)).collect()
            })
            .collect();
        GradientField {
            vectors,
            valid: vec![true; l.len()],
            methods: vec![GradientMethod::ScatteredLsq; l.len()],
            complex: false,
            source: ModeSource::PhaseAverage,
        }
    }

    fn source(kind: SourceKind, position: Vec<f64>) -> Source {
        Source {
            id: "AC".into(),
            position,
            kind,
        }
    }

    #[test]
    fn radial_fields_score_one() {
        let l = square_grid(9, 0.5);
        let src = vec![2.05, 1.95];
        let up = exact_radial(&l, &src, 1.0);
        let down = exact_radial(&l, &src, -1.0);
        let cool = source(SourceKind::Cooling, src.clone());
        let heat = source(SourceKind::Heating, src.clone());
        assert!((flux_consistency(&up, &l, &[cool.clone()]).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((flux_consistency(&down, &l, &[heat]).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((flux_consistency(&down, &l, &[cool]).unwrap()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimated_radial_field_points_away() {
        // Between sensors the estimated gradient of a smooth bowl is close to
        // radial; right next to a sensor it is dominated by curvature.
        let l = square_grid(9, 0.5);
        let src = vec![2.25, 2.25];
        let f: Vec<f64> = l.coords().iter().map(|c| distance(c, &src).powi(2)).collect();
        let g = gradient_field(ModeValues::Real(&f), &l, ModeSource::PhaseAverage, &GradientOptions::default()).unwrap();
        let score = flux_consistency(&g, &l, &[source(SourceKind::Cooling, src)]).unwrap()[0];
        assert!(score > 0.95, "{score}");
    }

    #[test]
    fn distant_source_is_an_error() {
        let l = square_grid(3, 1.0);
        let f = vec![0.0; 9];
        let g = gradient_field(ModeValues::Real(&f), &l, ModeSource::PhaseAverage, &GradientOptions::default()).unwrap();
        let s = Source {
            id: "far".into(),
            position: vec![100.0, 100.0],
            kind: SourceKind::Cooling,
        };
        assert!(matches!(flux_consistency(&g, &l, &[s]), Err(Error::Geometry(_))));
    }

    #[test]
    fn parses_sources() {
        let s = parse_sources("id,x,y,kind\nAC-2,5.0,2.75,cooling\nAC-3,9,2.75,heating\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].kind, SourceKind::Heating);
        assert!(parse_sources("id,x,y,kind\nAC,1,1,warm\n").is_err());
    }
}
