use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GradientField, Source, SourceKind};
use crate::error::{Error, Result};
use crate::timeseries::SensorLayout;

const PX_PER_M: f64 = 60.0;
const MARGIN_M: f64 = 1.0;

/// Quiver plot of the real part of a 2-D gradient field.
///
/// The longest valid arrow is drawn at 0.8x the median sensor spacing; the
/// resulting scale is written in the legend. Invalid sensors are hollow.
pub fn quiver_svg(field: &GradientField, layout: &SensorLayout, sources: &[Source], title: &str) -> Result<String> {
    if layout.dim() != 2 {
        return Err(Error::Argument("quiver export needs a 2-D layout".into()));
    }
    let coords = layout.coords();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in coords.iter().chain(sources.iter().map(|s| &s.position)) {
        x0 = x0.min(c[0]);
        x1 = x1.max(c[0]);
        y0 = y0.min(c[1]);
        y1 = y1.max(c[1]);
    }
    x0 -= MARGIN_M;
    y0 -= MARGIN_M;
    x1 += MARGIN_M;
    y1 += MARGIN_M;
    let legend_h = 40.0;
    let w = (x1 - x0) * PX_PER_M;
    let h = (y1 - y0) * PX_PER_M;
    // room y axis points up
    let px = |x: f64| (x - x0) * PX_PER_M;
    let py = |y: f64| (y1 - y) * PX_PER_M;

    let spacing = layout.median_spacing();
    let longest = (0..layout.len())
        .filter(|&i| field.valid[i])
        .map(|i| field.real(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    // meters of arrow per unit of gradient
    let scale = if longest > 0.0 { 0.8 * spacing / longest } else { 0.0 };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{:.1}" viewBox="0 0 {w:.1} {:.1}">"#,
        h + legend_h,
        h + legend_h
    )
    .unwrap();
    writeln!(
        s,
        r#"<defs><marker id="head" markerWidth="8" markerHeight="6" refX="7" refY="3" orient="auto"><path d="M0,0 L8,3 L0,6 z" fill="black"/></marker></defs>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="gray" stroke-width="2"/>"#,
        px(x0 + 0.5 * MARGIN_M),
        py(y1 - 0.5 * MARGIN_M),
        (x1 - x0 - MARGIN_M) * PX_PER_M,
        (y1 - y0 - MARGIN_M) * PX_PER_M
    )
    .unwrap();
    for src in sources {
        let color = match src.kind {
            SourceKind::Cooling => "steelblue",
            SourceKind::Heating => "firebrick",
        };
        writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="14" height="14" fill="{color}" opacity="0.6"><title>{}</title></rect>"#,
            px(src.position[0]) - 7.0,
            py(src.position[1]) - 7.0,
            src.id
        )
        .unwrap();
    }
    for (i, c) in coords.iter().enumerate() {
        let (cx, cy) = (px(c[0]), py(c[1]));
        let fill = if field.valid[i] { "crimson" } else { "white" };
        writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3.5" fill="{fill}" stroke="crimson"><title>{}</title></circle>"#,
            layout.ids()[i]
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="9" fill="dimgray">{}</text>"#, cx + 5.0, cy + 12.0, layout.ids()[i]).unwrap();
        if !field.valid[i] {
            continue;
        }
        let g = field.real(i);
        if g[0] == 0.0 && g[1] == 0.0 {
            continue;
        }
        writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{cy:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.5" marker-end="url(#head)"/>"#,
            px(c[0] + scale * g[0]),
            py(c[1] + scale * g[1])
        )
        .unwrap();
    }
    let legend = if scale > 0.0 {
        format!("{title} | arrow scale: 1 m = {:.4e} units/m | longest {:.4e} units/m", 1.0 / scale, longest)
    } else {
        format!("{title} | zero field")
    };
    writeln!(s, r#"<text x="8" y="{:.2}" font-size="12">{legend}</text>"#, h + 24.0).unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_quiver_svg(
    path: impl AsRef<Path>,
    field: &GradientField,
    layout: &SensorLayout,
    sources: &[Source],
    title: &str,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, quiver_svg(field, layout, sources, title)?).map_err(|e| Error::io(path, e))
}
