//! Synthetic datasets with known answers: an analytic multi-tone field and a
//! thermostat-driven room.

mod analytic;
mod room;

use std::path::{Path, PathBuf};

pub use analytic::{
    analytic_default, generate_analytic, parse_analytic_config, AnalyticSpec, PolyTerm, SpatialField, Tone,
    ANALYTIC_DEFAULT_TOML,
};
pub use room::{
    cycle_periods, format_sources, format_switch_log, parse_room_config, room_default, simulate_room,
    write_switch_log, AcMode, AcSpec, RoomRun, RoomSimSpec, RoomState, SwitchEvent, CFL_LIMIT, ROOM_DEFAULT_TOML,
};

use crate::timeseries::SensorLayout;

/// 28 sensors `TH-1..TH-28` in four rows of seven, numbered row by row from
/// the far wall (y = 5.75 m) of a 14 m x 7 m room.
pub fn room_sensor_layout() -> SensorLayout {
    let rows = [5.75, 4.25, 2.75, 1.25];
    let mut ids = Vec::with_capacity(28);
    let mut coords = Vec::with_capacity(28);
    for (r, y) in rows.iter().enumerate() {
        for c in 0..7 {
            ids.push(format!("TH-{}", r * 7 + c + 1));
            coords.push(vec![1.0 + 2.0 * c as f64, *y]);
        }
    }
    SensorLayout::new(ids, coords, None).expect("built-in layout is valid")
}

fn resolve(base_dir: Option<&Path>, p: &str) -> PathBuf {
    match base_dir {
        Some(b) if Path::new(p).is_relative() => b.join(p),
        _ => PathBuf::from(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let l = room_sensor_layout();
        assert_eq!(l.len(), 28);
        assert_eq!(l.position_of("TH-17").unwrap(), &[5.0, 2.75][..]);
        assert_eq!(l.coords()[16], vec![5.0, 2.75]);
        assert_eq!(l.coords()[18], vec![9.0, 2.75]);
        assert_eq!(l.median_spacing(), 1.5);
    }
}
