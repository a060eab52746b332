//! Artifact writers. CSV floats use shortest round-trip formatting so a
//! repeated run produces byte-identical files.

use std::f64::consts::TAU;
use std::path::Path;

use anyhow::{Context, Result};
use codesign_core::cobyla::HistoryEntry;
use codesign_core::control::ControllerParams;
use codesign_core::fem::ModalModel;
use codesign_core::plant::{ChannelCoefficients, FrequencyFunction};
use serde::Serialize;

use crate::pipeline::{DesignReport, SweepRow};

pub fn write_report(path: &Path, report: &DesignReport) -> Result<()> {
    write_json(path, report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| path.display().to_string())?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_geometry_history(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    let rows = history
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut row = vec![i.to_string()];
            row.extend(e.point.iter().map(|v| format!("{}", v * 1e3)));
            row.push(format!("{}", e.objective));
            row.push(format!("{}", e.max_violation));
            row
        })
        .collect();
    write_csv(
        path,
        &[
            "eval_index",
            "base_thickness_mm",
            "rib_height_mm",
            "rib_width_mm",
            "rib_pitch_mm",
            "frame_width_mm",
            "mass_kg",
            "max_violation",
        ],
        rows,
    )
}

pub fn write_placement_map(path: &Path, rows: &[[f64; 3]]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| r.iter().map(|v| format!("{v}")).collect())
        .collect();
    write_csv(path, &["x_mm", "y_mm", "objective"], rows)
}

#[derive(Serialize)]
struct ModalSummary {
    total_mass_kg: f64,
    mass_center_mm: [f64; 2],
    n_rigid: usize,
    flexible_frequencies_hz: Vec<f64>,
    damping_ratios: Vec<f64>,
}

pub fn write_modal_summary(path: &Path, model: &ModalModel) -> Result<()> {
    let summary = ModalSummary {
        total_mass_kg: model.total_mass,
        mass_center_mm: [model.mass_center[0] * 1e3, model.mass_center[1] * 1e3],
        n_rigid: model.n_rigid,
        flexible_frequencies_hz: model
            .flexible_frequencies()
            .iter()
            .map(|w| w / TAU)
            .collect(),
        damping_ratios: model.damping[model.n_rigid..].to_vec(),
    };
    write_json(path, &summary)
}

/// Open-loop plant, shaped loop, and sensitivity over the synthesis grid.
pub fn write_bode(
    path: &Path,
    grid: &[f64],
    plant: &ChannelCoefficients,
    controller: &ControllerParams,
) -> Result<()> {
    let db = |m: f64| 20.0 * m.log10();
    let rows = grid
        .iter()
        .map(|&w| {
            let g = plant.eval(w);
            let l = g * controller.eval(w);
            let s = (l + 1.0).inv();
            vec![
                format!("{}", w / TAU),
                format!("{}", db(g.norm())),
                format!("{}", g.arg().to_degrees()),
                format!("{}", db(l.norm())),
                format!("{}", l.arg().to_degrees()),
                format!("{}", s.norm()),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "freq_hz",
            "plant_mag_db",
            "plant_phase_deg",
            "loop_mag_db",
            "loop_phase_deg",
            "sensitivity_mag",
        ],
        rows,
    )
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.omega_high_hz),
                format!("{}", r.mass_kg),
                format!("{}", r.achieved_bandwidth_hz),
                format!("{}", r.max_sensitivity),
                r.feasible.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "omega_high_hz",
            "mass_kg",
            "achieved_bandwidth_hz",
            "max_sensitivity",
            "feasible",
        ],
        rows,
    )
}
