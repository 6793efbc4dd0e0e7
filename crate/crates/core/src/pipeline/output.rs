//! Files written by a run.

use std::fs;
use std::path::{Path, PathBuf};

use crate::energy::{discrete_acceleration, second_material_derivative, EnergyBreakdown, SolverConfig, SplineState};
use crate::error::{Error, Result};
use crate::image::{render_flow, render_scalar, save_image, ImageGrid};
use crate::optimize::IterationRecord;

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_owned(), source })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_owned(), source })
}

fn with_header(header: &[String], body: &str) -> String {
    let mut out = String::new();
    for line in header {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(body);
    out
}

pub fn frame_name(k: usize) -> String {
    format!("frame_{k:03}.png")
}

/// `frame_%03d.png` for `u_0..u_K`.
pub fn write_frames(state: &SplineState, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    state
        .images
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let path = dir.join(frame_name(k));
            save_image(u, &path)?;
            Ok(path)
        })
        .collect()
}

fn max_magnitude(fields: &[ImageGrid]) -> f64 {
    let m = fields.iter().map(|f| f.channel_norm().data().iter().copied().fold(0.0, f64::max)).fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn write_flows(fields: &[(usize, ImageGrid)], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let scale = max_magnitude(&fields.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>());
    for (k, field) in fields {
        save_image(&render_flow(field, scale)?, dir.join(frame_name(*k)))?;
    }
    Ok(())
}

fn write_scalars(fields: &[(usize, ImageGrid)], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (k, field) in fields {
        save_image(&render_scalar(&field.channel_norm())?, dir.join(frame_name(*k)))?;
    }
    Ok(())
}

/// Displacements `phi_k - id` (`flow/`), accelerations `a_k` (`accel/`),
/// second material derivatives (`wdot/`) and slack magnitudes (`slack/`).
pub fn write_diagnostics(state: &SplineState, cfg: &SolverConfig, dir: &Path) -> Result<()> {
    let k_max = cfg.steps;
    let flows: Vec<_> = (1..=k_max).map(|k| (k, state.deformation(k).displacement())).collect();
    write_flows(&flows, &dir.join("flow"))?;
    let accels = (1..k_max)
        .map(|k| Ok((k, discrete_acceleration(state.deformation(k), state.deformation(k + 1), k_max)?)))
        .collect::<Result<Vec<_>>>()?;
    write_flows(&accels, &dir.join("accel"))?;
    let wdots = (1..k_max)
        .map(|k| {
            let w = second_material_derivative(
                state.image(k - 1),
                state.image(k),
                state.image(k + 1),
                state.deformation(k),
                state.deformation(k + 1),
                k_max,
            )?;
            Ok((k, w))
        })
        .collect::<Result<Vec<_>>>()?;
    write_scalars(&wdots, &dir.join("wdot"))?;
    let slacks: Vec<_> = (1..=k_max).map(|k| (k, state.slack(k).clone())).collect();
    write_scalars(&slacks, &dir.join("slack"))
}

pub fn write_energy_csv(breakdown: &EnergyBreakdown, header: &[String], path: &Path) -> Result<()> {
    write_text(path, &with_header(header, &breakdown.to_csv()))
}

pub fn iterations_csv(records: &[IterationRecord], header: &[String]) -> String {
    let mut body = String::from(IterationRecord::CSV_HEADER);
    body.push('\n');
    for r in records {
        body.push_str(&r.csv_row());
        body.push('\n');
    }
    with_header(header, &body)
}

pub fn write_iterations_csv(records: &[IterationRecord], header: &[String], path: &Path) -> Result<()> {
    write_text(path, &iterations_csv(records, header))
}
