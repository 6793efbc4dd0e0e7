//! End-to-end run: load key frames, solve, write results.

use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::energy::{total_energy, EnergyBreakdown, KeyFrameSet, SplineState};
use crate::error::{Error, Result};
use crate::image::load_image;
use crate::multilevel::{solve_multilevel_with, MultilevelOptions};
use crate::optimize::IterationRecord;
use crate::pipeline::config::RunConfig;
use crate::pipeline::output::{
    create_dir, iterations_csv, write_diagnostics, write_energy_csv, write_frames, write_iterations_csv, write_text,
};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SplineState,
    pub energy: EnergyBreakdown,
    pub records: Vec<IterationRecord>,
    /// Total energy at the start and end of the finest level.
    pub finest_initial: f64,
    pub finest_final: f64,
}

pub fn load_keyframes(cfg: &RunConfig) -> Result<KeyFrameSet> {
    let frames = cfg
        .keyframes
        .iter()
        .map(|k| {
            info!("loading key frame {} from {}", k.index, k.path.display());
            Ok((k.index, load_image(&k.path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    KeyFrameSet::new(frames)
}

/// Loads the configured key frames and calls [`run_with_keyframes`].
pub fn run(cfg: &RunConfig, out: &Path, dump_levels: bool) -> Result<RunOutcome> {
    let cfg = cfg.clone().normalized()?;
    let keyframes = load_keyframes(&cfg)?;
    run_with_keyframes(&keyframes, &cfg, out, dump_levels)
}

/// Solves and writes `frame_%03d.png`, the `flow/`, `accel/`, `wdot/` and
/// `slack/` renderings, `energy.csv` and `iterations.csv` into `out`. With
/// `dump_levels`, every level's frames and energy go to `levels/level_<l>/`.
/// On a solver failure the log so far and the error are written to
/// `out/diagnostic/` and [`Error::SolverAborted`] is returned.
pub fn run_with_keyframes(keyframes: &KeyFrameSet, cfg: &RunConfig, out: &Path, dump_levels: bool) -> Result<RunOutcome> {
    create_dir(out)?;
    let header = cfg.header_lines();
    let mut records: Vec<IterationRecord> = Vec::new();
    let result = {
        let records = &mut records;
        let header = &header;
        let observer = move |level: usize, state: &SplineState, report: &crate::optimize::SolveReport| -> Result<()> {
            records.extend(report.records.iter().cloned());
            if report.det_violations > 0 {
                warn!("level {level}: {} deformation updates kept a determinant below the floor", report.det_violations);
            }
            if dump_levels {
                let dir = out.join("levels").join(format!("level_{level}"));
                write_frames(state, &dir)?;
                write_energy_csv(&report.last, header, &dir.join("energy.csv"))?;
            }
            Ok(())
        };
        let options = MultilevelOptions { hermite: None, observer: Some(Box::new(observer)) };
        solve_multilevel_with(keyframes, &cfg.solver, options)
    };
    let result = match result {
        Ok(r) => r,
        Err(e) => return Err(write_diagnostic(out, &header, &records, e)),
    };
    let finest = result.reports.last().expect("at least one level");
    let state = result.state;
    let energy = total_energy(&state, &cfg.solver)?;
    write_frames(&state, out)?;
    write_diagnostics(&state, &cfg.solver, out)?;
    write_energy_csv(&energy, &header, &out.join("energy.csv"))?;
    write_iterations_csv(&records, &header, &out.join("iterations.csv"))?;
    write_text(&out.join("config.json"), &cfg.to_json())?;
    Ok(RunOutcome {
        finest_initial: finest.initial.total,
        finest_final: finest.last.total,
        state,
        energy,
        records,
    })
}

fn write_diagnostic(out: &Path, header: &[String], records: &[IterationRecord], error: Error) -> Error {
    let dir: PathBuf = out.join("diagnostic");
    let written = create_dir(&dir)
        .and_then(|_| write_text(&dir.join("error.txt"), &format!("{error}\n")))
        .and_then(|_| write_text(&dir.join("iterations.csv"), &iterations_csv(records, header)));
    match written {
        Ok(()) => Error::SolverAborted { diagnostic: dir, source: Box::new(error) },
        Err(_) => error,
    }
}
