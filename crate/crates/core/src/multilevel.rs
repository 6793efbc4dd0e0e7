//! Coarse-to-fine solution: key frames are restricted by box averaging,
//! the coarsest problem is initialized directly, and each finer level starts
//! from its own initialization plus the bilinearly prolongated change the
//! coarser solve made to images and slacks. Deformations are prolongated
//! through their displacement.

use log::info;

use crate::energy::{BoundaryCondition, KeyFrameSet, SolverConfig, SplineState};
use crate::error::{Error, Result};
use crate::image::{DeformationField, ImageGrid};
use crate::optimize::{ipalm_solve_with, SolveOptions, SolveReport};
use crate::warp::mirror_index;

/// Halves each dimension (rounding up) by `2 x 2` box averaging. Odd edges
/// are completed by mirroring.
pub fn restrict_image(u: &ImageGrid) -> Result<ImageGrid> {
    let (w, h, c) = (u.width(), u.height(), u.channels());
    if w < 6 || h < 6 {
        return Err(Error::GridTooSmall { width: w, height: h, min: 6 });
    }
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = ImageGrid::new(cw, ch, c)?;
    for j in 0..ch {
        let rows = [2 * j, mirror_index(2 * j as isize + 1, h)];
        for i in 0..cw {
            let cols = [2 * i, mirror_index(2 * i as isize + 1, w)];
            for k in 0..c {
                let mut sum = 0.0;
                for &r in &rows {
                    for &q in &cols {
                        sum += u.get(q, r, k);
                    }
                }
                out.set(i, j, k, 0.25 * sum);
            }
        }
    }
    Ok(out)
}

fn restrict_deformation(phi: &DeformationField) -> Result<DeformationField> {
    let mut coarse = DeformationField::from_displacement(&restrict_image(&phi.displacement())?)?;
    coarse.reset_boundary();
    Ok(coarse)
}

/// Bilinear interpolation in normalized coordinates onto a `width x height` grid.
pub fn prolong_image(u: &ImageGrid, width: usize, height: usize) -> Result<ImageGrid> {
    let (cw, chh) = (u.width(), u.height());
    let locate = |t: f64, n: usize| {
        let s = t * (n - 1) as f64;
        let i0 = (s.floor() as usize).min(n - 2);
        (i0, s - i0 as f64)
    };
    let mut out = ImageGrid::new(width, height, u.channels())?;
    for j in 0..height {
        let (j0, fy) = locate(out.y_coord(j), chh);
        for i in 0..width {
            let (i0, fx) = locate(out.x_coord(i), cw);
            for k in 0..u.channels() {
                let top = (1.0 - fx) * u.get(i0, j0, k) + fx * u.get(i0 + 1, j0, k);
                let bottom = (1.0 - fx) * u.get(i0, j0 + 1, k) + fx * u.get(i0 + 1, j0 + 1, k);
                out.set(i, j, k, (1.0 - fy) * top + fy * bottom);
            }
        }
    }
    Ok(out)
}

fn prolong_deformation(phi: &DeformationField, width: usize, height: usize) -> Result<DeformationField> {
    let mut fine = DeformationField::from_displacement(&prolong_image(&phi.displacement(), width, height)?)?;
    fine.reset_boundary();
    Ok(fine)
}

/// Prolongs images and slacks bilinearly and deformations through their displacement.
pub fn prolong_state(state: &SplineState, width: usize, height: usize) -> Result<SplineState> {
    if width < state.width() || height < state.height() {
        return Err(Error::dims(
            format!("at least {}x{}", state.width(), state.height()),
            format!("{width}x{height}"),
        ));
    }
    Ok(SplineState {
        images: state.images.iter().map(|u| prolong_image(u, width, height)).collect::<Result<_>>()?,
        slacks: state.slacks.iter().map(|z| prolong_image(z, width, height)).collect::<Result<_>>()?,
        deformations: state.deformations.iter().map(|p| prolong_deformation(p, width, height)).collect::<Result<_>>()?,
    })
}

/// Fine-level initialization plus the prolongated change the coarse solve made
/// to its own initialization. Deformations are prolongated directly.
fn prolong_correction(
    coarse: &SplineState,
    coarse_start: &SplineState,
    fine_frames: &KeyFrameSet,
    steps: usize,
) -> Result<SplineState> {
    let first = fine_frames.first();
    let (w, h) = (first.width(), first.height());
    let mut fine = SplineState::initialize(fine_frames, steps)?;
    let pairs = fine.images.iter_mut().zip(coarse.images.iter().zip(&coarse_start.images));
    let pairs = pairs.chain(fine.slacks.iter_mut().zip(coarse.slacks.iter().zip(&coarse_start.slacks)));
    for (target, (solved, start)) in pairs {
        target.axpy(1.0, &prolong_image(&solved.combine(1.0, start, -1.0), w, h)?);
    }
    for (target, phi) in fine.deformations.iter_mut().zip(&coarse.deformations) {
        *target = prolong_deformation(phi, w, h)?;
    }
    Ok(fine)
}

/// Prescribed end point data for Hermite boundary conditions at the finest
/// resolution: `phi_1, phi_K` and `z_1, z_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteData {
    pub first_deformation: DeformationField,
    pub last_deformation: DeformationField,
    pub first_slack: ImageGrid,
    pub last_slack: ImageGrid,
}

impl HermiteData {
    fn restrict(&self) -> Result<Self> {
        Ok(Self {
            first_deformation: restrict_deformation(&self.first_deformation)?,
            last_deformation: restrict_deformation(&self.last_deformation)?,
            first_slack: restrict_image(&self.first_slack)?,
            last_slack: restrict_image(&self.last_slack)?,
        })
    }

    fn impose(&self, state: &mut SplineState) -> Result<()> {
        let k = state.steps();
        for (phi, z) in [(&self.first_deformation, &self.first_slack), (&self.last_deformation, &self.last_slack)] {
            state.images[0].check_grid(phi.grid())?;
            state.images[0].check_shape(z)?;
        }
        state.deformations[0] = self.first_deformation.clone();
        state.deformations[k - 1] = self.last_deformation.clone();
        state.slacks[0] = self.first_slack.clone();
        state.slacks[k - 1] = self.last_slack.clone();
        Ok(())
    }
}

/// Callback invoked after each level: `(level, state, report)` with level `L`
/// the coarsest and `1` the finest.
pub type LevelObserver<'a> = dyn FnMut(usize, &SplineState, &SolveReport) -> Result<()> + 'a;

#[derive(Default)]
pub struct MultilevelOptions<'a> {
    pub hermite: Option<HermiteData>,
    pub observer: Option<Box<LevelObserver<'a>>>,
}

/// Solution of the finest level together with the report of every level,
/// coarsest first.
#[derive(Debug, Clone)]
pub struct MultilevelResult {
    pub state: SplineState,
    pub reports: Vec<SolveReport>,
}

pub fn solve_multilevel(keyframes: &KeyFrameSet, cfg: &SolverConfig) -> Result<SplineState> {
    solve_multilevel_with(keyframes, cfg, MultilevelOptions::default()).map(|r| r.state)
}

pub fn solve_multilevel_with(
    keyframes: &KeyFrameSet,
    cfg: &SolverConfig,
    mut options: MultilevelOptions<'_>,
) -> Result<MultilevelResult> {
    cfg.validate()?;
    if keyframes.indices() != cfg.fixed_indices {
        return Err(Error::Config(format!(
            "key frames given at {:?} but configured at {:?}",
            keyframes.indices(),
            cfg.fixed_indices
        )));
    }
    if cfg.boundary == BoundaryCondition::Periodic {
        if let (Some(first), Some(last)) = (keyframes.get(0), keyframes.get(cfg.steps)) {
            if first != last {
                return Err(Error::Config("periodic boundary conditions require u_0 = u_K".into()));
            }
        }
    }

    let mut pyramid = vec![keyframes.clone()];
    let mut hermite = vec![options.hermite.take()];
    for _ in 1..cfg.levels {
        let finer = pyramid.last().unwrap();
        let frames = finer
            .frames()
            .iter()
            .map(|(k, u)| Ok((*k, restrict_image(u)?)))
            .collect::<Result<Vec<_>>>()?;
        pyramid.push(KeyFrameSet::new(frames)?);
        let coarse = hermite.last().unwrap().as_ref().map(HermiteData::restrict).transpose()?;
        hermite.push(coarse);
    }

    let mut reports = Vec::with_capacity(cfg.levels);
    let mut state: Option<SplineState> = None;
    for level in (1..=cfg.levels).rev() {
        let frames = &pyramid[level - 1];
        let first = frames.first();
        let mut current = match state.take() {
            None => SplineState::initialize(frames, cfg.steps)?,
            Some(coarse) => {
                let baseline = SplineState::initialize(&pyramid[level], cfg.steps)?;
                prolong_correction(&coarse, &baseline, frames, cfg.steps)?
            }
        };
        for (k, u) in frames.frames() {
            current.images[*k] = u.clone();
        }
        if let Some(data) = &hermite[level - 1] {
            data.impose(&mut current)?;
        }
        info!("level {level}: {}x{}", first.width(), first.height());
        let (solved, report) = ipalm_solve_with(current, cfg, SolveOptions { level })?;
        if let Some(observer) = options.observer.as_mut() {
            observer(level, &solved, &report)?;
        }
        reports.push(report);
        state = Some(solved);
    }
    Ok(MultilevelResult { state: state.expect("at least one level"), reports })
}
