//! The fully discrete regularized spline energy.
//!
//! For images `u_0..u_K`, slack derivatives `z_1..z_K` and deformations
//! `phi_1..phi_K` the energy is
//!
//! ```text
//! sum_{k=1}^{K-1} (1/K) ||W_A(grad a_k)||_1 + (K/delta) D^s[z_k, z_{k+1}, phi_k]
//!   + sum_{k=1}^{K} sigma (K ||W_D(grad phi_k)||_1 + 1/(delta K) ||z_k||_2^2)
//!                   + 1/(theta K) D^g[u_{k-1}, u_k, z_k, phi_k]
//! ```
//!
//! with averaged grid norms. Geodesic mode drops the first sum; periodic
//! boundary conditions extend it to `k = K` with `K + 1` identified with `1`.

use serde::{Deserialize, Serialize};

use crate::diffops::{jacobian, Mat2};
use crate::error::{Error, Result};
use crate::image::{DeformationField, ImageGrid};
use crate::warp::WarpStencil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Spline,
    Geodesic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    #[default]
    Natural,
    Periodic,
    Hermite,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spline" => Ok(Mode::Spline),
            "geodesic" => Ok(Mode::Geodesic),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(BoundaryCondition::Natural),
            "periodic" => Ok(BoundaryCondition::Periodic),
            "hermite" => Ok(BoundaryCondition::Hermite),
            other => Err(Error::Config(format!("unknown boundary condition '{other}'"))),
        }
    }
}

/// Model weights and solver schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight of intensity variation (`1/delta` multiplies the slack terms).
    pub delta: f64,
    /// Weight of the path energy added to the spline energy.
    pub sigma: f64,
    /// Coupling of slack and actual material derivatives (`1/theta`).
    pub theta: f64,
    /// Number of time steps `K`; the path has `K + 1` images.
    #[serde(rename = "K")]
    pub steps: usize,
    pub levels: usize,
    pub iterations: usize,
    /// Inertial extrapolation parameter.
    pub beta: f64,
    pub mode: Mode,
    pub boundary: BoundaryCondition,
    pub det_floor: f64,
    /// Indices of the constrained images, strictly increasing.
    pub fixed_indices: Vec<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: 5e-3,
            sigma: 1.0,
            theta: 5e-5,
            steps: 8,
            levels: 5,
            iterations: 250,
            beta: std::f64::consts::FRAC_1_SQRT_2,
            mode: Mode::Spline,
            boundary: BoundaryCondition::Natural,
            det_floor: 1e-6,
            fixed_indices: vec![0, 4, 8],
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [("delta", self.delta), ("sigma", self.sigma), ("theta", self.theta), ("det_floor", self.det_floor)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.steps < 2 {
            return bad(format!("K must be at least 2, got {}", self.steps));
        }
        if self.levels < 1 || self.iterations < 1 {
            return bad("levels and iterations must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if self.fixed_indices.len() < 2 {
            return bad("at least two key frames are required".into());
        }
        if self.fixed_indices.windows(2).any(|w| w[0] >= w[1]) {
            return bad("key frame indices must be strictly increasing".into());
        }
        if *self.fixed_indices.last().unwrap() > self.steps {
            return bad(format!("key frame index beyond K = {}", self.steps));
        }
        if self.boundary == BoundaryCondition::Hermite
            && (self.fixed_indices[0] != 0 || *self.fixed_indices.last().unwrap() != self.steps)
        {
            return bad("hermite boundary conditions fix the images 0 and K".into());
        }
        Ok(())
    }

    pub fn is_fixed(&self, k: usize) -> bool {
        self.fixed_indices.binary_search(&k).is_ok()
    }

    /// Indices `k` whose acceleration and slack transport terms are active.
    pub fn spline_indices(&self) -> std::ops::Range<usize> {
        match (self.mode, self.boundary) {
            (Mode::Geodesic, _) => 1..1,
            (Mode::Spline, BoundaryCondition::Periodic) => 1..self.steps + 1,
            (Mode::Spline, _) => 1..self.steps,
        }
    }

    pub fn has_spline_term(&self, k: usize) -> bool {
        self.spline_indices().contains(&k)
    }

    /// Successor of `k` in the spline terms (`K + 1` wraps to `1` when periodic).
    pub fn next_index(&self, k: usize) -> usize {
        if k == self.steps {
            1
        } else {
            k + 1
        }
    }

    /// Predecessor `k - 1` as used by the spline terms, wrapping `0` to `K` when periodic.
    pub fn prev_spline_index(&self, k: usize) -> Option<usize> {
        let prev = if k == 1 { self.steps } else { k - 1 };
        (self.has_spline_term(prev) && self.next_index(prev) == k).then_some(prev)
    }
}

/// Key frames pinned at time indices.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyFrameSet {
    frames: Vec<(usize, ImageGrid)>,
}

impl KeyFrameSet {
    pub fn new(mut frames: Vec<(usize, ImageGrid)>) -> Result<Self> {
        frames.sort_by_key(|(k, _)| *k);
        if frames.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("duplicate key frame index".into()));
        }
        if let Some((_, first)) = frames.first() {
            if let Some((_, bad)) = frames.iter().find(|(_, u)| !u.same_shape(first)) {
                return Err(Error::dims(first.shape_string(), bad.shape_string()));
            }
        } else {
            return Err(Error::Config("no key frames given".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[(usize, ImageGrid)] {
        &self.frames
    }

    pub fn indices(&self) -> Vec<usize> {
        self.frames.iter().map(|(k, _)| *k).collect()
    }

    pub fn get(&self, k: usize) -> Option<&ImageGrid> {
        self.frames.iter().find(|(i, _)| *i == k).map(|(_, u)| u)
    }

    pub fn first(&self) -> &ImageGrid {
        &self.frames[0].1
    }
}

/// All unknowns of one problem. Indices follow the math: images `0..=K`,
/// slacks and deformations `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineState {
    pub images: Vec<ImageGrid>,
    pub slacks: Vec<ImageGrid>,
    pub deformations: Vec<DeformationField>,
}

impl SplineState {
    /// Identity deformations, images linearly interpolated between key frames
    /// (held constant outside them) and slacks `K (u_k - u_{k-1})`.
    pub fn initialize(keyframes: &KeyFrameSet, steps: usize) -> Result<Self> {
        let frames = keyframes.frames();
        if frames.last().map(|(k, _)| *k > steps).unwrap_or(true) {
            return Err(Error::Config(format!("key frame index beyond K = {steps}")));
        }
        let images: Vec<ImageGrid> = (0..=steps)
            .map(|k| {
                let after = frames.iter().position(|(i, _)| *i >= k);
                match after {
                    None => frames.last().unwrap().1.clone(),
                    Some(0) => frames[0].1.clone(),
                    Some(p) => {
                        let (k0, u0) = &frames[p - 1];
                        let (k1, u1) = &frames[p];
                        let t = (k - k0) as f64 / (k1 - k0) as f64;
                        u0.combine(1.0 - t, u1, t)
                    }
                }
            })
            .collect();
        let first = keyframes.first();
        let deformations = (0..steps)
            .map(|_| DeformationField::identity(first.width(), first.height()))
            .collect::<Result<Vec<_>>>()?;
        let slacks = (1..=steps).map(|k| images[k].combine(steps as f64, &images[k - 1], -(steps as f64))).collect();
        Ok(Self { images, slacks, deformations })
    }

    pub fn steps(&self) -> usize {
        self.deformations.len()
    }

    #[inline]
    pub fn image(&self, k: usize) -> &ImageGrid {
        &self.images[k]
    }

    #[inline]
    pub fn slack(&self, k: usize) -> &ImageGrid {
        &self.slacks[k - 1]
    }

    #[inline]
    pub fn slack_mut(&mut self, k: usize) -> &mut ImageGrid {
        &mut self.slacks[k - 1]
    }

    #[inline]
    pub fn deformation(&self, k: usize) -> &DeformationField {
        &self.deformations[k - 1]
    }

    #[inline]
    pub fn deformation_mut(&mut self, k: usize) -> &mut DeformationField {
        &mut self.deformations[k - 1]
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }

    pub fn validate(&self, cfg: &SolverConfig) -> Result<()> {
        let k = cfg.steps;
        if self.images.len() != k + 1 || self.slacks.len() != k || self.deformations.len() != k {
            return Err(Error::dims(
                format!("{} images, {k} slacks and deformations", k + 1),
                format!("{} images, {} slacks, {} deformations", self.images.len(), self.slacks.len(), self.deformations.len()),
            ));
        }
        let first = &self.images[0];
        for u in self.images.iter().chain(&self.slacks) {
            first.check_shape(u)?;
        }
        for phi in &self.deformations {
            first.check_grid(phi.grid())?;
        }
        Ok(())
    }

    /// Applies `f` to every grid of the state (used for symmetry tests).
    pub fn map_grids(&self, f: impl Fn(&ImageGrid) -> ImageGrid, g: impl Fn(&DeformationField) -> DeformationField) -> Self {
        Self {
            images: self.images.iter().map(&f).collect(),
            slacks: self.slacks.iter().map(&f).collect(),
            deformations: self.deformations.iter().map(g).collect(),
        }
    }
}

/// Per-index summands of the energy. Vectors are indexed by `k - 1`; inactive
/// entries are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyBreakdown {
    /// `sigma K ||W_D(grad phi_k)||_1`
    pub elastic: Vec<f64>,
    /// `(1/K) ||W_A(grad a_k)||_1`
    pub accel: Vec<f64>,
    /// `(K/delta) D^s[z_k, z_{k+1}, phi_k]`
    pub slack_transport: Vec<f64>,
    /// `sigma/(delta K) ||z_k||^2`
    pub slack_norm: Vec<f64>,
    /// `1/(theta K) D^g[u_{k-1}, u_k, z_k, phi_k]`
    pub intensity_misfit: Vec<f64>,
    pub total: f64,
}

/// Column sums of an [`EnergyBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermSums {
    pub elastic: f64,
    pub accel: f64,
    pub slack_transport: f64,
    pub slack_norm: f64,
    pub intensity_misfit: f64,
}

impl EnergyBreakdown {
    pub fn sums(&self) -> TermSums {
        let s = |v: &[f64]| v.iter().sum::<f64>();
        TermSums {
            elastic: s(&self.elastic),
            accel: s(&self.accel),
            slack_transport: s(&self.slack_transport),
            slack_norm: s(&self.slack_norm),
            intensity_misfit: s(&self.intensity_misfit),
        }
    }

    /// One row per `k`, one column per term, and a final total row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,E_WD,E_WA,E_Ds,E_znorm,E_Dg,E_total\n");
        for k in 0..self.elastic.len() {
            let row = self.elastic[k] + self.accel[k] + self.slack_transport[k] + self.slack_norm[k] + self.intensity_misfit[k];
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                k + 1,
                self.elastic[k],
                self.accel[k],
                self.slack_transport[k],
                self.slack_norm[k],
                self.intensity_misfit[k],
                row
            ));
        }
        let s = self.sums();
        out.push_str(&format!(
            "total,{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            s.elastic, s.accel, s.slack_transport, s.slack_norm, s.intensity_misfit, self.total
        ));
        out
    }
}

/// `v = K (phi - id)`.
pub fn discrete_velocity(phi: &DeformationField, steps: usize) -> ImageGrid {
    phi.displacement().scaled(steps as f64)
}

/// `a = K^2 (T[phi_next - id, phi] - (phi - id))`.
pub fn discrete_acceleration(phi: &DeformationField, phi_next: &DeformationField, steps: usize) -> Result<ImageGrid> {
    acceleration_with(&WarpStencil::new(phi), phi, phi_next, steps)
}

pub(crate) fn acceleration_with(
    stencil: &WarpStencil,
    phi: &DeformationField,
    phi_next: &DeformationField,
    steps: usize,
) -> Result<ImageGrid> {
    let k2 = (steps * steps) as f64;
    let warped = stencil.warp(&phi_next.displacement())?;
    Ok(warped.combine(k2, &phi.displacement(), -k2))
}

/// `z_hat = K (T[u_k, phi_k] - u_{k-1})`.
pub fn material_derivative(
    u_prev: &ImageGrid,
    u: &ImageGrid,
    phi: &DeformationField,
    steps: usize,
) -> Result<ImageGrid> {
    u_prev.check_shape(u)?;
    let warped = WarpStencil::new(phi).warp(u)?;
    Ok(warped.combine(steps as f64, u_prev, -(steps as f64)))
}

/// `w_hat = K^2 (T[T[u_{k+1}, phi_{k+1}], phi_k] - 2 T[u_k, phi_k] + u_{k-1})`.
pub fn second_material_derivative(
    u_prev: &ImageGrid,
    u: &ImageGrid,
    u_next: &ImageGrid,
    phi: &DeformationField,
    phi_next: &DeformationField,
    steps: usize,
) -> Result<ImageGrid> {
    u_prev.check_shape(u)?;
    u.check_shape(u_next)?;
    let stencil = WarpStencil::new(phi);
    let twice = stencil.warp(&WarpStencil::new(phi_next).warp(u_next)?)?;
    let once = stencil.warp(u)?;
    let k2 = (steps * steps) as f64;
    let mut w = twice.combine(k2, &once, -2.0 * k2);
    w.axpy(k2, u_prev);
    Ok(w)
}

#[inline]
fn sym(a: &Mat2) -> (f64, f64, f64) {
    (a[0][0], 0.5 * (a[0][1] + a[1][0]), a[1][1])
}

/// `W_D(A) = |A^sym - I|^2`.
#[inline]
pub fn elastic_density(a: &Mat2) -> f64 {
    let (d0, off, d1) = sym(a);
    (d0 - 1.0).powi(2) + 2.0 * off * off + (d1 - 1.0).powi(2)
}

/// `W_A(A) = |A^sym|^2`.
#[inline]
pub fn accel_density(a: &Mat2) -> f64 {
    let (d0, off, d1) = sym(a);
    d0 * d0 + 2.0 * off * off + d1 * d1
}

/// `||W_D(grad phi)||_{L^1}`, with the Jacobian taken as `I + grad(phi - id)`.
/// The identity has zero energy, including on the Neumann rows.
pub fn elastic_term(phi: &DeformationField) -> f64 {
    let jac = jacobian(&phi.displacement()).expect("two channels");
    let sum: f64 = jac
        .data()
        .iter()
        .map(|m| elastic_density(&[[1.0 + m[0][0], m[0][1]], [m[1][0], 1.0 + m[1][1]]]))
        .sum();
    sum / jac.data().len() as f64
}

/// `||W_A(grad a)||_{L^1}`.
pub fn accel_term(a: &ImageGrid) -> f64 {
    let jac = jacobian(a).expect("two channels");
    jac.data().iter().map(accel_density).sum::<f64>() / jac.data().len() as f64
}

/// `D^s = 1/(2c) sum_j ||T[z_next^j, phi] - z^j||^2`.
pub fn slack_transport_mismatch(z: &ImageGrid, z_next: &ImageGrid, phi: &DeformationField) -> Result<f64> {
    z.check_shape(z_next)?;
    transport_with(&WarpStencil::new(phi), z, z_next)
}

pub(crate) fn transport_with(stencil: &WarpStencil, z: &ImageGrid, z_next: &ImageGrid) -> Result<f64> {
    let r = stencil.warp(z_next)?.combine(1.0, z, -1.0);
    Ok(r.mean_sq() / (2.0 * z.channels() as f64))
}

/// `D^g = 1/(2c) sum_j ||K (T[u^j, phi] - u_prev^j) - z^j||^2`.
pub fn intensity_mismatch(
    u_prev: &ImageGrid,
    u: &ImageGrid,
    z: &ImageGrid,
    phi: &DeformationField,
    steps: usize,
) -> Result<f64> {
    u_prev.check_shape(u)?;
    u.check_shape(z)?;
    misfit_with(&WarpStencil::new(phi), u_prev, u, z, steps)
}

pub(crate) fn misfit_residual(
    stencil: &WarpStencil,
    u_prev: &ImageGrid,
    u: &ImageGrid,
    z: &ImageGrid,
    steps: usize,
) -> Result<ImageGrid> {
    let k = steps as f64;
    let mut r = stencil.warp(u)?.combine(k, u_prev, -k);
    r.axpy(-1.0, z);
    Ok(r)
}

pub(crate) fn misfit_with(
    stencil: &WarpStencil,
    u_prev: &ImageGrid,
    u: &ImageGrid,
    z: &ImageGrid,
    steps: usize,
) -> Result<f64> {
    Ok(misfit_residual(stencil, u_prev, u, z, steps)?.mean_sq() / (2.0 * z.channels() as f64))
}

/// Evaluates every summand of the energy.
pub fn total_energy(state: &SplineState, cfg: &SolverConfig) -> Result<EnergyBreakdown> {
    state.validate(cfg)?;
    let steps = cfg.steps;
    let kf = steps as f64;
    let stencils: Vec<WarpStencil> = state.deformations.iter().map(WarpStencil::new).collect();
    let mut b = EnergyBreakdown {
        elastic: vec![0.0; steps],
        accel: vec![0.0; steps],
        slack_transport: vec![0.0; steps],
        slack_norm: vec![0.0; steps],
        intensity_misfit: vec![0.0; steps],
        total: 0.0,
    };
    for k in 1..=steps {
        let stencil = &stencils[k - 1];
        b.elastic[k - 1] = cfg.sigma * kf * elastic_term(state.deformation(k));
        b.slack_norm[k - 1] = cfg.sigma / (cfg.delta * kf) * state.slack(k).mean_sq();
        b.intensity_misfit[k - 1] =
            misfit_with(stencil, state.image(k - 1), state.image(k), state.slack(k), steps)? / (cfg.theta * kf);
        if cfg.has_spline_term(k) {
            let next = cfg.next_index(k);
            let a = acceleration_with(stencil, state.deformation(k), state.deformation(next), steps)?;
            b.accel[k - 1] = accel_term(&a) / kf;
            b.slack_transport[k - 1] = kf / cfg.delta * transport_with(stencil, state.slack(k), state.slack(next))?;
        }
    }
    let s = b.sums();
    b.total = s.elastic + s.accel + s.slack_transport + s.slack_norm + s.intensity_misfit;
    if !b.total.is_finite() {
        return Err(Error::NonFinite("total energy"));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{naive_total_energy, naive_warp, random_state};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(steps: usize) -> SolverConfig {
        SolverConfig { delta: 0.1, sigma: 0.7, theta: 0.2, steps, fixed_indices: vec![0, steps], ..SolverConfig::default() }
    }

    fn constant(w: usize, h: usize, v: f64) -> ImageGrid {
        ImageGrid::constant(w, h, 1, v).unwrap()
    }

    /// Displacement `d` on interior nodes, zero on the boundary.
    fn interior_shift(w: usize, h: usize, d: [f64; 2]) -> DeformationField {
        let mut disp = ImageGrid::from_fn(w, h, 2, |_, _, ch| d[ch]).unwrap();
        for j in 0..h {
            for i in 0..w {
                if disp.is_boundary(i, j) {
                    disp.set(i, j, 0, 0.0);
                    disp.set(i, j, 1, 0.0);
                }
            }
        }
        DeformationField::from_displacement(&disp).unwrap()
    }

    fn transpose_deformation(phi: &DeformationField) -> DeformationField {
        let t = phi.grid().transpose();
        let swapped = ImageGrid::from_fn(t.width(), t.height(), 2, |x, y, ch| {
            let (i, j) = ((x * (t.width() - 1) as f64).round() as usize, (y * (t.height() - 1) as f64).round() as usize);
            t.get(i, j, 1 - ch)
        })
        .unwrap();
        DeformationField::from_grid(swapped).unwrap()
    }

    fn mirror_deformation(phi: &DeformationField) -> DeformationField {
        let mut g = phi.grid().flip_x();
        for v in g.data_mut().iter_mut().step_by(2) {
            *v = 1.0 - *v;
        }
        DeformationField::from_grid(g).unwrap()
    }

    #[test]
    fn velocity_examples() {
        let id = DeformationField::identity(6, 5).unwrap();
        assert!(discrete_velocity(&id, 4).data().iter().all(|v| *v == 0.0));
        let shifted = interior_shift(6, 5, [0.01, -0.02]);
        let v = discrete_velocity(&shifted, 8);
        for j in 1..4 {
            for i in 1..5 {
                assert!((v.get(i, j, 0) - 0.08).abs() < 1e-14);
                assert!((v.get(i, j, 1) + 0.16).abs() < 1e-14);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = &random_state(5, 6, 1, 1, 0.05, &mut rng).unwrap().deformations[0];
        let v = discrete_velocity(phi, 3);
        for j in 0..6 {
            for i in 0..5 {
                assert!((v.get(i, j, 0) - 3.0 * (phi.grid().get(i, j, 0) - i as f64 / 4.0)).abs() < 1e-14);
                assert!((v.get(i, j, 1) - 3.0 * (phi.grid().get(i, j, 1) - j as f64 / 5.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn acceleration_examples() {
        let id = DeformationField::identity(7, 7).unwrap();
        assert!(discrete_acceleration(&id, &id, 3).unwrap().data().iter().all(|v| v.abs() < 1e-14));

        let d = [0.01, 0.015];
        let shifted = interior_shift(7, 7, d);
        let a = discrete_acceleration(&id, &shifted, 4).unwrap();
        for j in 1..6 {
            for i in 1..6 {
                assert!((a.get(i, j, 0) - 16.0 * d[0]).abs() < 1e-12);
                assert!((a.get(i, j, 1) - 16.0 * d[1]).abs() < 1e-12);
            }
        }

        // the displacement vanishes on the boundary, so the warped field is
        // constant only away from it
        let (n, margin) = (40, 10);
        let shifted = interior_shift(n, n, [0.2 / (n - 1) as f64, -0.3 / (n - 1) as f64]);
        let a = discrete_acceleration(&shifted, &shifted, 4).unwrap();
        for j in margin..n - margin {
            for i in margin..n - margin {
                assert!(a.get(i, j, 0).abs() < 1e-5 && a.get(i, j, 1).abs() < 1e-5);
            }
        }

        let small = DeformationField::identity(6, 6).unwrap();
        assert!(matches!(discrete_acceleration(&id, &small, 2), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn material_derivative_examples() {
        let id = DeformationField::identity(5, 5).unwrap();
        let u = ImageGrid::from_fn(5, 5, 1, |x, y, _| x * y).unwrap();
        assert!(material_derivative(&u, &u, &id, 3).unwrap().data().iter().all(|v| v.abs() < 1e-13));
        let shifted = u.map(|v| v + 0.5);
        let z = material_derivative(&u, &shifted, &id, 2).unwrap();
        assert!(z.data().iter().all(|v| (v - 1.0).abs() < 1e-13));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(6, 5, 2, 1, 0.05, &mut rng).unwrap();
        let z = material_derivative(&s.images[0], &s.images[1], &s.deformations[0], 3).unwrap();
        let expected = naive_warp(&s.images[1], &s.deformations[0]).combine(3.0, &s.images[0], -3.0);
        assert!(z.max_abs_diff(&expected) < 1e-12);
        assert!(material_derivative(&constant(6, 6, 0.0), &s.images[1], &s.deformations[0], 3).is_err());
    }

    #[test]
    fn second_material_derivative_examples() {
        let id = DeformationField::identity(5, 5).unwrap();
        let c = constant(5, 5, 0.3);
        assert!(second_material_derivative(&c, &c, &c, &id, &id, 4).unwrap().data().iter().all(|v| v.abs() < 1e-13));
        let w = second_material_derivative(&constant(5, 5, 0.0), &constant(5, 5, 0.25), &constant(5, 5, 1.0), &id, &id, 2)
            .unwrap();
        assert!(w.data().iter().all(|v| (v - 2.0).abs() < 1e-13));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(6, 6, 1, 2, 0.05, &mut rng).unwrap();
        let w = second_material_derivative(&s.images[0], &s.images[1], &s.images[2], &s.deformations[0], &s.deformations[1], 2)
            .unwrap();
        let twice = naive_warp(&naive_warp(&s.images[2], &s.deformations[1]), &s.deformations[0]);
        let once = naive_warp(&s.images[1], &s.deformations[0]);
        let mut expected = twice.combine(4.0, &once, -8.0);
        expected.axpy(4.0, &s.images[0]);
        assert!(w.max_abs_diff(&expected) < 1e-11);
    }

    #[test]
    fn density_examples() {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(elastic_density(&eye), 0.0);
        assert_eq!(accel_density(&[[0.0; 2]; 2]), 0.0);
        assert_eq!(elastic_density(&[[2.0, 0.0], [0.0, 2.0]]), 2.0);
        assert_eq!(accel_density(&[[0.0, 1.0], [-1.0, 0.0]]), 0.0);
        assert_eq!(accel_density(&[[1.0, 2.0], [0.0, 3.0]]), 1.0 + 2.0 + 9.0);
    }

    #[test]
    fn mismatch_examples() {
        let id = DeformationField::identity(4, 4).unwrap();
        let z = constant(4, 4, 0.7);
        assert!(slack_transport_mismatch(&z, &z, &id).unwrap() < 1e-28);
        assert!((slack_transport_mismatch(&constant(4, 4, 0.0), &constant(4, 4, 1.0), &id).unwrap() - 0.5).abs() < 1e-13);
        let misfit = intensity_mismatch(&constant(4, 4, 0.0), &constant(4, 4, 1.0), &constant(4, 4, 0.0), &id, 2).unwrap();
        assert!((misfit - 2.0).abs() < 1e-13);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(5, 5, 2, 1, 0.05, &mut rng).unwrap();
        let zhat = material_derivative(&s.images[0], &s.images[1], &s.deformations[0], 3).unwrap();
        assert!(intensity_mismatch(&s.images[0], &s.images[1], &zhat, &s.deformations[0], 3).unwrap() < 1e-26);
        assert!(slack_transport_mismatch(&z, &constant(5, 5, 0.0), &id).is_err());
    }

    #[test]
    fn constant_path_example_has_energy_ten() {
        let mut cfg = small_config(2);
        cfg.sigma = 1.0;
        cfg.theta = 123.0;
        let state = SplineState {
            images: vec![constant(3, 3, 0.0), constant(3, 3, 0.5), constant(3, 3, 1.0)],
            slacks: vec![constant(3, 3, 1.0), constant(3, 3, 1.0)],
            deformations: vec![DeformationField::identity(3, 3).unwrap(); 2],
        };
        let b = total_energy(&state, &cfg).unwrap();
        let s = b.sums();
        assert!(s.intensity_misfit < 1e-24 && s.slack_transport < 1e-24);
        assert_eq!((s.elastic, s.accel), (0.0, 0.0));
        assert!((b.total - 10.0).abs() < 1e-12);
        assert!((naive_total_energy(&state, &cfg).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn identical_key_frames_give_zero_energy() {
        let u = ImageGrid::from_fn(6, 5, 3, |x, y, c| (x + 2.0 * y + c as f64).sin()).unwrap();
        let keys = KeyFrameSet::new(vec![(0, u.clone()), (2, u.clone()), (4, u)]).unwrap();
        let cfg = SolverConfig { fixed_indices: vec![0, 2, 4], steps: 4, ..SolverConfig::default() };
        let state = SplineState::initialize(&keys, 4).unwrap();
        assert!(state.slacks.iter().all(|z| z.data().iter().all(|v| *v == 0.0)));
        assert!(total_energy(&state, &cfg).unwrap().total < 1e-20);
    }

    #[test]
    fn initialization_interpolates_linearly() {
        let keys = KeyFrameSet::new(vec![(1, constant(4, 4, 1.0)), (3, constant(4, 4, 3.0))]).unwrap();
        let state = SplineState::initialize(&keys, 4).unwrap();
        let values: Vec<f64> = state.images.iter().map(|u| u.get(0, 0, 0)).collect();
        assert_eq!(values, vec![1.0, 1.0, 2.0, 3.0, 3.0]);
        assert_eq!(state.slack(3).get(1, 1, 0), 4.0);
        assert!(SplineState::initialize(&keys, 2).is_err());
    }

    #[test]
    fn matches_naive_evaluator_in_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (mode, boundary) in [
            (Mode::Spline, BoundaryCondition::Natural),
            (Mode::Spline, BoundaryCondition::Periodic),
            (Mode::Geodesic, BoundaryCondition::Natural),
        ] {
            let cfg = SolverConfig { mode, boundary, ..small_config(3) };
            for _ in 0..10 {
                let state = random_state(4, 4, 2, 3, 0.06, &mut rng).unwrap();
                let fast = total_energy(&state, &cfg).unwrap().total;
                let slow = naive_total_energy(&state, &cfg).unwrap();
                assert!((fast - slow).abs() <= 1e-10 * slow.abs(), "{mode:?} {boundary:?}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn geodesic_mode_drops_exactly_the_spline_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let state = random_state(5, 5, 1, 4, 0.05, &mut rng).unwrap();
        let spline = total_energy(&state, &small_config(4)).unwrap();
        let geodesic = total_energy(&state, &SolverConfig { mode: Mode::Geodesic, ..small_config(4) }).unwrap();
        let s = spline.sums();
        assert!((spline.total - s.accel - s.slack_transport - geodesic.total).abs() < 1e-12 * spline.total);
        assert_eq!(spline.elastic, geodesic.elastic);
        assert_eq!(spline.intensity_misfit, geodesic.intensity_misfit);
        assert!(geodesic.accel.iter().chain(&geodesic.slack_transport).all(|v| *v == 0.0));
        assert_eq!(spline.accel[3], 0.0);
    }

    #[test]
    fn transpose_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_config(3);
        let state = random_state(6, 5, 2, 3, 0.05, &mut rng).unwrap();
        let flipped = state.map_grids(|u| u.transpose(), transpose_deformation);
        let (a, b) = (total_energy(&state, &cfg).unwrap(), total_energy(&flipped, &cfg).unwrap());
        assert!((a.total - b.total).abs() < 1e-12 * a.total);
    }

    #[test]
    fn mirror_invariance_of_data_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = small_config(3);
        let state = random_state(6, 5, 1, 3, 0.05, &mut rng).unwrap();
        let mirrored = state.map_grids(|u| u.flip_x(), mirror_deformation);
        let (a, b) = (total_energy(&state, &cfg).unwrap().sums(), total_energy(&mirrored, &cfg).unwrap().sums());
        for (x, y) in [(a.slack_transport, b.slack_transport), (a.slack_norm, b.slack_norm), (a.intensity_misfit, b.intensity_misfit)] {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn breakdown_csv_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = total_energy(&random_state(4, 4, 1, 3, 0.05, &mut rng).unwrap(), &small_config(3)).unwrap();
        let csv = b.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "k,E_WD,E_WA,E_Ds,E_znorm,E_Dg,E_total");
        assert!(lines[4].starts_with("total,"));
        let total: f64 = lines[4].rsplit(',').next().unwrap().parse().unwrap();
        assert!((total - b.total).abs() < 1e-11 * b.total);
    }

    #[test]
    fn config_validation_and_parsing() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { beta: 1.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { fixed_indices: vec![0], ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { fixed_indices: vec![0, 9], ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { boundary: BoundaryCondition::Hermite, fixed_indices: vec![1, 8], ..SolverConfig::default() }
            .validate()
            .is_err());
        let cfg: SolverConfig = serde_json::from_str(r#"{"K": 4, "delta": 0.5, "mode": "geodesic", "fixed_indices": [0, 4]}"#).unwrap();
        assert_eq!((cfg.steps, cfg.delta, cfg.mode), (4, 0.5, Mode::Geodesic));
        assert!(serde_json::from_str::<SolverConfig>(r#"{"unknown": 1}"#).is_err());
        assert_eq!("periodic".parse::<BoundaryCondition>().unwrap(), BoundaryCondition::Periodic);
        assert!("cubic".parse::<Mode>().is_err());
    }

    #[test]
    fn spline_index_bookkeeping() {
        let natural = small_config(4);
        assert_eq!(natural.spline_indices(), 1..4);
        assert_eq!(natural.prev_spline_index(1), None);
        assert_eq!(natural.prev_spline_index(4), Some(3));
        let periodic = SolverConfig { boundary: BoundaryCondition::Periodic, ..small_config(4) };
        assert_eq!(periodic.next_index(4), 1);
        assert_eq!(periodic.prev_spline_index(1), Some(4));
        let geodesic = SolverConfig { mode: Mode::Geodesic, ..small_config(4) };
        assert!(!geodesic.has_spline_term(1));
    }

    proptest! {
        #[test]
        fn every_term_is_nonnegative(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = total_energy(&random_state(4, 5, 1, 3, 0.08, &mut rng).unwrap(), &small_config(3)).unwrap();
            for v in b.elastic.iter().chain(&b.accel).chain(&b.slack_transport).chain(&b.slack_norm).chain(&b.intensity_misfit) {
                prop_assert!(*v >= 0.0);
            }
            prop_assert!(b.total >= 0.0);
        }
    }
}
