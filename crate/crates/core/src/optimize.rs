//! Block gradients, the deformation proximal map and the inertial proximal
//! alternating linearized minimization loop.
//!
//! Each outer iteration sweeps `k = 1..K` and updates, in order, the
//! deformation `phi_k` (gradient step on the regularizers followed by the
//! proximal map of the linearized data terms), the slack `z_k` and, unless it
//! is a key frame, the image `u_k`. Every block step starts from the inertial
//! extrapolation `x + beta (x - x_prev)` and uses a backtracked step size.
//! A step that increases its block objective is retaken from the current
//! iterate; a deformation step that still increases it has its proximal
//! weight doubled until it does not, or is dropped.
//!
//! Internally all block objectives are scaled by the node count `MN`; step
//! sizes and the proximal weight `tau` refer to the scaled objectives.

use log::{debug, warn};

use crate::diffops::{jacobian, jacobian_adjoint, min_det, sobel_gradient, MatrixField};
use crate::energy::{
    accel_term, acceleration_with, elastic_term, misfit_residual, total_energy, BoundaryCondition, EnergyBreakdown,
    SolverConfig, SplineState, TermSums,
};
use crate::error::{Error, Result};
use crate::image::{DeformationField, ImageGrid};
use crate::warp::WarpStencil;

const MAX_DET_HALVINGS: usize = 20;
const MAX_DOUBLINGS: usize = 200;
/// Doublings of the proximal weight before a deformation step is rejected.
const MAX_PROX_DOUBLINGS: usize = 30;
/// Initial and smallest backtracking estimate.
const MIN_LIPSCHITZ: f64 = 1.0;

/// `1/2 (sobel(T[u_tilde, phi_ref]) + sobel(u))` per channel.
pub fn lambda_field(u: &ImageGrid, u_tilde: &ImageGrid, phi_ref: &DeformationField) -> Result<ImageGrid> {
    u.check_shape(u_tilde)?;
    lambda_with(&WarpStencil::new(phi_ref), u, u_tilde)
}

fn lambda_with(stencil: &WarpStencil, u: &ImageGrid, u_tilde: &ImageGrid) -> Result<ImageGrid> {
    let warped = stencil.warp(u_tilde)?;
    Ok(sobel_gradient(&warped).combine(0.5, &sobel_gradient(u), 0.5))
}

/// Linearized data terms of the deformation `phi_k` around `phi_ref`:
/// `r + Lambda . (phi - phi_ref)` for the slack transport and intensity misfit.
#[derive(Debug, Clone)]
pub struct LinearizationPoint {
    pub phi_ref: DeformationField,
    /// `(Lambda^s, r^s)`; absent when the slack transport term is inactive.
    pub transport: Option<(ImageGrid, ImageGrid)>,
    /// `(Lambda^g, r^g)`.
    pub misfit: (ImageGrid, ImageGrid),
    pub transport_weight: f64,
    pub misfit_weight: f64,
}

impl LinearizationPoint {
    pub fn new(k: usize, state: &SplineState, cfg: &SolverConfig, phi_ref: DeformationField) -> Result<Self> {
        let steps = cfg.steps;
        let kf = steps as f64;
        let c = state.channels() as f64;
        let stencil = WarpStencil::new(&phi_ref);
        let transport = if cfg.has_spline_term(k) {
            let (z, z_next) = (state.slack(k), state.slack(cfg.next_index(k)));
            let lambda = lambda_with(&stencil, z, z_next)?;
            let residual = stencil.warp(z_next)?.combine(1.0, z, -1.0);
            Some((lambda, residual))
        } else {
            None
        };
        let (u_prev, u, z) = (state.image(k - 1), state.image(k), state.slack(k));
        let target = u_prev.combine(kf, z, 1.0);
        let lambda = lambda_with(&stencil, &target, &u.scaled(kf))?;
        let residual = misfit_residual(&stencil, u_prev, u, z, steps)?;
        Ok(Self {
            phi_ref,
            transport,
            misfit: (lambda, residual),
            transport_weight: kf / (c * cfg.delta),
            misfit_weight: 1.0 / (c * cfg.theta * kf),
        })
    }

    /// Per-node value of the linearized data terms at `phi` (without the proximal anchor).
    pub fn model_value(&self, node: usize, phi: [f64; 2]) -> f64 {
        let reference = &self.phi_ref.grid().data()[2 * node..2 * node + 2];
        let step = [phi[0] - reference[0], phi[1] - reference[1]];
        let mut value = 0.0;
        let mut add = |(lambda, residual): &(ImageGrid, ImageGrid), weight: f64| {
            let c = residual.channels();
            for j in 0..c {
                let l = &lambda.data()[node * 2 * c + 2 * j..node * 2 * c + 2 * j + 2];
                let v = residual.data()[node * c + j] + l[0] * step[0] + l[1] * step[1];
                value += 0.5 * weight * v * v;
            }
        };
        if let Some(t) = &self.transport {
            add(t, self.transport_weight);
        }
        add(&self.misfit, self.misfit_weight);
        value
    }
}

/// Exact per-node minimizer of
/// `tau/2 |phi - phi_trial|^2 + sum_terms w/2 sum_j (r_j + Lambda_j . (phi - phi_ref))^2`.
/// Boundary nodes are reset to the identity.
pub fn prox_deformation(phi_trial: &DeformationField, tau: f64, lin: &LinearizationPoint) -> Result<DeformationField> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("proximal weight must be positive, got {tau}")));
    }
    phi_trial.grid().check_shape(lin.phi_ref.grid())?;
    let mut out = phi_trial.clone();
    let nodes = phi_trial.grid().num_nodes();
    let reference = lin.phi_ref.grid().data();
    let trial = phi_trial.grid().data();
    let result = out.grid_mut().data_mut();
    for node in 0..nodes {
        let p_ref = [reference[2 * node], reference[2 * node + 1]];
        let mut a = [[tau, 0.0], [0.0, tau]];
        let mut b = [tau * trial[2 * node], tau * trial[2 * node + 1]];
        let mut accumulate = |(lambda, residual): &(ImageGrid, ImageGrid), weight: f64| {
            let c = residual.channels();
            for j in 0..c {
                let l = &lambda.data()[node * 2 * c + 2 * j..node * 2 * c + 2 * j + 2];
                let r = residual.data()[node * c + j] - l[0] * p_ref[0] - l[1] * p_ref[1];
                a[0][0] += weight * l[0] * l[0];
                a[0][1] += weight * l[0] * l[1];
                a[1][1] += weight * l[1] * l[1];
                b[0] -= weight * l[0] * r;
                b[1] -= weight * l[1] * r;
            }
        };
        if let Some(t) = &lin.transport {
            accumulate(t, lin.transport_weight);
        }
        accumulate(&lin.misfit, lin.misfit_weight);
        a[1][0] = a[0][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if !(a[0][0] > 0.0 && det > 0.0) {
            return Err(Error::NotPositiveDefinite(node));
        }
        result[2 * node] = (a[1][1] * b[0] - a[0][1] * b[1]) / det;
        result[2 * node + 1] = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
    }
    out.reset_boundary();
    Ok(out)
}

fn check_index(k: usize, lo: usize, hi: usize) -> Result<()> {
    if k < lo || k > hi {
        return Err(Error::IndexOutOfRange { index: k, range: format!("{lo}..={hi}") });
    }
    Ok(())
}

/// `d/dA mean(W(A))` pulled back through the Jacobian: `J^T (2 sym(A)) / MN`
/// with `A = grad f` (for `W_D` written on the displacement).
fn sym_gradient(f: &ImageGrid, weight: f64) -> Result<ImageGrid> {
    let jac = jacobian(f)?;
    let scale = 2.0 * weight / jac.data().len() as f64;
    let mut dual = MatrixField::zeros(f.width(), f.height());
    for (d, m) in dual.data_mut().iter_mut().zip(jac.data()) {
        let off = 0.5 * (m[0][1] + m[1][0]);
        *d = [[scale * m[0][0], scale * off], [scale * off, scale * m[1][1]]];
    }
    jacobian_adjoint(&dual)
}

fn zero_boundary(g: &mut ImageGrid) {
    let (w, h, c) = (g.width(), g.height(), g.channels());
    for j in 0..h {
        for i in 0..w {
            if g.is_boundary(i, j) {
                let o = g.offset(i, j);
                g.data_mut()[o..o + c].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// `sigma K ||W_D(grad phi_k)|| + 1/K (||W_A(grad a_k)|| + ||W_A(grad a_{k-1})||)` with
/// `phi` substituted for `phi_k`.
pub fn deformation_smooth_energy(k: usize, phi: &DeformationField, state: &SplineState, cfg: &SolverConfig) -> Result<f64> {
    check_index(k, 1, cfg.steps)?;
    let kf = cfg.steps as f64;
    let mut e = cfg.sigma * kf * elastic_term(phi);
    if cfg.has_spline_term(k) {
        let a = acceleration_with(&WarpStencil::new(phi), phi, state.deformation(cfg.next_index(k)), cfg.steps)?;
        e += accel_term(&a) / kf;
    }
    if let Some(prev) = cfg.prev_spline_index(k) {
        let phi_prev = state.deformation(prev);
        let a = acceleration_with(&WarpStencil::new(phi_prev), phi_prev, phi, cfg.steps)?;
        e += accel_term(&a) / kf;
    }
    Ok(e)
}

/// Gradient of [`deformation_smooth_energy`] with respect to the node values of `phi`.
pub fn grad_deformation_smooth_at(
    k: usize,
    phi: &DeformationField,
    state: &SplineState,
    cfg: &SolverConfig,
) -> Result<ImageGrid> {
    check_index(k, 1, cfg.steps)?;
    let kf = cfg.steps as f64;
    let k2 = kf * kf;
    let mut grad = sym_gradient(&phi.displacement(), cfg.sigma * kf)?;
    if cfg.has_spline_term(k) {
        let next = state.deformation(cfg.next_index(k));
        let stencil = WarpStencil::new(phi);
        let a = acceleration_with(&stencil, phi, next, cfg.steps)?;
        let ga = sym_gradient(&a, 1.0 / kf)?;
        // a_k = K^2 (T[d_next, phi] - d): evaluation points and the subtracted displacement
        let slope = stencil.derivative(&next.displacement())?;
        let (g, s, d) = (grad.data_mut(), slope.data(), ga.data());
        for node in 0..d.len() / 2 {
            for comp in 0..2 {
                let weight = d[2 * node + comp];
                g[2 * node] += k2 * weight * s[4 * node + 2 * comp];
                g[2 * node + 1] += k2 * weight * s[4 * node + 2 * comp + 1];
            }
        }
        grad.axpy(-k2, &ga);
    }
    if let Some(prev) = cfg.prev_spline_index(k) {
        let phi_prev = state.deformation(prev);
        let stencil = WarpStencil::new(phi_prev);
        let a = acceleration_with(&stencil, phi_prev, phi, cfg.steps)?;
        let ga = sym_gradient(&a, 1.0 / kf)?;
        grad.axpy(k2, &stencil.warp_adjoint(&ga)?);
    }
    zero_boundary(&mut grad);
    Ok(grad)
}

/// Gradient of the smooth (regularizer) part of the energy with respect to `phi_k`.
pub fn grad_deformation_smooth(k: usize, state: &SplineState, cfg: &SolverConfig) -> Result<ImageGrid> {
    check_index(k, 1, cfg.steps)?;
    grad_deformation_smooth_at(k, state.deformation(k), state, cfg)
}

/// Exact gradient of `(K/delta) D^s_k + 1/(theta K) D^g_k` with respect to `phi_k`.
/// The solver treats these terms through [`prox_deformation`] instead.
pub fn grad_deformation_data(k: usize, state: &SplineState, cfg: &SolverConfig) -> Result<ImageGrid> {
    check_index(k, 1, cfg.steps)?;
    let kf = cfg.steps as f64;
    let phi = state.deformation(k);
    let stencil = WarpStencil::new(phi);
    let c = state.channels();
    let nodes = phi.grid().num_nodes() as f64;
    let mut grad = phi.grid().zeros_like();
    let mut add = |residual: &ImageGrid, slope: &ImageGrid, weight: f64| {
        let (g, r, s) = (grad.data_mut(), residual.data(), slope.data());
        for node in 0..r.len() / c {
            for j in 0..c {
                let w = weight * r[node * c + j];
                g[2 * node] += w * s[node * 2 * c + 2 * j];
                g[2 * node + 1] += w * s[node * 2 * c + 2 * j + 1];
            }
        }
    };
    if cfg.has_spline_term(k) {
        let z_next = state.slack(cfg.next_index(k));
        let residual = stencil.warp(z_next)?.combine(1.0, state.slack(k), -1.0);
        add(&residual, &stencil.derivative(z_next)?, kf / cfg.delta / (c as f64 * nodes));
    }
    let residual = misfit_residual(&stencil, state.image(k - 1), state.image(k), state.slack(k), cfg.steps)?;
    add(&residual, &stencil.derivative(state.image(k))?, kf / (cfg.theta * kf) / (c as f64 * nodes));
    zero_boundary(&mut grad);
    Ok(grad)
}

/// `(K/delta) D^s_k + 1/(theta K) D^g_k` with `phi` substituted for `phi_k`.
pub fn deformation_data_energy(k: usize, phi: &DeformationField, state: &SplineState, cfg: &SolverConfig) -> Result<f64> {
    check_index(k, 1, cfg.steps)?;
    let kf = cfg.steps as f64;
    let c = state.channels() as f64;
    let stencil = WarpStencil::new(phi);
    let mut e = 0.0;
    if cfg.has_spline_term(k) {
        let r = stencil.warp(state.slack(cfg.next_index(k)))?.combine(1.0, state.slack(k), -1.0);
        e += kf / cfg.delta * r.mean_sq() / (2.0 * c);
    }
    let r = misfit_residual(&stencil, state.image(k - 1), state.image(k), state.slack(k), cfg.steps)?;
    e += r.mean_sq() / (2.0 * c) / (cfg.theta * kf);
    Ok(e)
}

/// Every energy term that involves `z_k`, with `z` substituted for it.
pub fn slack_block_energy(k: usize, z: &ImageGrid, state: &SplineState, cfg: &SolverConfig) -> Result<f64> {
    check_index(k, 1, cfg.steps)?;
    let kf = cfg.steps as f64;
    let c = z.channels() as f64;
    let mut e = cfg.sigma / (cfg.delta * kf) * z.mean_sq();
    if cfg.has_spline_term(k) {
        let stencil = WarpStencil::new(state.deformation(k));
        let r = stencil.warp(state.slack(cfg.next_index(k)))?.combine(1.0, z, -1.0);
        e += kf / cfg.delta * r.mean_sq() / (2.0 * c);
    }
    if let Some(prev) = cfg.prev_spline_index(k) {
        let stencil = WarpStencil::new(state.deformation(prev));
        let r = stencil.warp(z)?.combine(1.0, state.slack(prev), -1.0);
        e += kf / cfg.delta * r.mean_sq() / (2.0 * c);
    }
    let stencil = WarpStencil::new(state.deformation(k));
    let r = misfit_residual(&stencil, state.image(k - 1), state.image(k), z, cfg.steps)?;
    e += r.mean_sq() / (2.0 * c) / (cfg.theta * kf);
    Ok(e)
}

pub fn grad_slack_at(k: usize, z: &ImageGrid, state: &SplineState, cfg: &SolverConfig) -> Result<ImageGrid> {
    check_index(k, 1, cfg.steps)?;
    let kf = cfg.steps as f64;
    let scale = 1.0 / (z.channels() as f64 * z.num_nodes() as f64);
    let mut grad = z.scaled(2.0 * cfg.sigma / (cfg.delta * kf) / z.num_nodes() as f64);
    if cfg.has_spline_term(k) {
        let stencil = WarpStencil::new(state.deformation(k));
        let r = stencil.warp(state.slack(cfg.next_index(k)))?.combine(1.0, z, -1.0);
        grad.axpy(-kf / cfg.delta * scale, &r);
    }
    if let Some(prev) = cfg.prev_spline_index(k) {
        let stencil = WarpStencil::new(state.deformation(prev));
        let r = stencil.warp(z)?.combine(1.0, state.slack(prev), -1.0);
        grad.axpy(kf / cfg.delta * scale, &stencil.warp_adjoint(&r)?);
    }
    let stencil = WarpStencil::new(state.deformation(k));
    let r = misfit_residual(&stencil, state.image(k - 1), state.image(k), z, cfg.steps)?;
    grad.axpy(-scale / (cfg.theta * kf), &r);
    Ok(grad)
}

/// Gradient of the energy with respect to `z_k`.
pub fn grad_slack(k: usize, state: &SplineState, cfg: &SolverConfig) -> Result<ImageGrid> {
    check_index(k, 1, cfg.steps)?;
    grad_slack_at(k, state.slack(k), state, cfg)
}

/// Intensity misfit terms that involve `u_k`, with `u` substituted for it.
pub fn image_block_energy(k: usize, u: &ImageGrid, state: &SplineState, cfg: &SolverConfig) -> Result<f64> {
    check_index(k, 0, cfg.steps)?;
    let kf = cfg.steps as f64;
    let c = u.channels() as f64;
    let mut e = 0.0;
    if k >= 1 {
        let stencil = WarpStencil::new(state.deformation(k));
        let r = misfit_residual(&stencil, state.image(k - 1), u, state.slack(k), cfg.steps)?;
        e += r.mean_sq() / (2.0 * c);
    }
    if k < cfg.steps {
        let stencil = WarpStencil::new(state.deformation(k + 1));
        let r = misfit_residual(&stencil, u, state.image(k + 1), state.slack(k + 1), cfg.steps)?;
        e += r.mean_sq() / (2.0 * c);
    }
    Ok(e / (cfg.theta * kf))
}

pub fn grad_image_at(k: usize, u: &ImageGrid, state: &SplineState, cfg: &SolverConfig) -> Result<ImageGrid> {
    check_index(k, 0, cfg.steps)?;
    let kf = cfg.steps as f64;
    let weight = 1.0 / (cfg.theta * kf) / (u.channels() as f64 * u.num_nodes() as f64);
    let mut grad = u.zeros_like();
    if k >= 1 {
        let stencil = WarpStencil::new(state.deformation(k));
        let r = misfit_residual(&stencil, state.image(k - 1), u, state.slack(k), cfg.steps)?;
        grad.axpy(weight * kf, &stencil.warp_adjoint(&r)?);
    }
    if k < cfg.steps {
        let stencil = WarpStencil::new(state.deformation(k + 1));
        let r = misfit_residual(&stencil, u, state.image(k + 1), state.slack(k + 1), cfg.steps)?;
        grad.axpy(-weight * kf, &r);
    }
    Ok(grad)
}

/// Gradient of the energy with respect to a free image `u_k`.
pub fn grad_image(k: usize, state: &SplineState, cfg: &SolverConfig) -> Result<ImageGrid> {
    check_index(k, 0, cfg.steps)?;
    if cfg.is_fixed(k) {
        return Err(Error::ConstrainedIndex(k));
    }
    grad_image_at(k, state.image(k), state, cfg)
}

/// Smallest `L = candidate 2^m` with `f(x - g/L) <= f(x) - |g|^2 / (2L)`.
pub fn backtracking_lipschitz(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    grad: &[f64],
    candidate: f64,
) -> Result<f64> {
    if !(candidate > 0.0) {
        return Err(Error::Config(format!("Lipschitz candidate must be positive, got {candidate}")));
    }
    let f0 = f(x)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite("backtracking objective"));
    }
    let g2: f64 = grad.iter().map(|g| g * g).sum();
    if g2 == 0.0 {
        return Ok(candidate);
    }
    let mut lip = candidate;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..MAX_DOUBLINGS {
        for ((t, xi), gi) in trial.iter_mut().zip(x).zip(grad) {
            *t = xi - gi / lip;
        }
        let ft = f(&trial)?;
        // the tolerance absorbs round-off once the decrease is below machine precision
        if ft.is_finite() && ft <= f0 - g2 / (2.0 * lip) + 1e-13 * f0.abs() {
            return Ok(lip);
        }
        lip *= 2.0;
    }
    Err(Error::NonFinite("backtracking did not find a descent step"))
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub level: usize,
    pub total: f64,
    pub terms: TermSums,
    pub min_det: f64,
    pub lipschitz_phi: f64,
    pub lipschitz_slack: f64,
    pub lipschitz_image: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iter,level,E_total,E_WD,E_WA,E_Ds,E_Dg,E_znorm,min_det,L_phi,L_z,L_u";

    pub fn csv_row(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e},{:.6e}",
            self.iteration,
            self.level,
            self.total,
            t.elastic,
            t.accel,
            t.slack_transport,
            t.intensity_misfit,
            t.slack_norm,
            self.min_det,
            self.lipschitz_phi,
            self.lipschitz_slack,
            self.lipschitz_image
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub initial: EnergyBreakdown,
    pub last: EnergyBreakdown,
    pub records: Vec<IterationRecord>,
    /// Deformation updates accepted after exhausting the determinant damping.
    pub det_violations: usize,
}

/// Options beyond the model configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Level number recorded in the iteration log.
    pub level: usize,
}

/// Backtracking estimates carried from one iteration to the next.
#[derive(Debug, Clone)]
pub struct StepState {
    pub previous: SplineState,
    pub lipschitz_phi: Vec<f64>,
    pub lipschitz_slack: Vec<f64>,
    pub lipschitz_image: Vec<f64>,
}

impl StepState {
    fn new(state: &SplineState) -> Self {
        let k = state.steps();
        Self {
            previous: state.clone(),
            lipschitz_phi: vec![MIN_LIPSCHITZ; k + 1],
            lipschitz_slack: vec![MIN_LIPSCHITZ; k + 1],
            lipschitz_image: vec![MIN_LIPSCHITZ; k + 1],
        }
    }
}

/// Carried estimate halved once, but not below the initial value.
fn candidate(carried: f64) -> f64 {
    (0.5 * carried).max(MIN_LIPSCHITZ)
}

fn extrapolate(current: &ImageGrid, previous: &ImageGrid, beta: f64) -> ImageGrid {
    current.combine(1.0 + beta, previous, -beta)
}

fn grid_from(template: &ImageGrid, data: &[f64]) -> ImageGrid {
    let mut g = template.zeros_like();
    g.data_mut().copy_from_slice(data);
    g
}

/// Runs the configured number of iterations and returns the final iterate.
pub fn ipalm_solve(state: SplineState, cfg: &SolverConfig) -> Result<SplineState> {
    ipalm_solve_with(state, cfg, SolveOptions::default()).map(|(s, _)| s)
}

pub fn ipalm_solve_with(
    mut state: SplineState,
    cfg: &SolverConfig,
    options: SolveOptions,
) -> Result<(SplineState, SolveReport)> {
    cfg.validate()?;
    state.validate(cfg)?;
    let periodic = cfg.boundary == BoundaryCondition::Periodic;
    if periodic {
        state.images[cfg.steps] = state.images[0].clone();
    }
    let initial = total_energy(&state, cfg)?;
    let mut report = SolveReport { initial: initial.clone(), last: initial, ..Default::default() };
    let mut steps = StepState::new(&state);
    for iteration in 1..=cfg.iterations {
        for k in 1..=cfg.steps {
            update_deformation(k, &mut state, &mut steps, cfg, &mut report)
                .map_err(|e| abort(e, options.level, iteration, k))?;
            update_slack(k, &mut state, &mut steps, cfg).map_err(|e| abort(e, options.level, iteration, k))?;
            update_image(k, &mut state, &mut steps, cfg).map_err(|e| abort(e, options.level, iteration, k))?;
            if k == 1 && !periodic && !cfg.is_fixed(0) {
                update_image(0, &mut state, &mut steps, cfg).map_err(|e| abort(e, options.level, iteration, k))?;
            }
        }
        let breakdown = total_energy(&state, cfg)
            .map_err(|_| Error::NonFiniteEnergy { level: options.level, iteration, k: 0 })?;
        let record = IterationRecord {
            iteration,
            level: options.level,
            total: breakdown.total,
            terms: breakdown.sums(),
            min_det: state.deformations.iter().map(min_det).fold(f64::INFINITY, f64::min),
            lipschitz_phi: steps.lipschitz_phi.iter().copied().fold(0.0, f64::max),
            lipschitz_slack: steps.lipschitz_slack.iter().copied().fold(0.0, f64::max),
            lipschitz_image: steps.lipschitz_image.iter().copied().fold(0.0, f64::max),
        };
        debug!("level {} iteration {iteration}: E = {:.6e}", options.level, record.total);
        report.records.push(record);
        report.last = breakdown;
    }
    Ok((state, report))
}

fn abort(e: Error, level: usize, iteration: usize, k: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::NonFiniteEnergy { level, iteration, k },
        other => other,
    }
}

fn is_frozen(k: usize, cfg: &SolverConfig) -> bool {
    cfg.boundary == BoundaryCondition::Hermite && (k == 1 || k == cfg.steps)
}

fn update_deformation(
    k: usize,
    state: &mut SplineState,
    steps: &mut StepState,
    cfg: &SolverConfig,
    report: &mut SolveReport,
) -> Result<()> {
    if is_frozen(k, cfg) {
        return Ok(());
    }
    let current = state.deformation(k).clone();
    let nodes = current.grid().num_nodes() as f64;
    let objective = |phi: &DeformationField, state: &SplineState| -> Result<f64> {
        Ok(deformation_smooth_energy(k, phi, state, cfg)? + deformation_data_energy(k, phi, state, cfg)?)
    };
    let carried = steps.lipschitz_phi[k];
    let step = |from: DeformationField, state: &SplineState, scale: f64| -> Result<(DeformationField, f64)> {
        let grad = grad_deformation_smooth_at(k, &from, state, cfg)?.scaled(nodes);
        let template = from.grid().clone();
        let lip = backtracking_lipschitz(
            |x| {
                let phi = DeformationField::from_grid(grid_from(&template, x))?;
                Ok(nodes * deformation_smooth_energy(k, &phi, state, cfg)?)
            },
            from.grid().data(),
            grad.data(),
            candidate(carried),
        )?;
        let tau = scale * lip;
        let trial = DeformationField::from_grid(from.grid().combine(1.0, &grad, -1.0 / tau))?;
        let lin = LinearizationPoint::new(k, state, cfg, from)?;
        let mut next = prox_deformation(&trial, tau, &lin)?;
        next.clamp_to_domain();
        next.reset_boundary();
        Ok((next, lip))
    };
    let reference = objective(&current, state)?;
    let mut beta_point =
        DeformationField::from_grid(extrapolate(current.grid(), steps.previous.deformation(k).grid(), cfg.beta))?;
    beta_point.reset_boundary();
    let (mut next, lip) = step(beta_point, state, 1.0)?;
    steps.lipschitz_phi[k] = lip;
    if objective(&next, state)? > reference {
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_PROX_DOUBLINGS {
            let (candidate, _) = step(current.clone(), state, scale)?;
            if objective(&candidate, state)? <= reference {
                next = candidate;
                accepted = true;
                break;
            }
            scale *= 2.0;
        }
        if !accepted {
            next = current.clone();
        }
    }

    let mut halvings = 0;
    while min_det(&next) <= cfg.det_floor {
        if halvings == MAX_DET_HALVINGS {
            warn!("deformation {k}: determinant {:.3e} still below floor after damping", min_det(&next));
            report.det_violations += 1;
            break;
        }
        let damped = current.grid().combine(0.5, next.grid(), 0.5);
        next = DeformationField::from_grid(damped)?;
        halvings += 1;
    }
    steps.previous.deformations[k - 1] = current;
    state.deformations[k - 1] = next;
    Ok(())
}

/// Gradient step from `from` with a backtracked step size; returns the new point and `L`.
fn gradient_step(
    from: &ImageGrid,
    carried: f64,
    objective: impl Fn(&ImageGrid) -> Result<f64>,
    gradient: impl Fn(&ImageGrid) -> Result<ImageGrid>,
) -> Result<(ImageGrid, f64)> {
    let grad = gradient(from)?;
    let lip = backtracking_lipschitz(|x| objective(&grid_from(from, x)), from.data(), grad.data(), candidate(carried))?;
    Ok((from.combine(1.0, &grad, -1.0 / lip), lip))
}

/// Takes the inertial step, falling back to a plain step from `current` when the
/// inertial one increases the block objective.
fn restarted_step(
    current: &ImageGrid,
    previous: &ImageGrid,
    carried: f64,
    beta: f64,
    objective: impl Fn(&ImageGrid) -> Result<f64>,
    gradient: impl Fn(&ImageGrid) -> Result<ImageGrid>,
) -> Result<(ImageGrid, f64)> {
    let beta_point = extrapolate(current, previous, beta);
    let (next, lip) = gradient_step(&beta_point, carried, &objective, &gradient)?;
    if beta > 0.0 && objective(&next)? > objective(current)? {
        return gradient_step(current, carried, &objective, &gradient);
    }
    Ok((next, lip))
}

fn update_slack(k: usize, state: &mut SplineState, steps: &mut StepState, cfg: &SolverConfig) -> Result<()> {
    if is_frozen(k, cfg) {
        return Ok(());
    }
    let current = state.slack(k).clone();
    let nodes = current.num_nodes() as f64;
    let (next, lip) = restarted_step(
        &current,
        steps.previous.slack(k),
        steps.lipschitz_slack[k],
        cfg.beta,
        |z| Ok(nodes * slack_block_energy(k, z, state, cfg)?),
        |z| Ok(grad_slack_at(k, z, state, cfg)?.scaled(nodes)),
    )?;
    steps.lipschitz_slack[k] = lip;
    steps.previous.slacks[k - 1] = current;
    state.slacks[k - 1] = next;
    Ok(())
}

/// Image slots sharing one unknown: `u_0` and `u_K` are identified when periodic.
fn image_slots(k: usize, cfg: &SolverConfig) -> Vec<usize> {
    if cfg.boundary == BoundaryCondition::Periodic && (k == 0 || k == cfg.steps) {
        vec![0, cfg.steps]
    } else {
        vec![k]
    }
}

fn update_image(k: usize, state: &mut SplineState, steps: &mut StepState, cfg: &SolverConfig) -> Result<()> {
    let slots = image_slots(k, cfg);
    if slots.iter().any(|&s| cfg.is_fixed(s)) {
        return Ok(());
    }
    let current = state.image(k).clone();
    let nodes = current.num_nodes() as f64;
    let (next, lip) = restarted_step(
        &current,
        &steps.previous.images[k],
        steps.lipschitz_image[k],
        cfg.beta,
        |u| {
            let mut e = 0.0;
            for &s in &slots {
                e += image_block_energy(s, u, state, cfg)?;
            }
            Ok(nodes * e)
        },
        |u| {
            let mut grad = u.zeros_like();
            for &s in &slots {
                grad.axpy(nodes, &grad_image_at(s, u, state, cfg)?);
            }
            Ok(grad)
        },
    )?;
    steps.lipschitz_image[k] = lip;
    for &s in &slots {
        steps.previous.images[s] = current.clone();
        state.images[s] = next.clone();
    }
    Ok(())
}
