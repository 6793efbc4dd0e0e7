//! Slow reference implementations for the test suites.
//!
//! Nothing here calls into the optimized operators in [`crate::warp`],
//! [`crate::diffops`], [`crate::energy`] or [`crate::optimize`]; only the data
//! types are shared. Performance is irrelevant.

use rand::Rng;

use crate::energy::{SolverConfig, SplineState};
use crate::error::{Error, Result};
use crate::image::{DeformationField, ImageGrid};

fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    match a {
        a if a < 1.0 => (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0,
        a if a < 2.0 => (2.0 - a).powi(3) / 6.0,
        _ => 0.0,
    }
}

/// Reflection of any integer into `0..n` by even periodic extension.
fn reflect(i: i64, n: usize) -> usize {
    let period = 2 * (n as i64 - 1);
    let r = i.rem_euclid(period);
    (if r > n as i64 - 1 { period - r } else { r }) as usize
}

/// Gaussian elimination with partial pivoting on a dense system.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                let (upper, lower) = a.split_at_mut(row);
                for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *x -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn interpolation_matrix_1d(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (r, row) in m.iter_mut().enumerate() {
        for d in -1i64..=1 {
            row[reflect(r as i64 + d, n)] += bspline3(d as f64);
        }
    }
    m
}

/// B-spline coefficients from a dense solve of the full 2-d interpolation system.
pub fn dense_prefilter(u: &ImageGrid) -> ImageGrid {
    let (w, h, c) = (u.width(), u.height(), u.channels());
    let (bx, by) = (interpolation_matrix_1d(w), interpolation_matrix_1d(h));
    let n = w * h;
    let mut a = vec![vec![0.0; n]; n];
    for j in 0..h {
        for i in 0..w {
            for jj in 0..h {
                for ii in 0..w {
                    a[j * w + i][jj * w + ii] = by[j][jj] * bx[i][ii];
                }
            }
        }
    }
    let mut out = u.zeros_like();
    for ch in 0..c {
        let rhs: Vec<f64> = (0..n).map(|p| u.data()[p * c + ch]).collect();
        let coef = dense_solve(a.clone(), rhs);
        for (p, v) in coef.into_iter().enumerate() {
            out.data_mut()[p * c + ch] = v;
        }
    }
    out
}

/// Double-sum evaluation of the cubic B-spline pullback.
pub fn naive_warp(u: &ImageGrid, phi: &DeformationField) -> ImageGrid {
    let coef = dense_prefilter(u);
    let (w, h, c) = (u.width(), u.height(), u.channels());
    let mut out = u.zeros_like();
    for j in 0..h {
        for i in 0..w {
            let p = (phi.grid().get(i, j, 0) * (w - 1) as f64).clamp(0.0, (w - 1) as f64);
            let q = (phi.grid().get(i, j, 1) * (h - 1) as f64).clamp(0.0, (h - 1) as f64);
            for ch in 0..c {
                let mut acc = 0.0;
                for jj in -3..h as i64 + 3 {
                    let sy = bspline3(q - jj as f64);
                    if sy == 0.0 {
                        continue;
                    }
                    for ii in -3..w as i64 + 3 {
                        let sx = bspline3(p - ii as f64);
                        if sx != 0.0 {
                            acc += sx * sy * coef.get(reflect(ii, w), reflect(jj, h), ch);
                        }
                    }
                }
                out.set(i, j, ch, acc);
            }
        }
    }
    out
}

/// Dense matrix of the forward-difference Jacobian. Rows are ordered
/// `(node, component a, direction b)`, columns `(node, component)`.
pub fn dense_jacobian_matrix(w: usize, h: usize) -> Vec<Vec<f64>> {
    let (hx, hy) = (1.0 / (w - 1) as f64, 1.0 / (h - 1) as f64);
    let mut m = vec![vec![0.0; 2 * w * h]; 4 * w * h];
    for j in 0..h {
        for i in 0..w {
            let node = j * w + i;
            for a in 0..2 {
                if i + 1 < w {
                    m[node * 4 + a * 2][(node + 1) * 2 + a] += 1.0 / hx;
                    m[node * 4 + a * 2][node * 2 + a] -= 1.0 / hx;
                }
                if j + 1 < h {
                    m[node * 4 + a * 2 + 1][(node + w) * 2 + a] += 1.0 / hy;
                    m[node * 4 + a * 2 + 1][node * 2 + a] -= 1.0 / hy;
                }
            }
        }
    }
    m
}

/// Direct 3x3 convolution with the normalized Sobel kernels.
pub fn naive_sobel(u: &ImageGrid) -> ImageGrid {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let (w, h, c) = (u.width(), u.height(), u.channels());
    let (hx, hy) = (1.0 / (w - 1) as f64, 1.0 / (h - 1) as f64);
    let mut out = ImageGrid::new(w, h, 2 * c).unwrap();
    for j in 0..h {
        for i in 0..w {
            for ch in 0..c {
                let (mut gx, mut gy) = (0.0, 0.0);
                for (dj, row) in KX.iter().enumerate() {
                    for (di, &k) in row.iter().enumerate() {
                        let ii = reflect(i as i64 + di as i64 - 1, w);
                        let jj = reflect(j as i64 + dj as i64 - 1, h);
                        gx += k * u.get(ii, jj, ch);
                        // the y kernel is the transpose of the x kernel
                        let iy = reflect(i as i64 + dj as i64 - 1, w);
                        let jy = reflect(j as i64 + di as i64 - 1, h);
                        gy += k * u.get(iy, jy, ch);
                    }
                }
                out.set(i, j, 2 * ch, gx / (8.0 * hx));
                out.set(i, j, 2 * ch + 1, gy / (8.0 * hy));
            }
        }
    }
    out
}

fn forward_diff(f: &ImageGrid, i: usize, j: usize, comp: usize) -> [f64; 2] {
    let (w, h) = (f.width(), f.height());
    let dx = if i + 1 < w { (f.get(i + 1, j, comp) - f.get(i, j, comp)) * (w - 1) as f64 } else { 0.0 };
    let dy = if j + 1 < h { (f.get(i, j + 1, comp) - f.get(i, j, comp)) * (h - 1) as f64 } else { 0.0 };
    [dx, dy]
}

fn displacement(phi: &DeformationField) -> ImageGrid {
    let g = phi.grid();
    let mut d = g.clone();
    for j in 0..g.height() {
        for i in 0..g.width() {
            d.set(i, j, 0, g.get(i, j, 0) - i as f64 / (g.width() - 1) as f64);
            d.set(i, j, 1, g.get(i, j, 1) - j as f64 / (g.height() - 1) as f64);
        }
    }
    d
}

/// Mean over nodes of `|sym(grad f)|^2`; applied to displacements this is `W_D`.
fn mean_sym_sq(f: &ImageGrid) -> f64 {
    let (w, h) = (f.width(), f.height());
    let mut sum = 0.0;
    for j in 0..h {
        for i in 0..w {
            let g0 = forward_diff(f, i, j, 0);
            let g1 = forward_diff(f, i, j, 1);
            let off = 0.5 * (g0[1] + g1[0]);
            sum += g0[0] * g0[0] + g1[1] * g1[1] + 2.0 * off * off;
        }
    }
    sum / (w * h) as f64
}

fn mean_sq_diff(a: &ImageGrid, b: &ImageGrid, scale_a: f64, scale_b: f64, extra: Option<&ImageGrid>) -> f64 {
    let mut sum = 0.0;
    for p in 0..a.data().len() {
        let mut r = scale_a * a.data()[p] - scale_b * b.data()[p];
        if let Some(e) = extra {
            r -= e.data()[p];
        }
        sum += r * r;
    }
    sum / a.num_nodes() as f64
}

/// Term-by-term evaluation of the total energy with scalar loops.
pub fn naive_total_energy(state: &SplineState, cfg: &SolverConfig) -> Result<f64> {
    state.validate(cfg)?;
    let kk = cfg.steps;
    let kf = kk as f64;
    let c = state.images[0].channels() as f64;
    let spline_upper = match (cfg.mode, cfg.boundary) {
        (crate::energy::Mode::Geodesic, _) => 0,
        (_, crate::energy::BoundaryCondition::Periodic) => kk,
        _ => kk - 1,
    };
    let mut total = 0.0;
    for k in 1..=spline_upper {
        let next = if k == kk { 1 } else { k + 1 };
        let phi = &state.deformations[k - 1];
        let d_next = displacement(&state.deformations[next - 1]);
        let warped = naive_warp(&d_next, phi);
        let d = displacement(phi);
        let mut a = d.clone();
        for p in 0..a.data().len() {
            a.data_mut()[p] = kf * kf * (warped.data()[p] - d.data()[p]);
        }
        total += mean_sym_sq(&a) / kf;

        let z_warp = naive_warp(&state.slacks[next - 1], phi);
        total += kf / cfg.delta * mean_sq_diff(&z_warp, &state.slacks[k - 1], 1.0, 1.0, None) / (2.0 * c);
    }
    for k in 1..=kk {
        let phi = &state.deformations[k - 1];
        total += cfg.sigma * kf * mean_sym_sq(&displacement(phi));
        total += cfg.sigma / (cfg.delta * kf) * state.slacks[k - 1].data().iter().map(|v| v * v).sum::<f64>()
            / state.slacks[k - 1].num_nodes() as f64;
        let u_warp = naive_warp(&state.images[k], phi);
        total += mean_sq_diff(&u_warp, &state.images[k - 1], kf, kf, Some(&state.slacks[k - 1])) / (2.0 * c)
            / (cfg.theta * kf);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("naive total energy"));
    }
    Ok(total)
}

/// Random images and slacks in `[-1, 1]` with deformations `identity + amp * bump`
/// where the bump is a random smooth field vanishing on the boundary. With
/// `amp` below about `0.1` the deformations stay inside the square.
pub fn random_state(width: usize, height: usize, channels: usize, steps: usize, amp: f64, rng: &mut impl Rng) -> Result<SplineState> {
    let grid = |c: usize, rng: &mut dyn FnMut() -> f64| ImageGrid::from_fn(width, height, c, |_, _, _| rng());
    let mut uniform = || rng.random_range(-1.0..1.0);
    let images = (0..=steps).map(|_| grid(channels, &mut uniform)).collect::<Result<Vec<_>>>()?;
    let slacks = (0..steps).map(|_| grid(channels, &mut uniform)).collect::<Result<Vec<_>>>()?;
    let mut deformations = Vec::with_capacity(steps);
    for _ in 0..steps {
        let p: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let disp = ImageGrid::from_fn(width, height, 2, |x, y, ch| {
            let bump = (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
            let wave = if ch == 0 { (3.0 * y + p[0]).sin() + p[2] * x } else { (3.0 * x + p[1]).cos() + p[3] * y };
            amp * bump * wave
        })?;
        deformations.push(DeformationField::from_displacement(&disp)?);
    }
    Ok(SplineState { images, slacks, deformations })
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference probe"));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest relative violation of `<A u, v> = <u, A* v>` over random pairs.
pub fn adjoint_check(
    forward: impl Fn(&[f64]) -> Vec<f64>,
    adjoint: impl Fn(&[f64]) -> Vec<f64>,
    input_len: usize,
    output_len: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let norm = |a: &[f64]| dot(a, a).sqrt();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u: Vec<f64> = (0..input_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..output_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (au, atv) = (forward(&u), adjoint(&v));
        let denom = norm(&au) * norm(&v) + norm(&u) * norm(&atv);
        if denom > 0.0 {
            worst = worst.max((dot(&au, &v) - dot(&u, &atv)).abs() / denom);
        }
    }
    worst
}

/// Natural cubic spline from the dense `4 (n - 1)` system of interpolation,
/// continuity and end conditions, evaluated at `eval`.
pub fn dense_natural_spline(times: &[f64], values: &[f64], eval: &[f64]) -> Vec<f64> {
    let segs = times.len() - 1;
    let n = 4 * segs;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    let mut row = 0;
    // segment s: y = c0 + c1 t + c2 t^2 + c3 t^3 with t = x - times[s]
    for s in 0..segs {
        let len = times[s + 1] - times[s];
        a[row][4 * s] = 1.0;
        b[row] = values[s];
        row += 1;
        for p in 0..4 {
            a[row][4 * s + p] = len.powi(p as i32);
        }
        b[row] = values[s + 1];
        row += 1;
    }
    for s in 0..segs - 1 {
        let len = times[s + 1] - times[s];
        // first derivative continuity
        a[row][4 * s + 1] = 1.0;
        a[row][4 * s + 2] = 2.0 * len;
        a[row][4 * s + 3] = 3.0 * len * len;
        a[row][4 * (s + 1) + 1] = -1.0;
        row += 1;
        // second derivative continuity
        a[row][4 * s + 2] = 2.0;
        a[row][4 * s + 3] = 6.0 * len;
        a[row][4 * (s + 1) + 2] = -2.0;
        row += 1;
    }
    a[row][2] = 2.0;
    row += 1;
    let last = times[segs] - times[segs - 1];
    a[row][4 * (segs - 1) + 2] = 2.0;
    a[row][4 * (segs - 1) + 3] = 6.0 * last;
    let coef = dense_solve(a, b);
    eval.iter()
        .map(|&x| {
            let s = (0..segs).rev().find(|&s| x >= times[s]).unwrap_or(0);
            let t = x - times[s];
            (0..4).map(|p| coef[4 * s + p] * t.powi(p as i32)).sum()
        })
        .collect()
}

/// Pattern search on a shrinking grid; adequate for smooth convex functions of two variables.
pub fn brute_force_min_2d(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], radius: f64) -> [f64; 2] {
    let mut best = start;
    let mut best_val = f(best);
    let mut r = radius;
    for _ in 0..200 {
        let centre = best;
        for a in -5..=5 {
            for b in -5..=5 {
                let p = [centre[0] + r * a as f64 / 5.0, centre[1] + r * b as f64 / 5.0];
                let v = f(p);
                if v < best_val {
                    best_val = v;
                    best = p;
                }
            }
        }
        if best == centre {
            r *= 0.5;
        }
        if r < 1e-14 * (1.0 + best[0].abs() + best[1].abs()) {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fd_gradient_of_quadratic_and_linear() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[0];
        let g = fd_gradient(f, &[0.7, -1.2], 1e-4).unwrap();
        assert!((g[0] - (6.0 * 0.7 + 2.4 + 1.0)).abs() < 1e-10);
        assert!((g[1] - (-1.4 - 1.2)).abs() < 1e-10);
        let g = fd_gradient(|x: &[f64]| 2.0 * x[0] - 5.0 * x[1], &[3.0, 4.0], 1e-3).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-10 && (g[1] + 5.0).abs() < 1e-10);
        assert!(fd_gradient(|_: &[f64]| f64::NAN, &[0.0], 1e-3).is_err());
    }

    #[test]
    fn adjoint_check_of_identity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(adjoint_check(|u| u.to_vec(), |v| v.to_vec(), 10, 10, 5, &mut rng), 0.0);
        // a wrong adjoint is detected
        let err = adjoint_check(|u| u.to_vec(), |v| v.iter().map(|x| 2.0 * x).collect(), 10, 10, 5, &mut rng);
        assert!(err > 1e-3);
    }

    #[test]
    fn dense_spline_is_natural_and_interpolating() {
        let t = [0.0, 0.3, 1.0, 1.4];
        let y = [1.0, -1.0, 0.5, 2.0];
        let at = dense_natural_spline(&t, &y, &t);
        for (a, b) in at.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        // collinear data gives the line
        let line = dense_natural_spline(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], &[0.5, 1.7]);
        assert!((line[0] - 2.0).abs() < 1e-12 && (line[1] - 4.4).abs() < 1e-12);
    }

    #[test]
    fn brute_force_finds_quadratic_minimum() {
        let f = |p: [f64; 2]| (p[0] - 0.3).powi(2) + 2.0 * (p[1] + 0.1).powi(2) + 0.5 * (p[0] - 0.3) * (p[1] + 0.1);
        let m = brute_force_min_2d(f, [0.0, 0.0], 1.0);
        assert!((m[0] - 0.3).abs() < 1e-9 && (m[1] + 0.1).abs() < 1e-9);
    }
}
