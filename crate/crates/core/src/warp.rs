//! Cubic B-spline warping.
//!
//! `T[u, phi](x) = sum_nodes s(phi^1(x) (M-1) - i) s(phi^2(x) (N-1) - j) c(i, j)` where
//! `c` are the interpolating B-spline coefficients of `u` under whole-sample
//! mirror extension. Evaluation points outside the unit square are clamped.
//!
//! The operator factors as `T = E_phi P` with `P` the prefilter and `E_phi` the
//! sparse evaluation matrix, so the adjoint in the image argument is
//! `P^T E_phi^T` (splatting followed by the transposed prefilter).

use crate::error::{Error, Result};
use crate::image::{DeformationField, ImageGrid};

/// Cubic B-spline kernel, argument in grid-index units.
#[inline]
pub fn cubic_kernel(t: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a <= 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

#[inline]
pub fn cubic_kernel_derivative(t: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 {
        -2.0 * t + 1.5 * t * a
    } else if a <= 2.0 {
        let b = 2.0 - a;
        -0.5 * t.signum() * b * b
    } else {
        0.0
    }
}

/// Whole-sample mirror reflection of an integer index into `0..n`.
#[inline]
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    let last = n as isize - 1;
    let r = if i < 0 {
        -i
    } else if i > last {
        2 * last - i
    } else {
        i
    };
    debug_assert!((0..=last).contains(&r), "index {i} reflects outside 0..{n}");
    r as usize
}

/// LU factors of a tridiagonal matrix (Thomas algorithm without pivoting).
#[derive(Debug, Clone)]
struct Tridiagonal {
    lower: Vec<f64>,
    #[cfg(test)]
    upper: Vec<f64>,
    // reciprocal pivots
    inv_pivot: Vec<f64>,
    // eliminated upper diagonal
    upper_mod: Vec<f64>,
}

impl Tridiagonal {
    fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = diag.len();
        let mut inv_pivot = vec![0.0; n];
        let mut upper_mod = vec![0.0; n];
        let mut pivot = diag[0];
        inv_pivot[0] = 1.0 / pivot;
        for i in 1..n {
            upper_mod[i - 1] = upper[i - 1] * inv_pivot[i - 1];
            pivot = diag[i] - lower[i] * upper_mod[i - 1];
            inv_pivot[i] = 1.0 / pivot;
        }
        Self {
            lower,
            #[cfg(test)]
            upper,
            inv_pivot,
            upper_mod,
        }
    }

    fn solve(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper_mod[i] * x[i + 1];
        }
    }

    #[cfg(test)]
    fn apply(&self, x: &[f64], diag: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut v = diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < x.len() {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }
}

/// One-dimensional interpolation matrix of the cubic B-spline at the nodes
/// under mirror extension, and its transpose.
#[derive(Debug, Clone)]
struct MirrorInterpolation {
    forward: Tridiagonal,
    transposed: Tridiagonal,
}

impl MirrorInterpolation {
    fn new(n: usize) -> Self {
        let (side, centre) = (1.0 / 6.0, 2.0 / 3.0);
        let diag = vec![centre; n];
        let mut lower = vec![side; n];
        let mut upper = vec![side; n];
        lower[0] = 0.0;
        upper[n - 1] = 0.0;
        // reflected neighbours fold onto the first interior node
        let mut fwd_upper = upper.clone();
        let mut fwd_lower = lower.clone();
        fwd_upper[0] = 2.0 * side;
        fwd_lower[n - 1] = 2.0 * side;
        // transposition swaps lower[i+1] <-> upper[i]
        let mut t_lower = vec![0.0; n];
        let mut t_upper = vec![0.0; n];
        t_lower[1..].copy_from_slice(&fwd_upper[..n - 1]);
        t_upper[..n - 1].copy_from_slice(&fwd_lower[1..]);
        Self {
            forward: Tridiagonal::new(fwd_lower, diag.clone(), fwd_upper),
            transposed: Tridiagonal::new(t_lower, diag, t_upper),
        }
    }
}

/// Runs `solve` on every row and every column of every channel.
fn separable_solve(u: &mut ImageGrid, solve_x: &Tridiagonal, solve_y: &Tridiagonal) {
    let (w, h, c) = (u.width(), u.height(), u.channels());
    let data = u.data_mut();
    let mut line = vec![0.0; w.max(h)];
    for ch in 0..c {
        for j in 0..h {
            let row = &mut line[..w];
            for (i, v) in row.iter_mut().enumerate() {
                *v = data[(j * w + i) * c + ch];
            }
            solve_x.solve(row);
            for (i, v) in row.iter().enumerate() {
                data[(j * w + i) * c + ch] = *v;
            }
        }
        for i in 0..w {
            let col = &mut line[..h];
            for (j, v) in col.iter_mut().enumerate() {
                *v = data[(j * w + i) * c + ch];
            }
            solve_y.solve(col);
            for (j, v) in col.iter().enumerate() {
                data[(j * w + i) * c + ch] = *v;
            }
        }
    }
}

/// Per-channel interpolating B-spline coefficients of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCoefficients(ImageGrid);

impl SplineCoefficients {
    pub fn grid(&self) -> &ImageGrid {
        &self.0
    }

    /// Evaluates the spline back at the grid nodes.
    pub fn reconstruct(&self) -> ImageGrid {
        let c = &self.0;
        let mut out = c.zeros_like();
        let (w, h) = (c.width(), c.height());
        for j in 0..h {
            for i in 0..w {
                for ch in 0..c.channels() {
                    let mut acc = 0.0;
                    for dj in -1isize..=1 {
                        let wy = cubic_kernel(dj as f64);
                        let jj = mirror_index(j as isize + dj, h);
                        for di in -1isize..=1 {
                            let ii = mirror_index(i as isize + di, w);
                            acc += wy * cubic_kernel(di as f64) * c.get(ii, jj, ch);
                        }
                    }
                    out.set(i, j, ch, acc);
                }
            }
        }
        out
    }
}

/// Interpolating prefilter: solves for coefficients whose spline passes
/// through the samples at every node.
pub fn prefilter(u: &ImageGrid) -> SplineCoefficients {
    let (fx, fy) = (MirrorInterpolation::new(u.width()), MirrorInterpolation::new(u.height()));
    let mut c = u.clone();
    separable_solve(&mut c, &fx.forward, &fy.forward);
    SplineCoefficients(c)
}

/// Transpose of [`prefilter`] as a linear map.
pub fn prefilter_adjoint(r: &ImageGrid) -> ImageGrid {
    let (fx, fy) = (MirrorInterpolation::new(r.width()), MirrorInterpolation::new(r.height()));
    let mut out = r.clone();
    separable_solve(&mut out, &fx.transposed, &fy.transposed);
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct Tap {
    ix: [u32; 4],
    iy: [u32; 4],
    wx: [f64; 4],
    wy: [f64; 4],
    // kernel derivatives per unit of normalized coordinate
    dwx: [f64; 4],
    dwy: [f64; 4],
}

fn axis_taps(coord: f64, n: usize) -> ([u32; 4], [f64; 4], [f64; 4]) {
    let scale = (n - 1) as f64;
    let raw = coord * scale;
    let clamped = raw.clamp(0.0, scale);
    // the derivative of the clamp vanishes outside the domain
    let inside = raw == clamped;
    let base = clamped.floor() as isize;
    let mut idx = [0u32; 4];
    let mut w = [0.0; 4];
    let mut dw = [0.0; 4];
    for a in 0..4 {
        let node = base - 1 + a as isize;
        let t = clamped - node as f64;
        idx[a] = mirror_index(node, n) as u32;
        w[a] = cubic_kernel(t);
        if inside {
            dw[a] = cubic_kernel_derivative(t) * scale;
        }
    }
    (idx, w, dw)
}

/// Precomputed interpolation weights of a deformation.
#[derive(Debug, Clone)]
pub struct WarpStencil {
    width: usize,
    height: usize,
    taps: Vec<Tap>,
}

impl WarpStencil {
    pub fn new(phi: &DeformationField) -> Self {
        let g = phi.grid();
        let (w, h) = (g.width(), g.height());
        let taps = g
            .data()
            .chunks_exact(2)
            .map(|p| {
                let (ix, wx, dwx) = axis_taps(p[0], w);
                let (iy, wy, dwy) = axis_taps(p[1], h);
                Tap { ix, iy, wx, wy, dwx, dwy }
            })
            .collect();
        Self { width: w, height: h, taps }
    }

    fn check(&self, u: &ImageGrid) -> Result<()> {
        if u.width() != self.width || u.height() != self.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", u.width(), u.height()),
            ));
        }
        Ok(())
    }

    /// Evaluates the spline with the given coefficients at the deformed points.
    pub fn evaluate(&self, coeffs: &SplineCoefficients) -> ImageGrid {
        let c = coeffs.grid();
        let ch = c.channels();
        let src = c.data();
        let mut out = c.zeros_like();
        let w = self.width;
        for (dst, tap) in out.data_mut().chunks_exact_mut(ch).zip(&self.taps) {
            for b in 0..4 {
                let row = tap.iy[b] as usize * w;
                for a in 0..4 {
                    let weight = tap.wy[b] * tap.wx[a];
                    let o = (row + tap.ix[a] as usize) * ch;
                    for (d, s) in dst.iter_mut().zip(&src[o..o + ch]) {
                        *d += weight * s;
                    }
                }
            }
        }
        out
    }

    /// Transpose of [`Self::evaluate`]: scatters `r` into coefficient space.
    pub fn splat(&self, r: &ImageGrid) -> ImageGrid {
        let ch = r.channels();
        let mut out = r.zeros_like();
        let w = self.width;
        let acc = out.data_mut();
        for (src, tap) in r.data().chunks_exact(ch).zip(&self.taps) {
            for b in 0..4 {
                let row = tap.iy[b] as usize * w;
                for a in 0..4 {
                    let weight = tap.wy[b] * tap.wx[a];
                    let o = (row + tap.ix[a] as usize) * ch;
                    for (d, s) in acc[o..o + ch].iter_mut().zip(src) {
                        *d += weight * s;
                    }
                }
            }
        }
        out
    }

    /// Gradient of the interpolant at the deformed points, per unit of
    /// normalized coordinate. Output channel `2 ch` is `d/dx`, `2 ch + 1` is `d/dy`.
    pub fn point_derivative(&self, coeffs: &SplineCoefficients) -> ImageGrid {
        let c = coeffs.grid();
        let ch = c.channels();
        let src = c.data();
        let mut out = c.with_channels(2 * ch);
        let w = self.width;
        for (dst, tap) in out.data_mut().chunks_exact_mut(2 * ch).zip(&self.taps) {
            for b in 0..4 {
                let row = tap.iy[b] as usize * w;
                for a in 0..4 {
                    let gx = tap.wy[b] * tap.dwx[a];
                    let gy = tap.dwy[b] * tap.wx[a];
                    let o = (row + tap.ix[a] as usize) * ch;
                    for (k, s) in src[o..o + ch].iter().enumerate() {
                        dst[2 * k] += gx * s;
                        dst[2 * k + 1] += gy * s;
                    }
                }
            }
        }
        out
    }

    pub fn warp(&self, u: &ImageGrid) -> Result<ImageGrid> {
        self.check(u)?;
        Ok(self.evaluate(&prefilter(u)))
    }

    pub fn warp_adjoint(&self, r: &ImageGrid) -> Result<ImageGrid> {
        self.check(r)?;
        Ok(prefilter_adjoint(&self.splat(r)))
    }

    pub fn derivative(&self, u: &ImageGrid) -> Result<ImageGrid> {
        self.check(u)?;
        Ok(self.point_derivative(&prefilter(u)))
    }
}

/// Pullback `T[u, phi]` of every channel of `u`.
pub fn warp(u: &ImageGrid, phi: &DeformationField) -> Result<ImageGrid> {
    WarpStencil::new(phi).warp(u)
}

/// Adjoint of `u -> warp(u, phi)` under the unweighted grid inner product.
pub fn warp_adjoint(r: &ImageGrid, phi: &DeformationField) -> Result<ImageGrid> {
    WarpStencil::new(phi).warp_adjoint(r)
}

/// Derivative of `warp(u, phi)` with respect to the evaluation points.
pub fn warp_point_derivative(u: &ImageGrid, phi: &DeformationField) -> Result<ImageGrid> {
    WarpStencil::new(phi).derivative(u)
}
