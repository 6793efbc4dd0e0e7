//! Discrete spatial differential operators on the normalized grid.
//!
//! The Jacobian uses forward differences divided by the grid spacing; on the
//! last column (row) the x (y) difference is zero (Neumann condition).

use crate::error::{Error, Result};
use crate::image::{DeformationField, ImageGrid};
use crate::warp::mirror_index;

/// `m[a][b] = d f^a / d x_b`.
pub type Mat2 = [[f64; 2]; 2];

/// A 2x2 matrix per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    width: usize,
    height: usize,
    data: Vec<Mat2>,
}

impl MatrixField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[[0.0; 2]; 2]; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<Mat2>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims(width * height, data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Mat2] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Mat2] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> &Mat2 {
        &self.data[j * self.width + i]
    }

    pub fn dot(&self, other: &MatrixField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1])
            .sum()
    }
}

#[inline]
pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Forward-difference Jacobian of a two-channel field.
pub fn jacobian(f: &ImageGrid) -> Result<MatrixField> {
    if f.channels() != 2 {
        return Err(Error::dims("2 channels", f.channels()));
    }
    let (w, h) = (f.width(), f.height());
    let (hx, hy) = f.spacing();
    let d = f.data();
    let mut out = MatrixField::zeros(w, h);
    for j in 0..h {
        for i in 0..w {
            let o = (j * w + i) * 2;
            let m = &mut out.data[j * w + i];
            if i + 1 < w {
                m[0][0] = (d[o + 2] - d[o]) / hx;
                m[1][0] = (d[o + 3] - d[o + 1]) / hx;
            }
            if j + 1 < h {
                let below = o + 2 * w;
                m[0][1] = (d[below] - d[o]) / hy;
                m[1][1] = (d[below + 1] - d[o + 1]) / hy;
            }
        }
    }
    Ok(out)
}

/// Exact transpose of [`jacobian`]: a backward-difference negative divergence.
pub fn jacobian_adjoint(g: &MatrixField) -> Result<ImageGrid> {
    let (w, h) = (g.width, g.height);
    let mut out = ImageGrid::new(w, h, 2)?;
    let (hx, hy) = out.spacing();
    let d = out.data_mut();
    for j in 0..h {
        for i in 0..w {
            let o = (j * w + i) * 2;
            let m = &g.data[j * w + i];
            for a in 0..2 {
                let mut v = 0.0;
                if i + 1 < w {
                    v -= m[a][0] / hx;
                }
                if i > 0 {
                    v += g.data[j * w + i - 1][a][0] / hx;
                }
                if j + 1 < h {
                    v -= m[a][1] / hy;
                }
                if j > 0 {
                    v += g.data[(j - 1) * w + i][a][1] / hy;
                }
                d[o + a] = v;
            }
        }
    }
    Ok(out)
}

/// Sobel gradient normalized by `1 / (8 h)` with mirror extension. Output
/// channel `2 ch` is `d/dx`, `2 ch + 1` is `d/dy`.
pub fn sobel_gradient(u: &ImageGrid) -> ImageGrid {
    let (w, h, c) = (u.width(), u.height(), u.channels());
    let (hx, hy) = u.spacing();
    let mut out = u.with_channels(2 * c);
    let src = u.data();
    let at = |i: isize, j: isize, ch: usize| src[(mirror_index(j, h) * w + mirror_index(i, w)) * c + ch];
    let dst = out.data_mut();
    for j in 0..h as isize {
        for i in 0..w as isize {
            let o = (j as usize * w + i as usize) * 2 * c;
            for ch in 0..c {
                let gx = (at(i + 1, j - 1, ch) - at(i - 1, j - 1, ch))
                    + 2.0 * (at(i + 1, j, ch) - at(i - 1, j, ch))
                    + (at(i + 1, j + 1, ch) - at(i - 1, j + 1, ch));
                let gy = (at(i - 1, j + 1, ch) - at(i - 1, j - 1, ch))
                    + 2.0 * (at(i, j + 1, ch) - at(i, j - 1, ch))
                    + (at(i + 1, j + 1, ch) - at(i + 1, j - 1, ch));
                dst[o + 2 * ch] = gx / (8.0 * hx);
                dst[o + 2 * ch + 1] = gy / (8.0 * hy);
            }
        }
    }
    out
}

/// Pointwise `det(jacobian(phi))`.
pub fn det_jacobian(phi: &DeformationField) -> ImageGrid {
    let jac = jacobian(phi.grid()).expect("deformations have two channels");
    let mut out = phi.grid().with_channels(1);
    for (d, m) in out.data_mut().iter_mut().zip(jac.data()) {
        *d = det2(m);
    }
    out
}

/// Smallest Jacobian determinant over the nodes where both forward
/// differences exist (the Neumann column and row are skipped).
pub fn min_det(phi: &DeformationField) -> f64 {
    let det = det_jacobian(phi);
    let (w, h) = (det.width(), det.height());
    let mut m = f64::INFINITY;
    for j in 0..h - 1 {
        for i in 0..w - 1 {
            m = m.min(det.get(i, j, 0));
        }
    }
    m
}
