//! Grid containers, discrete norms, image file I/O and diagnostic rendering.
//!
//! Grids are sampled on the nodes `x_i = i / (M - 1)`, `y_j = j / (N - 1)` of the
//! unit square. Storage is row-major (`j` is the row) with interleaved channels.

use std::path::Path;

use ::image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Smallest admissible grid extent in either direction.
pub const MIN_EXTENT: usize = 3;

/// Multi-channel real field on an `M x N` grid over `[0, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::from_vec(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width < MIN_EXTENT || height < MIN_EXTENT {
            return Err(Error::GridTooSmall { width, height, min: MIN_EXTENT });
        }
        if channels == 0 {
            return Err(Error::Config("an image needs at least one channel".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(width * height * channels, data.len()));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Builds a grid from `f(x, y, channel)` evaluated at normalized node coordinates.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(f64, f64, usize) -> f64,
    ) -> Result<Self> {
        let mut grid = Self::new(width, height, channels)?;
        for j in 0..height {
            let y = grid.y_coord(j);
            for i in 0..width {
                let x = grid.x_coord(i);
                for ch in 0..channels {
                    let idx = grid.offset(i, j) + ch;
                    grid.data[idx] = f(x, y, ch);
                }
            }
        }
        Ok(grid)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_vec(width, height, channels, vec![value; width * height * channels])
    }

    pub fn zeros_like(&self) -> Self {
        Self { data: vec![0.0; self.data.len()], ..*self }
    }

    pub(crate) fn with_channels(&self, channels: usize) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels,
            data: vec![0.0; self.width * self.height * channels],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Offset of the first channel of node `(i, j)` in [`Self::data`].
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        (j * self.width + i) * self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.data[self.offset(i, j) + ch]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, ch: usize, value: f64) {
        let idx = self.offset(i, j) + ch;
        self.data[idx] = value;
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn x_coord(&self, i: usize) -> f64 {
        i as f64 / (self.width - 1) as f64
    }

    #[inline]
    pub fn y_coord(&self, j: usize) -> f64 {
        j as f64 / (self.height - 1) as f64
    }

    /// Grid spacings `(h_x, h_y)`.
    #[inline]
    pub fn spacing(&self) -> (f64, f64) {
        (1.0 / (self.width - 1) as f64, 1.0 / (self.height - 1) as f64)
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.width || j + 1 == self.height
    }

    pub fn same_grid(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.same_grid(other) && self.channels == other.channels
    }

    pub(crate) fn check_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn check_grid(&self, other: &ImageGrid) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::dims(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    /// Extracts a single channel.
    pub fn channel(&self, ch: usize) -> ImageGrid {
        let mut out = self.with_channels(1);
        for (dst, src) in out.data.iter_mut().zip(self.data.chunks_exact(self.channels)) {
            *dst = src[ch];
        }
        out
    }

    /// Pointwise Euclidean norm over channels.
    pub fn channel_norm(&self) -> ImageGrid {
        let mut out = self.with_channels(1);
        for (dst, src) in out.data.iter_mut().zip(self.data.chunks_exact(self.channels)) {
            *dst = src.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ImageGrid) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> ImageGrid {
        self.map(|v| alpha * v)
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &ImageGrid, beta: f64) -> ImageGrid {
        debug_assert!(self.same_shape(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect();
        Self { data, ..*self }
    }

    /// Unweighted grid inner product.
    pub fn dot(&self, other: &ImageGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `||u||^2` in the averaged discrete `L^2` norm.
    pub fn mean_sq(&self) -> f64 {
        self.sum_sq() / self.num_nodes() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ImageGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Mirror image along the x axis (`i -> M - 1 - i`).
    pub fn flip_x(&self) -> ImageGrid {
        let mut out = self.zeros_like();
        for j in 0..self.height {
            for i in 0..self.width {
                let src = self.offset(self.width - 1 - i, j);
                let dst = self.offset(i, j);
                out.data[dst..dst + self.channels].copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    /// Swaps the roles of `x` and `y`.
    pub fn transpose(&self) -> ImageGrid {
        let mut out = ImageGrid {
            width: self.height,
            height: self.width,
            channels: self.channels,
            data: vec![0.0; self.data.len()],
        };
        for j in 0..self.height {
            for i in 0..self.width {
                let src = self.offset(i, j);
                let dst = out.offset(j, i);
                out.data[dst..dst + self.channels].copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }
}

/// Deformation of the unit square sampled on the grid: channel 0 is `phi^1`,
/// channel 1 is `phi^2`, both in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField(ImageGrid);

impl DeformationField {
    pub fn identity(width: usize, height: usize) -> Result<Self> {
        Ok(Self(ImageGrid::from_fn(width, height, 2, |x, y, ch| if ch == 0 { x } else { y })?))
    }

    /// Wraps a two-channel grid. Boundary nodes are not checked; see
    /// [`Self::boundary_is_identity`].
    pub fn from_grid(grid: ImageGrid) -> Result<Self> {
        if grid.channels() != 2 {
            return Err(Error::dims("2 channels", grid.channels()));
        }
        Ok(Self(grid))
    }

    /// `identity + displacement`.
    pub fn from_displacement(displacement: &ImageGrid) -> Result<Self> {
        let mut phi = Self::identity(displacement.width(), displacement.height())?;
        phi.0.check_shape(displacement)?;
        phi.0.axpy(1.0, displacement);
        Ok(phi)
    }

    /// `phi - identity`.
    pub fn displacement(&self) -> ImageGrid {
        let g = &self.0;
        let mut d = g.clone();
        for j in 0..g.height() {
            let y = g.y_coord(j);
            for i in 0..g.width() {
                let o = g.offset(i, j);
                d.data[o] -= g.x_coord(i);
                d.data[o + 1] -= y;
            }
        }
        d
    }

    #[inline]
    pub fn grid(&self) -> &ImageGrid {
        &self.0
    }

    #[inline]
    pub fn grid_mut(&mut self) -> &mut ImageGrid {
        &mut self.0
    }

    pub fn into_grid(self) -> ImageGrid {
        self.0
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn boundary_is_identity(&self) -> bool {
        let g = &self.0;
        (0..g.height()).all(|j| {
            (0..g.width()).all(|i| {
                !g.is_boundary(i, j) || (g.get(i, j, 0) == g.x_coord(i) && g.get(i, j, 1) == g.y_coord(j))
            })
        })
    }

    /// Resets boundary nodes to the identity.
    pub fn reset_boundary(&mut self) {
        let (w, h) = (self.width(), self.height());
        for j in 0..h {
            for i in 0..w {
                if self.0.is_boundary(i, j) {
                    let (x, y) = (self.0.x_coord(i), self.0.y_coord(j));
                    self.0.set(i, j, 0, x);
                    self.0.set(i, j, 1, y);
                }
            }
        }
    }

    /// Projects every node into `[0, 1]^2`.
    pub fn clamp_to_domain(&mut self) {
        self.0.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

/// Averaged discrete `L^p` norm `((1/MN) sum_nodes ||u(x)||_p^p)^(1/p)`,
/// the inner norm running over channels.
pub fn lp_norm(u: &ImageGrid, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Config(format!("lp_norm needs p >= 1, got {p}")));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("lp_norm input"));
    }
    let sum: f64 = u.data().iter().map(|v| v.abs().powf(p)).sum();
    Ok((sum / u.num_nodes() as f64).powf(1.0 / p))
}

/// Loads a PNG (8/16 bit, gray or RGB) or binary PGM and maps samples to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    let img = ::image::open(path).map_err(|source| Error::ImageRead { path: path.to_owned(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        other => {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    ImageGrid::from_vec(w, h, channels, data)
}

/// Writes an 8-bit PNG (or PGM, by extension). Values are clamped to `[0, 1]` first.
pub fn save_image(u: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let quantize = |v: &f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = u.data().iter().map(quantize).collect();
    let (w, h) = (u.width() as u32, u.height() as u32);
    let dynamic = match u.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer length")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer length")),
        c => {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: format!("cannot store {c}-channel images"),
            })
        }
    };
    dynamic.save(path).map_err(|source| Error::ImageWrite { path: path.to_owned(), source })
}

/// Color-codes a vector field: hue is the direction, value is `|v| / scale`
/// (saturating at 1), saturation is 1.
pub fn render_flow(field: &ImageGrid, scale: f64) -> Result<ImageGrid> {
    if field.channels() != 2 {
        return Err(Error::dims("2 channels", field.channels()));
    }
    if !(scale > 0.0) {
        return Err(Error::Config(format!("flow scale must be positive, got {scale}")));
    }
    let mut out = field.with_channels(3);
    for (dst, v) in out.data.chunks_exact_mut(3).zip(field.data().chunks_exact(2)) {
        let magnitude = v[0].hypot(v[1]);
        let value = (magnitude / scale).min(1.0);
        let hue = v[1].atan2(v[0]).to_degrees().rem_euclid(360.0);
        dst.copy_from_slice(&hsv_to_rgb(hue, 1.0, value));
    }
    Ok(out)
}

pub(crate) fn hsv_to_rgb(hue: f64, saturation: f64, value: f64) -> [f64; 3] {
    let c = value * saturation;
    let h = hue / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = value - c;
    [r + m, g + m, b + m]
}

/// Affine rescale of `[min, max]` to `[0, 1]`. A constant field maps to zero.
pub fn render_scalar(field: &ImageGrid) -> Result<ImageGrid> {
    if field.channels() != 1 {
        return Err(Error::dims("1 channel", field.channels()));
    }
    let lo = field.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(field.zeros_like());
    }
    Ok(field.map(|v| (v - lo) / (hi - lo)))
}
