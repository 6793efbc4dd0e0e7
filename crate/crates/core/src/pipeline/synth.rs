//! Synthetic key frames.

use crate::energy::{KeyFrameSet, Mode, SolverConfig};
use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// `mass * exp(-|x - center|^2 / (2 stddev^2))` sampled at the nodes, in
/// normalized coordinates.
pub fn synth_gaussian(width: usize, height: usize, center: [f64; 2], mass: f64, stddev: f64) -> Result<ImageGrid> {
    if !(stddev > 0.0) {
        return Err(Error::Config(format!("stddev must be positive, got {stddev}")));
    }
    let denom = 2.0 * stddev * stddev;
    ImageGrid::from_fn(width, height, 1, |x, y, _| {
        mass * (-((x - center[0]).powi(2) + (y - center[1]).powi(2)) / denom).exp()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
}

/// Binary shape with a one pixel wide linear ramp at its edge. `center` is in
/// normalized coordinates, `size` (diameter or side length) in pixels. A node
/// at signed distance `s` pixels from the edge gets `clamp(0.5 - s, 0, 1)`.
pub fn synth_shapes(kind: Shape, width: usize, height: usize, center: [f64; 2], size: f64) -> Result<ImageGrid> {
    if !(size >= 0.0) {
        return Err(Error::Config(format!("shape size must be nonnegative, got {size}")));
    }
    let cx = center[0] * (width - 1) as f64;
    let cy = center[1] * (height - 1) as f64;
    let reach = 0.5 * size + 1.0;
    if cx - reach < 0.0 || cy - reach < 0.0 || cx + reach > (width - 1) as f64 || cy + reach > (height - 1) as f64 {
        return Err(Error::ShapeOutOfBounds);
    }
    if size == 0.0 {
        return ImageGrid::new(width, height, 1);
    }
    let half = 0.5 * size;
    ImageGrid::from_fn(width, height, 1, |x, y, _| {
        let dx = x * (width - 1) as f64 - cx;
        let dy = y * (height - 1) as f64 - cy;
        let signed = match kind {
            Shape::Circle => dx.hypot(dy) - half,
            Shape::Square => dx.abs().max(dy.abs()) - half,
        };
        (0.5 - signed).clamp(0.0, 1.0)
    })
}

/// Key frames and solver parameters of a reproducible experiment.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub keyframes: KeyFrameSet,
    pub config: SolverConfig,
}

/// Gaussian centers (normalized), amplitudes and common standard deviation of
/// [`gaussian_benchmark`] at `k = 0, 4, 8`.
pub const GAUSSIAN_CENTERS: [[f64; 2]; 3] = [[0.35, 0.35], [0.6, 0.45], [0.45, 0.65]];
pub const GAUSSIAN_AMPLITUDES: [f64; 3] = [1.0, 0.7, 0.85];
pub const GAUSSIAN_STDDEV: f64 = 0.06;

/// Three Gaussian key frames on a 64x64 grid with `K = 8`, `L = 5`,
/// `I = 250`, `delta = 5e-3`, `sigma = 1`, `theta = 5e-5`.
pub fn gaussian_benchmark(mode: Mode) -> Result<Benchmark> {
    let frames = (0..3)
        .map(|i| Ok((4 * i, synth_gaussian(64, 64, GAUSSIAN_CENTERS[i], GAUSSIAN_AMPLITUDES[i], GAUSSIAN_STDDEV)?)))
        .collect::<Result<Vec<_>>>()?;
    let config = SolverConfig {
        delta: 5e-3,
        sigma: 1.0,
        theta: 5e-5,
        steps: 8,
        levels: 5,
        iterations: 250,
        mode,
        fixed_indices: vec![0, 4, 8],
        ..SolverConfig::default()
    };
    Ok(Benchmark { keyframes: KeyFrameSet::new(frames)?, config })
}

/// Circle diameter and square side (pixels) of [`circle_square_benchmark`].
pub const CIRCLE_DIAMETER: f64 = 44.0;
pub const SQUARE_SIDE: f64 = 22.0;

/// Circle at `k = 0` and the same centered square at `k = 4` and `k = 8` on a
/// 64x64 grid, `K = 8`, `delta = 5e-3`, `sigma = 1`, `theta = 5e-4`.
pub fn circle_square_benchmark(mode: Mode) -> Result<Benchmark> {
    let center = [0.5, 0.5];
    let circle = synth_shapes(Shape::Circle, 64, 64, center, CIRCLE_DIAMETER)?;
    let square = synth_shapes(Shape::Square, 64, 64, center, SQUARE_SIDE)?;
    let config = SolverConfig {
        delta: 5e-3,
        sigma: 1.0,
        theta: 5e-4,
        steps: 8,
        levels: 5,
        iterations: 250,
        mode,
        fixed_indices: vec![0, 4, 8],
        ..SolverConfig::default()
    };
    Ok(Benchmark { keyframes: KeyFrameSet::new(vec![(0, circle), (4, square.clone()), (8, square)])?, config })
}
