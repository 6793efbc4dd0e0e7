//! Deterministic inputs shared by the criterion benchmarks.

use std::f64::consts::PI;

use metaspline::pipeline::synth::{GAUSSIAN_AMPLITUDES, GAUSSIAN_CENTERS, GAUSSIAN_STDDEV};
use metaspline::pipeline::synth_gaussian;
use metaspline::{DeformationField, ImageGrid, KeyFrameSet, SolverConfig, SplineState};

/// Three-Gaussian key frames at `0, K/2, K` on a `size x size` grid.
pub fn gaussian_keyframes(size: usize, steps: usize) -> KeyFrameSet {
    let frames = (0..3)
        .map(|i| {
            let u = synth_gaussian(size, size, GAUSSIAN_CENTERS[i], GAUSSIAN_AMPLITUDES[i], GAUSSIAN_STDDEV).unwrap();
            (i * steps / 2, u)
        })
        .collect();
    KeyFrameSet::new(frames).unwrap()
}

/// Default solver settings for `K = steps` with key frames at `0, K/2, K`.
pub fn config(steps: usize, levels: usize, iterations: usize) -> SolverConfig {
    SolverConfig { steps, levels, iterations, fixed_indices: vec![0, steps / 2, steps], ..SolverConfig::default() }
}

/// Standard initialization of the Gaussian problem with every deformation
/// replaced by [`swirl`], so warps do real interpolation work.
pub fn gaussian_state(size: usize, steps: usize) -> SplineState {
    let mut state = SplineState::initialize(&gaussian_keyframes(size, steps), steps).unwrap();
    for phi in &mut state.deformations {
        *phi = swirl(size, 0.03);
    }
    state
}

/// Smooth deformation `id + amp * sin(pi x) sin(pi y) * (cos 2pi y, sin 2pi x)`.
pub fn swirl(size: usize, amp: f64) -> DeformationField {
    let disp = ImageGrid::from_fn(size, size, 2, |x, y, ch| {
        let bump = (PI * x).sin() * (PI * y).sin();
        amp * bump * if ch == 0 { (2.0 * PI * y).cos() } else { (2.0 * PI * x).sin() }
    })
    .unwrap();
    DeformationField::from_displacement(&disp).unwrap()
}
