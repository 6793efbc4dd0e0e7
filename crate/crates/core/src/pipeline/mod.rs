//! Configuration, synthetic benchmarks, analysis utilities and the run driver
//! behind the command line tool.

pub mod analysis;
pub mod config;
pub mod output;
pub mod run;
pub mod synth;

pub use analysis::{euclidean_cubic_spline, extract_gaussian_params, width_profile, GaussianParams};
pub use config::{KeyFrameSource, RunConfig};
pub use run::{load_keyframes, run, run_with_keyframes, RunOutcome};
pub use synth::{circle_square_benchmark, gaussian_benchmark, synth_gaussian, synth_shapes, Benchmark, Shape};
