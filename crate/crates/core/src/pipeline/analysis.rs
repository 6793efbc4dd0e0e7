//! Measurements on interpolated frames.

use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// Mass `(1/MN) sum u` and intensity weighted centroid in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub x: f64,
    pub y: f64,
    pub mass: f64,
}

impl GaussianParams {
    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.mass]
    }
}

pub fn extract_gaussian_params(u: &ImageGrid) -> Result<GaussianParams> {
    if u.channels() != 1 {
        return Err(Error::dims("1 channel", u.channels()));
    }
    let (mut total, mut mx, mut my) = (0.0, 0.0, 0.0);
    for j in 0..u.height() {
        for i in 0..u.width() {
            let v = u.get(i, j, 0);
            total += v;
            mx += v * u.x_coord(i);
            my += v * u.y_coord(j);
        }
    }
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(GaussianParams { x: mx / total, y: my / total, mass: total / u.num_nodes() as f64 })
}

/// Natural cubic spline through `(times[i], points[i])`, per coordinate,
/// evaluated at `eval` (extrapolated linearly outside the data range).
pub fn euclidean_cubic_spline(times: &[f64], points: &[[f64; 3]], eval: &[f64]) -> Result<Vec<[f64; 3]>> {
    let n = times.len();
    if points.len() != n {
        return Err(Error::dims(format!("{n} points"), points.len()));
    }
    if n < 3 {
        return Err(Error::Config(format!("natural cubic spline needs at least 3 points, got {n}")));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NonIncreasingTimes);
    }
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut out = vec![[0.0; 3]; eval.len()];
    for dim in 0..3 {
        let y: Vec<f64> = points.iter().map(|p| p[dim]).collect();
        let moments = natural_moments(&h, &y);
        for (o, &t) in out.iter_mut().zip(eval) {
            let s = times.partition_point(|&ti| ti <= t).clamp(1, n - 1) - 1;
            o[dim] = if t < times[0] || t > times[n - 1] {
                let (edge, slope) = if t < times[0] {
                    (0, (y[1] - y[0]) / h[0] - h[0] * (2.0 * moments[0] + moments[1]) / 6.0)
                } else {
                    (n - 1, (y[n - 1] - y[n - 2]) / h[n - 2] + h[n - 2] * (moments[n - 2] + 2.0 * moments[n - 1]) / 6.0)
                };
                y[edge] + slope * (t - times[edge])
            } else {
                let (a, b) = (times[s + 1] - t, t - times[s]);
                let hs = h[s];
                (moments[s] * a.powi(3) + moments[s + 1] * b.powi(3)) / (6.0 * hs)
                    + (y[s] / hs - moments[s] * hs / 6.0) * a
                    + (y[s + 1] / hs - moments[s + 1] * hs / 6.0) * b
            };
        }
    }
    Ok(out)
}

/// Second derivatives at the knots with zero end moments (Thomas algorithm).
fn natural_moments(h: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let m = n - 2;
    let mut diag: Vec<f64> = (0..m).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
    let mut rhs: Vec<f64> =
        (0..m).map(|i| 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i])).collect();
    for i in 1..m {
        let factor = h[i] / diag[i - 1];
        diag[i] -= factor * h[i];
        rhs[i] -= factor * rhs[i - 1];
    }
    let mut moments = vec![0.0; n];
    for i in (0..m).rev() {
        let upper = if i + 1 < m { h[i + 1] * moments[i + 2] } else { 0.0 };
        moments[i + 1] = (rhs[i] - upper) / diag[i];
    }
    moments
}

/// Number of pixels above `threshold` on the central row `(M-1)/2`, using the
/// channel norm for multichannel images.
pub fn width_profile(u: &ImageGrid, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let norms = u.channel_norm();
    let row = (u.height() - 1) / 2;
    Ok((0..u.width()).filter(|&i| norms.get(i, row, 0) > threshold).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense_natural_spline;
    use crate::pipeline::synth::{synth_gaussian, synth_shapes, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_round_trip() {
        let n = 64;
        let (center, mass, sd) = ([0.4, 0.6], 1.3, 0.06);
        let u = synth_gaussian(n, n, center, mass, sd).unwrap();
        let p = extract_gaussian_params(&u).unwrap();
        let px = 1.0 / (n - 1) as f64;
        assert!((p.x - center[0]).abs() < 0.5 * px && (p.y - center[1]).abs() < 0.5 * px);
        // analytic node average of a Gaussian well inside the square
        let analytic = mass * 2.0 * std::f64::consts::PI * sd * sd * ((n - 1) * (n - 1)) as f64 / (n * n) as f64;
        assert!((p.mass - analytic).abs() < 0.01 * analytic, "{} vs {analytic}", p.mass);
    }

    #[test]
    fn centroid_examples() {
        let sym = ImageGrid::from_fn(9, 7, 1, |x, y, _| 1.0 + (x - 0.5).powi(2) * (y - 0.5).powi(2)).unwrap();
        let p = extract_gaussian_params(&sym).unwrap();
        assert!((p.x - 0.5).abs() < 1e-15 && (p.y - 0.5).abs() < 1e-15);

        let mut two = ImageGrid::new(5, 5, 1).unwrap();
        two.set(1, 1, 0, 2.0);
        two.set(3, 4, 0, 2.0);
        let p = extract_gaussian_params(&two).unwrap();
        assert!((p.x - 0.5).abs() < 1e-15 && (p.y - 0.625).abs() < 1e-15);
        assert!(matches!(extract_gaussian_params(&ImageGrid::new(5, 5, 1).unwrap()), Err(Error::ZeroMass)));
    }

    #[test]
    fn spline_through_collinear_points_is_a_line() {
        let times = [0.0, 4.0, 8.0];
        let points = [[0.0, 1.0, 2.0], [2.0, 0.0, 2.5], [4.0, -1.0, 3.0]];
        let eval: Vec<f64> = (0..=8).map(f64::from).collect();
        let out = euclidean_cubic_spline(&times, &points, &eval).unwrap();
        for (t, p) in eval.iter().zip(&out) {
            assert!((p[0] - 0.5 * t).abs() < 1e-14 && (p[1] - (1.0 - 0.25 * t)).abs() < 1e-14);
            assert!((p[2] - (2.0 + t / 8.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn spline_has_natural_end_conditions() {
        let times = [0.0, 1.0, 2.5, 3.0, 5.0];
        let points = [[0.0, 1.0, -1.0], [1.0, 3.0, 0.0], [-2.0, 0.0, 2.0], [0.5, 1.0, 1.0], [3.0, -1.0, 0.0]];
        let e = 1e-3;
        for t in [0.0 + e, 5.0 - e] {
            let out = euclidean_cubic_spline(&times, &points, &[t - e, t, t + e]).unwrap();
            for ((a, b), c) in out[0].iter().zip(&out[1]).zip(&out[2]) {
                let second = (a - 2.0 * b + c) / (e * e);
                // exact cubic: the central difference equals the second derivative at t, which is linear in t
                assert!(second.abs() < 1e-3 * 50.0, "{second}");
            }
        }
        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let m = natural_moments(&h, &points.iter().map(|p| p[0]).collect::<Vec<_>>());
        assert!(m[0].abs() <= 1e-12 && m[4].abs() <= 1e-12);
    }

    #[test]
    fn spline_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let times = [0.0, 0.7, 2.0, 2.4, 4.0];
        let points: Vec<[f64; 3]> = (0..5).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        let eval: Vec<f64> = (0..=40).map(|i| i as f64 / 10.0).collect();
        let out = euclidean_cubic_spline(&times, &points, &eval).unwrap();
        for d in 0..3 {
            let values: Vec<f64> = points.iter().map(|p| p[d]).collect();
            let dense = dense_natural_spline(&times, &values, &eval);
            for (a, b) in out.iter().zip(&dense) {
                assert!((a[d] - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn spline_errors() {
        let p = [[0.0; 3]; 3];
        assert!(matches!(euclidean_cubic_spline(&[0.0, 1.0, 1.0], &p, &[0.5]), Err(Error::NonIncreasingTimes)));
        assert!(euclidean_cubic_spline(&[0.0, 1.0], &p[..2], &[0.5]).is_err());
        assert!(euclidean_cubic_spline(&[0.0, 1.0, 2.0], &p[..2], &[0.5]).is_err());
    }

    #[test]
    fn width_profile_examples() {
        assert_eq!(width_profile(&ImageGrid::new(16, 16, 1).unwrap(), 0.5).unwrap(), 0);
        for side in [8.0, 13.0] {
            // even sides centered between nodes, odd ones on a node
            let center = if side == 8.0 { 9.5 / 19.0 } else { 9.0 / 19.0 };
            let sq = synth_shapes(Shape::Square, 20, 20, [center, 0.5], side).unwrap();
            assert_eq!(width_profile(&sq, 0.5).unwrap(), side as usize);
        }
        let r = 12.0;
        let circle = synth_shapes(Shape::Circle, 64, 64, [0.5, 0.5], 2.0 * r).unwrap();
        let w = width_profile(&circle, 0.5).unwrap() as f64;
        assert!((w - 2.0 * r).abs() <= 1.0);
        assert!(width_profile(&circle, 1.0).is_err());
    }
}
