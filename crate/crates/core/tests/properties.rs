use metaspline::energy::total_energy;
use metaspline::multilevel::{prolong_image, restrict_image};
use metaspline::optimize::ipalm_solve_with;
use metaspline::oracle::random_state;
use metaspline::pipeline::euclidean_cubic_spline;
use metaspline::warp::{warp, warp_adjoint};
use metaspline::{ImageGrid, Mode, SolverConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(w: usize, h: usize, c: usize, values: &[f64]) -> ImageGrid {
    ImageGrid::from_fn(w, h, c, |x, y, ch| {
        let i = ((x * 7.0 + y * 13.0) as usize + ch) % values.len();
        values[i] * (1.0 + x - y)
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn warp_is_linear_in_the_image(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_state(7, 6, 2, 2, 0.08, &mut rng).unwrap();
        let (u, v, phi) = (state.image(0), state.image(1), state.deformation(1));
        let lhs = warp(&u.combine(a, v, b), phi).unwrap();
        let rhs = warp(u, phi).unwrap().combine(a, &warp(v, phi).unwrap(), b);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn warp_adjoint_under_identity_is_identity(value in -5.0f64..5.0) {
        let id = metaspline::DeformationField::identity(6, 6).unwrap();
        let r = ImageGrid::constant(6, 6, 1, value).unwrap();
        let back = warp_adjoint(&r, &id).unwrap();
        prop_assert!(back.max_abs_diff(&r) <= 1e-12 * (1.0 + value.abs()));
    }

    #[test]
    fn restriction_preserves_constants_and_prolongation_restores_them(
        w in 6usize..20, h in 6usize..20, value in -2.0f64..2.0,
    ) {
        let u = ImageGrid::constant(w, h, 2, value).unwrap();
        let coarse = restrict_image(&u).unwrap();
        prop_assert!(coarse.max_abs_diff(&ImageGrid::constant(coarse.width(), coarse.height(), 2, value).unwrap()) <= 1e-14);
        prop_assert!(prolong_image(&coarse, w, h).unwrap().max_abs_diff(&u) <= 1e-14);
    }

    #[test]
    fn restriction_is_linear(values in proptest::collection::vec(-1.0f64..1.0, 5..20), s in -2.0f64..2.0) {
        let (u, v) = (grid(11, 9, 1, &values), grid(11, 9, 1, &values[1..]));
        let lhs = restrict_image(&u.combine(1.0, &v, s)).unwrap();
        let rhs = restrict_image(&u).unwrap().combine(1.0, &restrict_image(&v).unwrap(), s);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-14);
    }

    #[test]
    fn energy_is_nonnegative_and_transpose_invariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SolverConfig { delta: 0.2, sigma: 0.5, theta: 0.3, steps: 3, fixed_indices: vec![0, 3], ..SolverConfig::default() };
        let state = random_state(5, 5, 1, 3, 0.08, &mut rng).unwrap();
        let flipped = state.map_grids(
            |u| u.transpose(),
            |phi| {
                let mut t = phi.grid().transpose();
                for node in t.data_mut().chunks_exact_mut(2) {
                    node.swap(0, 1);
                }
                metaspline::DeformationField::from_grid(t).unwrap()
            },
        );
        let (a, b) = (total_energy(&state, &cfg).unwrap().total, total_energy(&flipped, &cfg).unwrap().total);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn euclidean_spline_interpolates_its_knots(
        points in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 3..7),
    ) {
        let times: Vec<f64> = (0..points.len()).map(|i| i as f64 * 1.5).collect();
        let values = euclidean_cubic_spline(&times, &points, &times).unwrap();
        for (v, p) in values.iter().zip(&points) {
            for d in 0..3 {
                prop_assert!((v[d] - p[d]).abs() <= 1e-12 * (1.0 + p[d].abs()));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn solver_never_increases_energy(seed in 0u64..10_000, geodesic in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if geodesic { Mode::Geodesic } else { Mode::Spline };
        let cfg = SolverConfig {
            delta: 0.1, sigma: 0.5, theta: 0.05, steps: 4, iterations: 4, mode, fixed_indices: vec![0, 4],
            ..SolverConfig::default()
        };
        let state = random_state(8, 8, 1, 4, 0.03, &mut rng).unwrap();
        let (_, report) = ipalm_solve_with(state, &cfg, Default::default()).unwrap();
        let mut last = report.initial.total;
        for r in &report.records {
            prop_assert!(r.total <= last * (1.0 + 1e-12));
            last = r.total;
        }
    }
}
