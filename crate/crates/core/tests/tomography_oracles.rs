mod support;

use absplace_core::geometry::{Point3, RegularGrid3, Segment3};
use absplace_core::tomography::{
    estimate_slf, shadowing_ellipsoid_sum, shadowing_line_integral, traverse_voxels, Measurement, SlfField,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn rel_err(x: f64, reference: f64) -> f64 {
    (x - reference).abs() / reference.abs().max(1e-300)
}

#[test]
fn random_field_8cubed_matches_dense_and_exact_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = RegularGrid3::new(Point3::new(0.0, 0.0, 0.0), [1.0, 1.0, 1.0], [8, 8, 8]).unwrap();
    let slf = random_field(&mut rng, &grid, 0.5, 3.0);
    for _ in 0..100 {
        let seg = random_segment_in(&mut rng, &grid);
        let xi = shadowing_line_integral(&slf, &seg).unwrap();
        let dense = dense_sample_integral(&slf, &seg, 1_000_000);
        let exact = exact_crossing_integral(&slf, &seg);
        assert!(rel_err(xi, dense) < 1e-3, "dense: {xi} vs {dense}");
        assert!(rel_err(xi, exact) < 1e-9, "exact: {xi} vs {exact}");
    }
}

#[test]
fn constant_field_closed_form_on_three_spacings() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for spacing in [0.25, 1.0, 7.5] {
        let grid = RegularGrid3::new(Point3::new(0.0, 0.0, 0.0), [spacing; 3], [10, 10, 10]).unwrap();
        let slf = SlfField::constant(grid.clone(), 3.0).unwrap();
        for _ in 0..200 {
            let seg = random_segment_in(&mut rng, &grid);
            let xi = shadowing_line_integral(&slf, &seg).unwrap();
            assert!(rel_err(xi, 3.0 * seg.length().sqrt()) <= 1e-12);
        }
    }
}

#[test]
fn corner_to_corner_diagonal_interval_bound() {
    for n in [1, 2, 5, 16, 33] {
        let grid = RegularGrid3::new(Point3::new(0.0, 0.0, 0.0), [1.0; 3], [n; 3]).unwrap();
        let (lo, hi) = grid.voxel_domain();
        let trav = traverse_voxels(&grid, &Segment3::new(lo, hi)).unwrap();
        assert!(trav.interval_count() <= 3 * n);
        // an exact diagonal passes through voxel corners only
        assert_eq!(trav.interval_count(), n);
        assert_eq!(trav.interval_count(), crossing_interval_count(&grid, &Segment3::new(lo, hi)));
    }
}

#[test]
fn ellipsoid_zero_on_positive_field() {
    let grid = RegularGrid3::new(Point3::new(0.0, 0.0, 0.0), [1.0; 3], [5, 5, 5]).unwrap();
    let slf = SlfField::constant(grid.clone(), 3.0).unwrap();
    // the segment runs midway between grid lines; a thin ellipsoid misses all points
    let seg = Segment3::new(Point3::new(0.5, 0.5, 0.5), Point3::new(3.5, 0.5, 0.5));
    assert_eq!(shadowing_ellipsoid_sum(&slf, &seg, 0.125).unwrap(), 0.0);
    assert!(shadowing_line_integral(&slf, &seg).unwrap() > 0.0);
}

#[test]
fn estimator_recovers_generator_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let grid = RegularGrid3::new(Point3::new(0.0, 0.0, 0.0), [1.0; 3], [4, 4, 4]).unwrap();
    let truth = random_field(&mut rng, &grid, 0.5, 3.0);
    let measurements: Vec<Measurement> = (0..600)
        .map(|_| {
            let seg = random_segment_in(&mut rng, &grid);
            let shadow_db = shadowing_line_integral(&truth, &seg).unwrap();
            Measurement { tx: seg.a, rx: seg.b, shadow_db }
        })
        .collect();
    let mut crossings = vec![0usize; grid.len()];
    for m in &measurements {
        let trav = traverse_voxels(&grid, &Segment3::new(m.tx, m.rx)).unwrap();
        let mut seen: Vec<usize> = trav.intervals().filter(|(dt, _)| *dt > 0.0).map(|(_, v)| grid.linear_index(v)).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.into_iter().for_each(|q| crossings[q] += 1);
    }
    let est = estimate_slf(&measurements, &grid, 1e-6).unwrap();
    let mut checked = 0;
    for (q, &n) in crossings.iter().enumerate() {
        if n >= 3 {
            checked += 1;
            let (e, t) = (est.values()[q], truth.values()[q]);
            assert!(rel_err(e, t) < 1e-3, "voxel {q}: {e} vs {t}");
        }
    }
    assert!(checked > grid.len() / 2);
}

fn seeds() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_exact_crossing_oracle(seed in seeds()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 9);
        let slf = random_field(&mut rng, &grid, 0.0, 3.0);
        let seg = random_segment_in(&mut rng, &grid);
        let xi = shadowing_line_integral(&slf, &seg).unwrap();
        let exact = exact_crossing_integral(&slf, &seg);
        prop_assert!((xi - exact).abs() <= 1e-9 * exact.abs().max(1.0));
    }

    #[test]
    fn constant_field_any_grid(seed in seeds(), l0 in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 12);
        let slf = SlfField::constant(grid.clone(), l0).unwrap();
        let seg = random_segment_in(&mut rng, &grid);
        let xi = shadowing_line_integral(&slf, &seg).unwrap();
        prop_assert!((xi - l0 * seg.length().sqrt()).abs() <= 1e-12 * (l0 * seg.length().sqrt()).max(1e-300));
    }

    #[test]
    fn traversal_structure(seed in seeds()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 16);
        let seg = random_segment_in(&mut rng, &grid);
        let trav = traverse_voxels(&grid, &seg).unwrap();
        let [qx, qy, qz] = grid.dims();
        prop_assert!(trav.interval_count() <= qx + qy + qz + 2);
        prop_assert_eq!(trav.breakpoints.len(), trav.voxels.len() + 1);
        prop_assert_eq!(trav.breakpoints[0], 0.0);
        prop_assert_eq!(*trav.breakpoints.last().unwrap(), 1.0);
        prop_assert!(trav.breakpoints.windows(2).all(|w| w[0] <= w[1]));
        let total: f64 = trav.intervals().map(|(dt, _)| dt).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(trav.interval_count() <= crossing_interval_count(&grid, &seg));
        // every interval of non-negligible length lies in the voxel reported for it
        for (k, v) in trav.voxels.iter().enumerate() {
            let (t0, t1) = (trav.breakpoints[k], trav.breakpoints[k + 1]);
            if t1 - t0 > 1e-9 {
                let mid = seg.at(0.5 * (t0 + t1)).to_array();
                let o = grid.origin().to_array();
                let d = grid.spacing();
                for a in 0..3 {
                    let expect = ((mid[a] - o[a]) / d[a]).round().clamp(0.0, (grid.dims()[a] - 1) as f64) as usize;
                    prop_assert_eq!(v[a], expect);
                }
            }
        }
    }

    #[test]
    fn symmetric_in_endpoints(seed in seeds()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 9);
        let slf = random_field(&mut rng, &grid, 0.0, 3.0);
        let seg = random_segment_in(&mut rng, &grid);
        let fwd = shadowing_line_integral(&slf, &seg).unwrap();
        let back = shadowing_line_integral(&slf, &seg.reversed()).unwrap();
        prop_assert!((fwd - back).abs() <= 1e-9 * fwd.abs().max(1.0));
    }

    #[test]
    fn linear_in_field(seed in seeds(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 7);
        let f1 = random_field(&mut rng, &grid, 0.0, 3.0);
        let f2 = random_field(&mut rng, &grid, 0.0, 3.0);
        let mix: Vec<f64> = f1.values().iter().zip(f2.values()).map(|(a, b)| alpha * a + beta * b).collect();
        let mix = SlfField::new(grid.clone(), mix).unwrap();
        let seg = random_segment_in(&mut rng, &grid);
        let lhs = shadowing_line_integral(&mix, &seg).unwrap();
        let rhs = alpha * shadowing_line_integral(&f1, &seg).unwrap() + beta * shadowing_line_integral(&f2, &seg).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn endpoint_moves_stay_within_face_proximity_bound(seed in seeds(), move_b in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 8);
        let slf = random_field(&mut rng, &grid, 0.0, 3.0);
        let seg = random_segment_in(&mut rng, &grid);
        let seg = if move_b { seg } else { seg.reversed() };
        let delta_min = grid.spacing().into_iter().fold(f64::INFINITY, f64::min);
        let eta = rng.random_range(0.0..delta_min / 100.0);
        let dir = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let h = dir * (eta / dir.norm().max(1e-12));
        let moved = Segment3::new(seg.a, seg.b + h);
        prop_assume!(grid.in_voxel_domain(moved.b));
        let jump = (shadowing_line_integral(&slf, &moved).unwrap() - shadowing_line_integral(&slf, &seg).unwrap()).abs();
        let bound = endpoint_move_bound(&grid, &seg, h, slf.max_abs());
        prop_assert!(jump <= bound + 1e-12, "jump {jump} > {bound}");
    }

    #[test]
    fn ellipsoid_matches_bruteforce(seed in seeds(), width in 0.01f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 6);
        let slf = random_field(&mut rng, &grid, 0.0, 3.0);
        let seg = random_segment_in(&mut rng, &grid);
        let o = grid.origin().to_array();
        let d = grid.spacing();
        let [nx, ny, nz] = grid.dims();
        let mut expect = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let x = Point3::new(o[0] + i as f64 * d[0], o[1] + j as f64 * d[1], o[2] + k as f64 * d[2]);
                    if seg.a.distance(x) + x.distance(seg.b) <= seg.length() + width / 2.0 {
                        expect += field_at(&slf, x);
                    }
                }
            }
        }
        expect /= seg.length().sqrt();
        let got = shadowing_ellipsoid_sum(&slf, &seg, width).unwrap();
        prop_assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
}
