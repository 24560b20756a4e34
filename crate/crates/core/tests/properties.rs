//! Module invariants as property tests over generated inputs.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayfusion::camera::traverse;
use rayfusion::grid::{uniform_init, BinaryLabeling, LabelField, LabelSpace, VoxelGrid, FREE};
use rayfusion::oracle::{
    brute_force_minimize, convex_relaxation_solve, direct_ray_cost, random_instance, random_labeling, RandomSpec,
};
use rayfusion::ray::{normalize, shift_free_cost, transform_nonpositive, Ray};
use rayfusion::raypot::{build_visibility, majorize_ray, ray_energy, Branch};
use rayfusion::regularizer::{
    feasible_z, feasible_z_counted, marginalization_residual, smoothness_energy, SmoothnessModel, SurfacePenalty,
    TransitionGradients,
};
use rayfusion::solver::{reconstruct, SolverConfig};
use rayfusion::validate::{brute_force_traversal, configuration_costs, mm_check_instance, random_ray};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simplex_field(rng: &mut ChaCha8Rng, grid: &VoxelGrid, n: usize) -> LabelField {
    let mut x = LabelField::zeros(grid.clone(), n);
    for s in 0..grid.len() {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
        let sum: f64 = v.iter().sum::<f64>().max(1e-12);
        x.voxel_mut(s).iter_mut().zip(&v).for_each(|(d, a)| *d = a / sum);
    }
    x
}

fn random_model(rng: &mut ChaCha8Rng, n: usize) -> SmoothnessModel {
    let penalties = (0..n * (n - 1) / 2)
        .map(|_| {
            if rng.gen_bool(0.5) {
                SurfacePenalty::Isotropic {
                    weight: rng.gen_range(0.0..2.0),
                }
            } else {
                let d: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(0.2..2.0));
                let c = 0.1 * d[0].min(d[1]);
                SurfacePenalty::Anisotropic {
                    matrix: [[d[0], c, 0.0], [c, d[1], 0.0], [0.0, 0.0, d[2]]],
                }
            }
        })
        .collect();
    SmoothnessModel::new(n, penalties).unwrap()
}

fn normalized(mut ray: Ray) -> Ray {
    normalize(&mut ray);
    ray
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn index_round_trip(nx in 1usize..10, ny in 1usize..10, nz in 1usize..10) {
        let grid = VoxelGrid::unit([nx, ny, nz]).unwrap();
        for s in 0..grid.len() {
            let idx = grid.delinearize(s);
            prop_assert!(idx[0] < nx && idx[1] < ny && idx[2] < nz);
            prop_assert_eq!(grid.linearize(idx), s);
        }
    }

    #[test]
    fn uniform_init_is_on_the_simplex(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, n in 2usize..6) {
        let grid = VoxelGrid::unit([nx, ny, nz]).unwrap();
        let x = uniform_init(&grid, &LabelSpace::new(n).unwrap());
        prop_assert!(x.simplex_residual() <= 1e-12);
        prop_assert!(x.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn normalization_preserves_configuration_order(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let len = rng.gen_range(1..=7);
        let n = rng.gen_range(2..=4);
        let original = random_ray(&mut rng, len, n);
        let mut ray = original.clone();
        let shift = shift_free_cost(&mut ray);
        let carry = transform_nonpositive(&mut ray);
        for i in 0..ray.len() {
            let m = ray.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.abs() <= 1e-12, "row {} max {}", i, m);
        }
        let before = configuration_costs(&original);
        let after = configuration_costs(&ray);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - (b + shift + carry)).abs() <= 1e-12);
        }
        let best = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let (b0, b1) = (best(&before), best(&after));
        for (a, b) in before.iter().zip(&after) {
            prop_assert_eq!(*a - b0 <= 1e-12, *b - b1 <= 1e-12);
        }
    }

    #[test]
    fn normalization_is_idempotent(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let len = rng.gen_range(1..=7);
        let n = rng.gen_range(2..=4);
        let once = normalized(random_ray(&mut rng, len, n));
        let mut twice = once.clone();
        let c = normalize(&mut twice);
        prop_assert_eq!(c, 0.0);
        prop_assert_eq!(twice, once);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn traversal_matches_exhaustive_box_test(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let grid = VoxelGrid::new(
            [0, 1, 2].map(|_| rng.gen_range(1..=6)),
            [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0)),
            rng.gen_range(0.3..1.5),
        )
        .unwrap();
        let (lo, hi) = (grid.lower(), grid.upper());
        let origin = [0, 1, 2].map(|k| rng.gen_range(lo[k] - 5.0..hi[k] + 5.0));
        let target = [0, 1, 2].map(|k| rng.gen_range(lo[k] - 1.0..hi[k] + 1.0));
        let dir = [0, 1, 2].map(|k| target[k] - origin[k]);
        let fast: Vec<usize> = traverse(&grid, origin, dir).iter().map(|h| h.linear).collect();
        prop_assert_eq!(fast, brute_force_traversal(&grid, origin, dir));
    }

    #[test]
    fn majorizer_dominates_and_is_tight(
        x0 in 0.0f64..=1.0, y0 in 0.0f64..=1.0, x in 0.0f64..=1.0, y in 0.0f64..=1.0, linear_ties: bool,
    ) {
        let tie = if linear_ties { Branch::Linear } else { Branch::Zero };
        let b = Branch::select(y0, x0, tie);
        prop_assert!(b.bound(y, x) <= (y - x).max(0.0) + 1e-12);
        prop_assert!((b.bound(y0, x0) - (y0 - x0).max(0.0)).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn majorized_rays_are_sound(seed in any::<u64>(), linear_ties: bool) {
        let mut rng = rng(seed);
        let n = rng.gen_range(2..=4);
        let len = rng.gen_range(1..=8);
        let grid = VoxelGrid::unit([len, 1, 1]).unwrap();
        let ray = normalized(random_ray(&mut rng, len, n));
        let x = simplex_field(&mut rng, &grid, n);
        let y = build_visibility(&x, &ray).unwrap();
        let tie = if linear_ties { Branch::Linear } else { Branch::Zero };
        let branches = majorize_ray(&x, &y, &ray, tie);
        prop_assert_eq!(branches.len(), ray.len());
        // any point allowed by the surrogate satisfies the true constraint
        let x2 = simplex_field(&mut rng, &grid, n);
        let mut prev = 1.0f64;
        for (i, b) in branches.iter().enumerate() {
            let xf = x2.get(ray.voxel(i), FREE);
            let room = b.bound(prev, xf).max(0.0);
            let occupied = rng.gen_range(0.0..=1.0) * room;
            prop_assert!(occupied <= (prev - xf).max(0.0) + 1e-12);
            prev = prev.min(xf) * rng.gen_range(0.0..=1.0);
        }
    }

    #[test]
    fn binary_visibility_is_the_nested_minimum_and_tight(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.gen_range(2..=4);
        let len = rng.gen_range(1..=8);
        let grid = VoxelGrid::unit([len, 1, 1]).unwrap();
        let ray = normalized(random_ray(&mut rng, len, n));
        let lab = random_labeling(&mut rng, &grid, n);
        let x = LabelField::from_labeling(&lab, n);
        let y = build_visibility(&x, &ray).unwrap();
        let mut nested = 1.0f64;
        for i in 0..ray.len() {
            let prev = nested;
            nested = nested.min(x.get(ray.voxel(i), FREE));
            prop_assert_eq!(y[i * n + FREE], nested);
            let total: f64 = y[i * n..(i + 1) * n].iter().sum();
            prop_assert!((total - prev).abs() <= 1e-12, "position {}: {} vs {}", i, total, prev);
        }
    }

    #[test]
    fn lowering_a_cost_never_raises_the_ray_energy(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.gen_range(2..=4);
        let len = rng.gen_range(1..=8);
        let grid = VoxelGrid::unit([len, 1, 1]).unwrap();
        let ray = normalized(random_ray(&mut rng, len, n));
        let x = simplex_field(&mut rng, &grid, n);
        let before = ray_energy(&build_visibility(&x, &ray).unwrap(), &ray);
        let mut lower = ray.clone();
        let (i, l) = (rng.gen_range(0..len), rng.gen_range(0..n));
        *lower.cost_mut(i, l) -= rng.gen_range(0.0..3.0);
        let after = ray_energy(&build_visibility(&x, &lower).unwrap(), &lower);
        prop_assert!(after <= before + 1e-12, "{} -> {}", before, after);
    }

    #[test]
    fn penalties_are_homogeneous_and_convex(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.gen_range(2..=4);
        let model = random_model(&mut rng, n);
        let (l, m) = (0, rng.gen_range(1..n));
        let v = [0, 1, 2].map(|_| rng.gen_range(-3.0..3.0));
        let w = [0, 1, 2].map(|_| rng.gen_range(-3.0..3.0));
        let a = rng.gen_range(0.0..10.0);
        let pv = model.phi(l, m, v);
        let scaled = model.phi(l, m, v.map(|c| a * c));
        prop_assert!(pv >= 0.0);
        prop_assert!((scaled - a * pv).abs() <= 1e-9 * (1.0 + scaled.abs()));
        let mid = model.phi(l, m, [0, 1, 2].map(|k| 0.5 * (v[k] + w[k])));
        let chord = 0.5 * (pv + model.phi(l, m, w));
        prop_assert!(mid <= chord + 1e-9 * (1.0 + chord));
    }

    #[test]
    fn feasible_z_meets_constraints_within_budget(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let grid = VoxelGrid::unit([0, 1, 2].map(|_| rng.gen_range(1..=3))).unwrap();
        let n = rng.gen_range(2..=4);
        let x = simplex_field(&mut rng, &grid, n);
        let mut z0 = TransitionGradients::zeros(&grid, n);
        z0.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let (z, steps) = feasible_z_counted(&x, &z0).unwrap();
        prop_assert!(marginalization_residual(&x, &z) <= 1e-8);
        prop_assert!(z.min_value() >= -1e-12);
        prop_assert!(steps <= (n - 1) * (n - 1));
    }

    #[test]
    fn smoothness_depends_only_on_transition_differences(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let grid = VoxelGrid::unit([0, 1, 2].map(|_| rng.gen_range(1..=3))).unwrap();
        let n = rng.gen_range(2..=4);
        let x = simplex_field(&mut rng, &grid, n);
        let z = feasible_z(&x, &TransitionGradients::zeros(&grid, n)).unwrap();
        let model = random_model(&mut rng, n);
        let mut shifted = z.clone();
        let (s, k) = (rng.gen_range(0..grid.len()), rng.gen_range(0..3));
        let (l, m) = (rng.gen_range(0..n - 1), n - 1);
        let t = rng.gen_range(0.0..1.0);
        let w = shifted.slice_mut(s, k);
        w[l * n + m] += t;
        w[m * n + l] += t;
        w[l * n + l] -= t;
        w[m * n + m] -= t;
        prop_assert!(marginalization_residual(&x, &shifted) <= 1e-8);
        let (a, b) = (smoothness_energy(&z, &model), smoothness_energy(&shifted, &model));
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn binary_smoothness_is_the_weighted_face_area(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let grid = VoxelGrid::unit([0, 1, 2].map(|_| rng.gen_range(1..=4))).unwrap();
        let n = rng.gen_range(2..=3);
        let model = random_model(&mut rng, n);
        let lab = random_labeling(&mut rng, &grid, n);
        let x = LabelField::from_labeling(&lab, n);
        let z = feasible_z(&x, &TransitionGradients::zeros(&grid, n)).unwrap();
        let mut area = 0.0;
        for s in 0..grid.len() {
            for k in 0..3 {
                if let Some(t) = grid.forward_neighbor(s, k) {
                    let (a, b) = (lab.get(s), lab.get(t));
                    if a != b {
                        let mut e = [0.0; 3];
                        e[k] = 1.0;
                        area += model.phi(a, b, e);
                    }
                }
            }
        }
        let e = smoothness_energy(&z, &model);
        prop_assert!((e - area).abs() <= 1e-9 * (1.0 + area), "energy {} vs face area {}", e, area);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn mm_is_monotone_and_reports_true_energies(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let spec = RandomSpec { max_dims: [4, 4, 4], max_voxels: 64, max_labels: 3, max_rays: 20, max_weight: 1.0 };
        let inst = random_instance(&mut rng, &spec);
        prop_assert!(mm_check_instance(&inst, false).is_ok());
    }

    #[test]
    fn mm_is_deterministic(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let inst = random_instance(&mut rng, &RandomSpec::tiny());
        let problem = inst.to_problem();
        let config = SolverConfig { max_outer: 30, ..SolverConfig::default() };
        let a = reconstruct(&problem, &config).unwrap();
        let b = reconstruct(&problem, &config).unwrap();
        prop_assert_eq!(a.labeling, b.labeling);
        prop_assert_eq!(a.relaxed.values(), b.relaxed.values());
        prop_assert_eq!(a.trace.len(), b.trace.len());
        for (p, q) in a.trace.iter().zip(&b.trace) {
            prop_assert_eq!(p.accepted, q.accepted);
            prop_assert_eq!(p.feasible_energy.to_bits(), q.feasible_energy.to_bits());
            prop_assert_eq!(p.surrogate_energy.to_bits(), q.surrogate_energy.to_bits());
        }
    }

    #[test]
    fn ray_costs_agree_with_visibility_on_binary_points(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let inst = random_instance(&mut rng, &RandomSpec::tiny());
        let n = inst.labels.count();
        let problem = inst.to_problem();
        for _ in 0..20 {
            let lab: BinaryLabeling = random_labeling(&mut rng, &inst.grid, n);
            let x = LabelField::from_labeling(&lab, n);
            for (orig, norm) in inst.rays.iter().zip(&problem.rays) {
                let mut shifted = orig.clone();
                let c = normalize(&mut shifted);
                let y = build_visibility(&x, norm).unwrap();
                let direct = direct_ray_cost(orig, lab.labels());
                prop_assert!((direct - (ray_energy(&y, norm) + c)).abs() <= 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn relaxation_bounds_the_binary_optimum(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let spec = RandomSpec { max_dims: [2, 2, 2], max_voxels: 6, max_labels: 3, max_rays: 4, max_weight: 1.0 };
        let inst = random_instance(&mut rng, &spec);
        let (_, best) = brute_force_minimize(&inst).unwrap();
        let (_, relaxed) = convex_relaxation_solve(&inst).unwrap();
        prop_assert!(relaxed <= best + 1e-4 * (1.0 + best.abs()), "{} vs {}", relaxed, best);
    }
}
