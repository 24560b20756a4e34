//! Randomized property suites over every module, each check compared against an independent
//! oracle. Used by the `validate` command and by the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{clip_to_box, traverse};
use crate::grid::{
    argmax_round, uniform_init, BinaryLabeling, LabelField, LabelSpace, VoxelGrid, FREE,
};
use crate::oracle::{
    brute_force_minimize, convex_relaxation_solve, direct_energy, direct_ray_cost,
    direct_smoothness, random_instance, random_labeling, RandomSpec,
};
use crate::ray::{normalize, Ray};
use crate::raypot::{build_visibility, check_consistency, ray_energy, Branch};
use crate::regularizer::{
    feasible_z_counted, marginalization_residual, smoothness_energy, TransitionGradients,
};
use crate::simplex::project_simplex;
use crate::solver::{labeling_energy, make_feasible, reconstruct, total_energy, SolverConfig};

pub type Check = std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    /// First few failure messages.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed == s.trials)
    }

    pub fn render(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for s in &self.suites {
            let status = if s.passed == s.trials { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<12} {:>5}/{:<5} {}\n",
                s.name, s.passed, s.trials, status
            ));
            for f in &s.failures {
                out.push_str(&format!("    {f}\n"));
            }
        }
        out
    }
}

type Suite = fn(&mut ChaCha8Rng) -> Check;

/// Every suite in a fixed order, with its per-trial property check.
pub const SUITES: [(&str, Suite); 7] = [
    ("grid", grid_trial),
    ("simplex", simplex_trial),
    ("ingest", ingest_trial),
    ("raypot", raypot_trial),
    ("regularizer", regularizer_trial),
    ("solver", solver_trial),
    ("oracle", oracle_trial),
];

/// Run `trials` trials of every suite. Each suite draws from its own stream derived from `seed`.
pub fn run_validation(seed: u64, trials: usize) -> ValidationReport {
    let mut suites = Vec::new();
    if trials > 0 {
        for (k, (name, trial)) in SUITES.iter().enumerate() {
            suites.push(run_suite(name, *trial, seed, k as u64, trials));
        }
    }
    ValidationReport { seed, suites }
}

pub fn run_suite(
    name: &'static str,
    trial: Suite,
    seed: u64,
    stream: u64,
    trials: usize,
) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut passed = 0;
    let mut failures = Vec::new();
    for t in 0..trials {
        match trial(&mut rng) {
            Ok(()) => passed += 1,
            Err(msg) => {
                if failures.len() < 5 {
                    failures.push(format!("trial {t}: {msg}"));
                }
            }
        }
    }
    SuiteReport {
        name,
        trials,
        passed,
        failures,
    }
}

fn random_simplex_field<R: Rng>(rng: &mut R, grid: &VoxelGrid, n: usize) -> LabelField {
    let mut values = Vec::with_capacity(grid.len() * n);
    for _ in 0..grid.len() {
        // mix of fractional, binary and tied voxels
        let mode = rng.gen_range(0..4);
        let mut v: Vec<f64> = match mode {
            0 => {
                let mut v = vec![0.0; n];
                v[rng.gen_range(0..n)] = 1.0;
                v
            }
            1 => vec![1.0 / n as f64; n],
            _ => (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect(),
        };
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|a| *a /= sum);
        values.extend(v);
    }
    LabelField::from_values(grid.clone(), n, values).expect("sized to the grid")
}

fn random_grid<R: Rng>(rng: &mut R, max: usize) -> VoxelGrid {
    VoxelGrid::unit([0, 1, 2].map(|_| rng.gen_range(1..=max))).expect("positive dims")
}

/// Index round-trip, uniform initialization and rounding against a plain max scan.
pub fn grid_trial(rng: &mut ChaCha8Rng) -> Check {
    let grid = random_grid(rng, 6);
    let dims = grid.dims();
    let mut lin = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                ensure(grid.linearize([x, y, z]) == lin, || {
                    format!("linearize({x},{y},{z}) != {lin}")
                })?;
                ensure(grid.delinearize(lin) == [x, y, z], || {
                    format!("delinearize({lin})")
                })?;
                lin += 1;
            }
        }
    }
    let n = rng.gen_range(2..=5);
    let u = uniform_init(&grid, &LabelSpace::new(n).expect("n >= 2"));
    ensure(u.simplex_residual() <= 1e-12, || {
        "uniform field off the simplex".into()
    })?;
    let x = random_simplex_field(rng, &grid, n);
    let rounded = argmax_round(&x);
    for s in 0..grid.len() {
        let v = x.voxel(s);
        let mut best = 0;
        for (l, &a) in v.iter().enumerate() {
            if a > v[best] {
                best = l;
            }
        }
        ensure(rounded.get(s) == best, || {
            format!("voxel {s}: rounded to {}", rounded.get(s))
        })?;
    }
    Ok(())
}

/// Minimizer of `|u - v|^2` over a lattice on the simplex: every point at spacing `1/m`, optionally
/// restricted to a box around `center`.
pub fn simplex_lattice_search(v: &[f64], m: usize, center: Option<(&[f64], f64)>) -> Vec<f64> {
    let n = v.len();
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut counts = vec![0usize; n];
    let range = |j: usize, left: usize| -> (usize, usize) {
        match center {
            None => (0, left),
            Some((c, r)) => {
                let lo = ((c[j] - r) * m as f64).floor().max(0.0) as usize;
                let hi = (((c[j] + r) * m as f64).ceil() as usize).min(left);
                (lo, hi)
            }
        }
    };
    fn rec(
        j: usize,
        left: usize,
        counts: &mut Vec<usize>,
        v: &[f64],
        m: usize,
        range: &dyn Fn(usize, usize) -> (usize, usize),
        best: &mut (f64, Vec<f64>),
    ) {
        let n = v.len();
        if j == n - 1 {
            counts[j] = left;
            let d: f64 = counts
                .iter()
                .zip(v)
                .map(|(&c, &b)| (c as f64 / m as f64 - b).powi(2))
                .sum();
            if d < best.0 {
                *best = (d, counts.iter().map(|&c| c as f64 / m as f64).collect());
            }
            return;
        }
        let (lo, hi) = range(j, left);
        for c in lo..=hi {
            counts[j] = c;
            rec(j + 1, left - c, counts, v, m, range, best);
        }
    }
    rec(0, m, &mut counts, v, m, &range, &mut best);
    best.1
}

/// Grid-search oracle at step 1e-3: a full search at step 1e-2, then a full-resolution search in
/// a box around the coarse winner (the objective is convex, so the box holds the fine optimum).
pub fn simplex_grid_oracle(v: &[f64]) -> Vec<f64> {
    let coarse = simplex_lattice_search(v, 100, None);
    simplex_lattice_search(v, 1000, Some((&coarse, 0.02)))
}

/// Sort-and-threshold projection against the grid-search oracle, vectors of length 1 to 4.
pub fn simplex_trial(rng: &mut ChaCha8Rng) -> Check {
    let n = rng.gen_range(1..=4);
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let p = project_simplex(&v).map_err(|e| e.to_string())?;
    let g = simplex_grid_oracle(&v);
    let err = p
        .iter()
        .zip(&g)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(err <= 2e-3, || {
        format!("projection of {v:?}: {p:?} vs oracle {g:?}")
    })
}

/// A ray over `len` abstract voxels with random costs and free cost.
pub fn random_ray<R: Rng>(rng: &mut R, len: usize, n: usize) -> Ray {
    let costs = (0..len * n)
        .map(|j| {
            if j % n == FREE {
                0.0
            } else {
                rng.gen_range(-4.0..3.0)
            }
        })
        .collect();
    Ray::new((0..len).collect(), costs, rng.gen_range(-2.0..2.0), n).expect("sized above")
}

/// Potential of every first-occupied configuration (all-free last), read off the table.
pub fn configuration_costs(ray: &Ray) -> Vec<f64> {
    let n = ray.n_labels();
    let mut out = Vec::new();
    let mut prefix = 0.0;
    for i in 0..ray.len() {
        for l in 1..n {
            out.push(prefix + ray.cost(i, l));
        }
        prefix += ray.cost(i, FREE);
    }
    out.push(prefix + ray.free_cost());
    out
}

/// Voxels whose box the half-line crosses with positive length, sorted by entry parameter.
pub fn brute_force_traversal(grid: &VoxelGrid, origin: [f64; 3], dir: [f64; 3]) -> Vec<usize> {
    let vs = grid.voxel_size();
    let go = grid.origin();
    let mut hits = Vec::new();
    for s in 0..grid.len() {
        let idx = grid.delinearize(s);
        let lo = [0, 1, 2].map(|k| go[k] + idx[k] as f64 * vs);
        let hi = [0, 1, 2].map(|k| lo[k] + vs);
        if let Some((t0, t1)) = clip_to_box(lo, hi, origin, dir) {
            let t0 = t0.max(0.0);
            if t1 - t0 > 1e-9 {
                hits.push((t0, s));
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    hits.into_iter().map(|h| h.1).collect()
}

/// Normalization exactness and idempotence, and traversal against the exhaustive box test.
pub fn ingest_trial(rng: &mut ChaCha8Rng) -> Check {
    normalization_check(rng)?;
    let grid = VoxelGrid::new(
        [0, 1, 2].map(|_| rng.gen_range(1..=7)),
        [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0)),
        rng.gen_range(0.3..1.5),
    )
    .expect("valid grid");
    let lo = grid.lower();
    let hi = grid.upper();
    let origin = [0, 1, 2].map(|k| rng.gen_range(lo[k] - 5.0..hi[k] + 5.0));
    let target = [0, 1, 2].map(|k| rng.gen_range(lo[k]..hi[k]));
    let dir = [0, 1, 2].map(|k| target[k] - origin[k]);
    let fast: Vec<usize> = traverse(&grid, origin, dir)
        .iter()
        .map(|h| h.linear)
        .collect();
    let slow = brute_force_traversal(&grid, origin, dir);
    ensure(fast == slow, || {
        format!("traversal {fast:?} vs exhaustive {slow:?}")
    })
}

/// One random ray (up to 7 positions, up to 4 labels) through [`normalize`].
pub fn normalization_check<R: Rng>(rng: &mut R) -> Check {
    let len = rng.gen_range(1..=7);
    let n = rng.gen_range(2..=4);
    let original = random_ray(rng, len, n);
    let mut ray = original.clone();
    let constant = normalize(&mut ray);
    ensure(ray.free_cost() == 0.0, || "free cost not zeroed".into())?;
    ensure(ray.costs().iter().all(|&c| c <= 0.0), || {
        format!("positive cost left: {:?}", ray.costs())
    })?;
    for (a, b) in configuration_costs(&original)
        .iter()
        .zip(configuration_costs(&ray))
    {
        ensure((a - (b + constant)).abs() <= 1e-12, || {
            format!("configuration cost {a} != {b} + {constant}")
        })?;
    }
    let mut again = ray.clone();
    let c2 = normalize(&mut again);
    ensure(c2 == 0.0 && again == ray, || {
        format!("second normalization moved {c2}")
    })
}

/// Exhaustive minimum of the ray potential over visibility assignments on a lattice of step `1/m`,
/// subject to every visibility constraint, for fixed `x`.
pub fn visibility_lattice_min(x: &LabelField, ray: &Ray, m: usize) -> f64 {
    let n = ray.n_labels();
    let len = ray.len();
    let mut y = vec![0.0; len * n];
    let mut best = f64::INFINITY;
    fn rec(p: usize, y: &mut Vec<f64>, x: &LabelField, ray: &Ray, m: usize, best: &mut f64) {
        let n = ray.n_labels();
        if p == y.len() {
            let e = ray_energy(y, ray);
            if e < *best {
                *best = e;
            }
            return;
        }
        let (i, l) = (p / n, p % n);
        let xs = x.voxel(ray.voxel(i));
        let prev_free = if i == 0 { 1.0 } else { y[(i - 1) * n + FREE] };
        let mut cap = prev_free.min(xs[l]);
        if l != FREE {
            let used: f64 = y[i * n + 1..i * n + l].iter().sum();
            cap = cap.min((prev_free - xs[FREE]).max(0.0) - used);
        }
        let c = ray.cost(i, l);
        // a zero-cost occupied entry only uses up capacity, so 0 is optimal for it
        let top = if l != FREE && c >= 0.0 {
            0
        } else {
            (cap * m as f64 + 1e-9).floor().max(0.0) as usize
        };
        for k in 0..=top {
            y[p] = k as f64 / m as f64;
            rec(p + 1, y, x, ray, m, best);
        }
        y[p] = 0.0;
    }
    rec(0, &mut y, x, ray, m, &mut best);
    best
}

/// Greedy visibility construction: feasibility, optimality against a lattice search, the binary closed
/// form, majorizer dominance and tightness, and monotonicity in the costs.
pub fn raypot_trial(rng: &mut ChaCha8Rng) -> Check {
    let n = rng.gen_range(2..=3);
    let len = rng.gen_range(1..=3);
    let grid = VoxelGrid::unit([len, 1, 1]).expect("positive dims");
    let mut ray = random_ray(rng, len, n);
    normalize(&mut ray);
    // quarter-step fractional field so the lattice contains the optimum
    let values: Vec<f64> = (0..len)
        .flat_map(|_| {
            let mut q = vec![0usize; n];
            for _ in 0..4 {
                q[rng.gen_range(0..n)] += 1;
            }
            q.into_iter().map(|c| c as f64 / 4.0)
        })
        .collect();
    let x = LabelField::from_values(grid.clone(), n, values).expect("sized");
    let y = build_visibility(&x, &ray).map_err(|e| e.to_string())?;
    let v = check_consistency(&x, &y, &ray).worst();
    ensure(v <= 1e-12, || {
        format!("greedy visibility violates constraints by {v:e}")
    })?;
    let e = ray_energy(&y, &ray);
    let lattice = visibility_lattice_min(&x, &ray, 4);
    ensure((e - lattice).abs() <= 1e-9, || {
        format!("greedy visibility energy {e} vs lattice minimum {lattice}")
    })?;

    // binary closed form
    let lab = random_labeling(rng, &grid, n);
    let xb = LabelField::from_labeling(&lab, n);
    let yb = build_visibility(&xb, &ray).map_err(|e| e.to_string())?;
    let first = (0..len).find(|&i| lab.get(i) != FREE);
    for i in 0..len {
        for l in 0..n {
            let expect = match first {
                Some(k) if i > k => 0.0,
                Some(k) if i == k => (l == lab.get(k)) as u8 as f64,
                _ => (l == FREE) as u8 as f64,
            };
            ensure(yb[i * n + l] == expect, || {
                format!("binary y[{i}][{l}] = {}", yb[i * n + l])
            })?;
        }
    }
    for i in 0..len {
        let prev = if i == 0 { 1.0 } else { yb[(i - 1) * n + FREE] };
        let sum: f64 = yb[i * n..(i + 1) * n].iter().sum();
        ensure(sum == prev, || format!("tightness fails at {i}"))?;
    }

    // majorizer
    for _ in 0..20 {
        let (x0, y0) = (rng.gen_range(0.0..1.0f64), rng.gen_range(0.0..1.0f64));
        let tie = if rng.gen_bool(0.5) {
            Branch::Zero
        } else {
            Branch::Linear
        };
        let b = Branch::select(y0, x0, tie);
        ensure(
            (b.bound(y0, x0) - (y0 - x0).max(0.0)).abs() <= 1e-12,
            || "majorizer not tight".into(),
        )?;
        let (x1, y1) = (rng.gen_range(0.0..1.0f64), rng.gen_range(0.0..1.0f64));
        ensure(b.bound(y1, x1) <= (y1 - x1).max(0.0) + 1e-12, || {
            "majorizer above the max".into()
        })?;
    }

    // lowering one cost cannot raise the optimal ray term
    let mut lower = ray.clone();
    let (i, l) = (rng.gen_range(0..len), rng.gen_range(0..n));
    *lower.cost_mut(i, l) -= rng.gen_range(0.0..2.0);
    let e_low = ray_energy(
        &build_visibility(&x, &lower).map_err(|e| e.to_string())?,
        &lower,
    );
    ensure(e_low <= e + 1e-12, || {
        format!("lowering c[{i}][{l}] raised the energy {e} -> {e_low}")
    })
}

fn random_model<R: Rng>(rng: &mut R, n: usize) -> crate::regularizer::SmoothnessModel {
    let spec = RandomSpec {
        max_dims: [1, 1, 1],
        max_voxels: 1,
        max_labels: n,
        max_rays: 0,
        max_weight: 2.0,
    };
    loop {
        let inst = random_instance(rng, &spec);
        if inst.labels.count() == n {
            return inst.model;
        }
    }
}

/// Transition-gradient construction, penalty homogeneity and convexity, binary energies against a
/// neighbour scan, and invariance to common shifts of `z^{lm}` and `z^{ml}`.
pub fn regularizer_trial(rng: &mut ChaCha8Rng) -> Check {
    let grid = random_grid(rng, 3);
    let n = rng.gen_range(2..=4);
    let x = random_simplex_field(rng, &grid, n);
    let mut z0 = TransitionGradients::zeros(&grid, n);
    z0.values_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let (z, steps) = feasible_z_counted(&x, &z0).map_err(|e| e.to_string())?;
    let res = marginalization_residual(&x, &z);
    ensure(res <= 1e-8, || format!("marginalization residual {res:e}"))?;
    ensure(z.min_value() >= -1e-12, || {
        format!("negative entry {:e}", z.min_value())
    })?;
    ensure(steps <= (n - 1) * (n - 1), || {
        format!("{steps} substitutions for {n} labels")
    })?;

    let model = random_model(rng, n);
    for _ in 0..10 {
        let (l, m) = loop {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a < b {
                break (a, b);
            }
        };
        let v = [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0));
        let w = [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0));
        let a = rng.gen_range(0.0..5.0);
        let pv = model.phi(l, m, v);
        let lhs = model.phi(l, m, v.map(|c| a * c));
        ensure((lhs - a * pv).abs() <= 1e-9 * (1.0 + lhs.abs()), || {
            "penalty not 1-homogeneous".into()
        })?;
        let mid = [0, 1, 2].map(|k| 0.5 * (v[k] + w[k]));
        let rhs = 0.5 * (pv + model.phi(l, m, w));
        ensure(model.phi(l, m, mid) <= rhs + 1e-9 * (1.0 + rhs), || {
            "penalty not convex".into()
        })?;
        ensure(pv >= 0.0, || "negative penalty".into())?;
    }

    let lab = random_labeling(rng, &grid, n);
    let xb = LabelField::from_labeling(&lab, n);
    let zb = crate::regularizer::feasible_z(&xb, &TransitionGradients::zeros(&grid, n))
        .map_err(|e| e.to_string())?;
    let e = smoothness_energy(&zb, &model);
    let oracle = direct_smoothness(&grid, lab.labels(), &model);
    ensure((e - oracle).abs() <= 1e-9 * (1.0 + oracle), || {
        format!("binary energy {e} vs scan {oracle}")
    })?;

    let mut shifted = z.clone();
    let (s, k) = (rng.gen_range(0..grid.len()), rng.gen_range(0..3));
    let (l, m) = (0, n - 1);
    let t = rng.gen_range(0.0..1.0);
    let w = shifted.slice_mut(s, k);
    w[l * n + m] += t;
    w[m * n + l] += t;
    w[l * n + l] -= t;
    w[m * n + m] -= t;
    let before = smoothness_energy(&z, &model);
    let after = smoothness_energy(&shifted, &model);
    ensure((before - after).abs() <= 1e-9 * (1.0 + before), || {
        format!("shift changed energy {before} -> {after}")
    })?;
    ensure(marginalization_residual(&x, &shifted) <= 1e-8, || {
        "shift broke marginals".into()
    })
}

/// Feasibility construction on arbitrary states, monotone majorize-minimize, and reported
/// energies against an independent recomputation and the exhaustive optimum.
pub fn solver_trial(rng: &mut ChaCha8Rng) -> Check {
    let grid = random_grid(rng, 3);
    let n = rng.gen_range(2..=3);
    let mut x = LabelField::zeros(grid.clone(), n);
    x.values_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..2.0));
    let mut z = TransitionGradients::zeros(&grid, n);
    z.values_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut rays = Vec::new();
    for _ in 0..rng.gen_range(0..6) {
        let len = rng.gen_range(1..=grid.len().min(6));
        let mut r = random_ray(rng, len, n);
        // remap to random voxels of this grid
        let voxels: Vec<usize> = (0..r.len()).map(|_| rng.gen_range(0..grid.len())).collect();
        let costs = r.costs().to_vec();
        r = Ray::new(voxels, costs, r.free_cost(), n).expect("same shape");
        normalize(&mut r);
        rays.push(r);
    }
    let (xf, yf, zf) = make_feasible(&x, &z, &rays).map_err(|e| e.to_string())?;
    let model = random_model(rng, n);
    let rep = total_energy(&xf, &yf, &zf, &rays, &model);
    ensure(rep.max_residual() <= 1e-8, || {
        format!("feasible point residual {:e}", rep.max_residual())
    })?;

    mm_check(rng, RandomSpec::tiny(), true)
}

/// Majorize-minimize on one random instance: accepted energies never rise, the reported energy
/// matches a direct evaluation, and (when `exhaustive`) it is no better than the global optimum.
pub fn mm_check<R: Rng>(rng: &mut R, spec: RandomSpec, exhaustive: bool) -> Check {
    let inst = random_instance(rng, &spec);
    mm_check_instance(&inst, exhaustive).map(|_| ())
}

/// Outcome of [`mm_check_instance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmOutcome {
    pub final_energy: f64,
    pub optimum: Option<f64>,
}

pub fn mm_check_instance(
    inst: &crate::oracle::TinyInstance,
    exhaustive: bool,
) -> Result<MmOutcome, String> {
    let problem = inst.to_problem();
    let config = SolverConfig {
        max_outer: 60,
        ..SolverConfig::default()
    };
    let rec = reconstruct(&problem, &config).map_err(|e| e.to_string())?;
    for w in rec.accepted_energies.windows(2) {
        ensure(w[1] <= w[0] + 1e-9, || {
            format!("accepted energy rose {} -> {}", w[0], w[1])
        })?;
    }
    let direct = direct_energy(inst, rec.labeling.labels());
    let reported = rec.report.original_scale();
    ensure(
        (direct - reported).abs() <= 1e-9 * (1.0 + direct.abs()),
        || format!("reported {reported} vs direct {direct}"),
    )?;
    let again = labeling_energy(&rec.labeling, &problem).map_err(|e| e.to_string())?;
    ensure(again.max_residual() <= 1e-8, || {
        "rounded labeling infeasible".into()
    })?;
    let mut optimum = None;
    if exhaustive {
        let (_, best) = brute_force_minimize(inst).map_err(|e| e.to_string())?;
        ensure(reported >= best - 1e-9, || {
            format!("final {reported} below the global optimum {best}")
        })?;
        optimum = Some(best);
    }
    Ok(MmOutcome {
        final_energy: reported,
        optimum,
    })
}

/// The relaxation bounds the exhaustive optimum from below, and on binary points the direct ray
/// cost equals the greedy visibility evaluation for every labeling.
pub fn oracle_trial(rng: &mut ChaCha8Rng) -> Check {
    let spec = RandomSpec {
        max_dims: [2, 2, 2],
        max_voxels: 6,
        max_labels: 3,
        max_rays: 4,
        max_weight: 1.0,
    };
    let inst = random_instance(rng, &spec);
    let (_, best) = brute_force_minimize(&inst).map_err(|e| e.to_string())?;
    let (_, relaxed) = convex_relaxation_solve(&inst).map_err(|e| e.to_string())?;
    ensure(relaxed <= best + 1e-4 * (1.0 + best.abs()), || {
        format!("relaxation {relaxed} above the binary optimum {best}")
    })?;

    let n = inst.labels.count();
    let problem = inst.to_problem();
    let mut labels = vec![0u8; inst.grid.len()];
    loop {
        let lab = BinaryLabeling::new(inst.grid.clone(), labels.clone()).expect("sized");
        let x = LabelField::from_labeling(&lab, n);
        for (orig, norm) in inst.rays.iter().zip(&problem.rays) {
            let direct = direct_ray_cost(orig, &labels);
            let mut shifted = orig.clone();
            let c = normalize(&mut shifted);
            let y = build_visibility(&x, norm).map_err(|e| e.to_string())?;
            let greedy = ray_energy(&y, norm) + c;
            ensure((direct - greedy).abs() <= 1e-9, || {
                format!("ray cost {direct} vs greedy visibility {greedy}")
            })?;
        }
        // next labeling
        let mut pos = labels.len();
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            labels[pos] += 1;
            if (labels[pos] as usize) < n {
                break;
            }
            labels[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_and_is_deterministic() {
        let a = run_validation(7, 3);
        assert!(a.all_passed(), "{}", a.render());
        assert_eq!(a, run_validation(7, 3));
        assert!(run_validation(1, 0).suites.is_empty());
    }

    #[test]
    fn lattice_oracle_hits_exact_points() {
        assert_eq!(
            simplex_grid_oracle(&[0.5, 0.25, 0.25]),
            vec![0.5, 0.25, 0.25]
        );
        assert_eq!(simplex_grid_oracle(&[3.0, 0.0]), vec![1.0, 0.0]);
    }
}
