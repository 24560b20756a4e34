//! Exhaustive minimization on tiny instances, the plain convex relaxation, slice images and
//! random instance generators.

use rand::Rng;

use crate::camera::traverse;
use crate::error::{Error, Result};
use crate::grid::{BinaryLabeling, LabelField, LabelSpace, VoxelGrid, FREE};
use crate::ray::{normalize, Ray};
use crate::regularizer::{SmoothnessModel, SurfacePenalty};
use crate::solver::{relaxation_solve, Problem};

/// Largest number of labelings [`brute_force_minimize`] will enumerate (`3^12`).
pub const ENUMERATION_BOUND: u128 = 531_441;
pub const MAX_TINY_VOXELS: usize = 12;
pub const MAX_TINY_LABELS: usize = 3;

/// Iterations used by [`convex_relaxation_solve`].
pub const RELAXATION_ITERS: usize = 40_000;

/// A problem small enough to enumerate.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub grid: VoxelGrid,
    pub labels: LabelSpace,
    pub rays: Vec<Ray>,
    pub model: SmoothnessModel,
}

impl TinyInstance {
    pub fn labeling_count(&self) -> u128 {
        (self.labels.count() as u128).saturating_pow(self.grid.len() as u32)
    }

    fn check(&self) -> Result<()> {
        let count = self.labeling_count();
        if self.grid.len() > MAX_TINY_VOXELS
            || self.labels.count() > MAX_TINY_LABELS
            || count > ENUMERATION_BOUND
        {
            return Err(Error::EnumerationBound(count));
        }
        Ok(())
    }

    /// The same instance as a solver problem, rays normalized.
    pub fn to_problem(&self) -> Problem {
        let mut omitted = 0.0;
        let rays = self
            .rays
            .iter()
            .map(|r| {
                let mut r = r.clone();
                omitted += normalize(&mut r);
                r
            })
            .collect();
        Problem {
            grid: self.grid.clone(),
            labels: self.labels.clone(),
            rays,
            model: self.model.clone(),
            omitted_constants: omitted,
        }
    }
}

/// Cost of a ray for a binary labeling, read straight off the table: the free-space costs up to
/// the first occupied voxel plus that voxel's cost, or the all-free cost.
pub fn direct_ray_cost(ray: &Ray, labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for i in 0..ray.len() {
        let l = labels[ray.voxel(i)] as usize;
        if l != FREE {
            return total + ray.cost(i, l);
        }
        total += ray.cost(i, FREE);
    }
    total + ray.free_cost()
}

/// Regularizer of a binary labeling: per voxel and label pair, the penalty of the signed axis
/// vector of transitions to its forward neighbours (none past the upper boundary).
pub fn direct_smoothness(grid: &VoxelGrid, labels: &[u8], model: &SmoothnessModel) -> f64 {
    let n = model.n_labels();
    let dims = grid.dims();
    let mut total = 0.0;
    for s in 0..grid.len() {
        let idx = grid.delinearize(s);
        let a = labels[s] as usize;
        let mut v = vec![[0.0f64; 3]; n * n];
        for k in 0..3 {
            if idx[k] + 1 >= dims[k] {
                continue;
            }
            let mut j = idx;
            j[k] += 1;
            let b = labels[grid.linearize(j)] as usize;
            if a < b {
                v[a * n + b][k] += 1.0;
            } else if b < a {
                v[b * n + a][k] -= 1.0;
            }
        }
        for l in 0..n {
            for m in l + 1..n {
                if v[l * n + m] != [0.0; 3] {
                    total += model.phi(l, m, v[l * n + m]);
                }
            }
        }
    }
    total
}

/// Energy of a labeling evaluated without any solver machinery.
pub fn direct_energy(inst: &TinyInstance, labels: &[u8]) -> f64 {
    let rays: f64 = inst.rays.iter().map(|r| direct_ray_cost(r, labels)).sum();
    rays + direct_smoothness(&inst.grid, labels, &inst.model)
}

/// Global minimizer over all labelings; ties go to the lexicographically smallest labeling.
pub fn brute_force_minimize(inst: &TinyInstance) -> Result<(BinaryLabeling, f64)> {
    inst.check()?;
    let v = inst.grid.len();
    let n = inst.labels.count() as u8;
    let mut labels = vec![0u8; v];
    let mut best = labels.clone();
    let mut best_e = direct_energy(inst, &labels);
    // odometer with voxel 0 most significant visits labelings in lexicographic order
    loop {
        let mut pos = v;
        loop {
            if pos == 0 {
                let lab = BinaryLabeling::new(inst.grid.clone(), best)?;
                return Ok((lab, best_e));
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < n {
                break;
            }
            labels[pos] = 0;
        }
        let e = direct_energy(inst, &labels);
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&labels);
        }
    }
}

/// The convex relaxation with the visibility-consistency constraint dropped; returns the relaxed
/// field and its energy on the original cost scale.
pub fn convex_relaxation_solve(inst: &TinyInstance) -> Result<(LabelField, f64)> {
    let problem = inst.to_problem();
    let (x, report) = relaxation_solve(&problem, RELAXATION_ITERS)?;
    Ok((x, report.total + problem.omitted_constants))
}

/// 8-bit image of the free-space channel on the slice `index` across `axis`, `255 x^f` rounded
/// half away from zero.
///
/// Image axes are the remaining grid axes in increasing order (columns, then rows), row 0 first.
pub fn slice_export(x: &LabelField, axis: usize, index: usize) -> Result<(usize, usize, Vec<u8>)> {
    let grid = x.grid();
    let dims = grid.dims();
    if axis > 2 {
        return Err(Error::OutOfBounds {
            axis: 3,
            index: axis,
            size: 3,
        });
    }
    if index >= dims[axis] {
        return Err(Error::OutOfBounds {
            axis,
            index,
            size: dims[axis],
        });
    }
    let (cu, cv) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (w, h) = (dims[cu], dims[cv]);
    let mut px = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let mut idx = [0; 3];
            idx[axis] = index;
            idx[cu] = col;
            idx[cv] = row;
            let f = x.get(grid.linearize(idx), FREE).clamp(0.0, 1.0);
            px.push((255.0 * f).round() as u8);
        }
    }
    Ok((w, h, px))
}

/// Knobs for [`random_instance`].
#[derive(Clone, Copy, Debug)]
pub struct RandomSpec {
    /// Inclusive upper bound per grid axis.
    pub max_dims: [usize; 3],
    pub max_voxels: usize,
    pub max_labels: usize,
    pub max_rays: usize,
    pub max_weight: f64,
}

impl RandomSpec {
    /// Instances within the enumeration bound.
    pub fn tiny() -> Self {
        RandomSpec {
            max_dims: [3, 2, 2],
            max_voxels: MAX_TINY_VOXELS,
            max_labels: MAX_TINY_LABELS,
            max_rays: 8,
            max_weight: 1.0,
        }
    }
}

/// Random instance: grid, label count, isotropic or anisotropic pair penalties, and rays cast
/// from outside the grid toward random interior points with random (un-normalized) costs.
pub fn random_instance<R: Rng>(rng: &mut R, spec: &RandomSpec) -> TinyInstance {
    let dims = loop {
        let d = [0, 1, 2].map(|k| rng.gen_range(1..=spec.max_dims[k]));
        if d[0] * d[1] * d[2] <= spec.max_voxels {
            break d;
        }
    };
    let grid = VoxelGrid::unit(dims).expect("positive dims");
    let n = rng.gen_range(2..=spec.max_labels.max(2));
    let mut labels = n;
    // tiny specs must stay enumerable
    while (labels as u128).saturating_pow(grid.len() as u32) > ENUMERATION_BOUND
        && spec.max_voxels <= MAX_TINY_VOXELS
    {
        labels -= 1;
    }
    let n = labels;
    let penalties = (0..n * (n - 1) / 2)
        .map(|_| {
            let weight = rng.gen_range(0.0..=spec.max_weight);
            if rng.gen_bool(0.7) {
                SurfacePenalty::Isotropic { weight }
            } else {
                let d = [0, 1, 2].map(|_| rng.gen_range(0.1..=spec.max_weight.max(0.2)));
                let c = 0.05 * d[0].min(d[1]);
                SurfacePenalty::Anisotropic {
                    matrix: [[d[0], c, 0.0], [c, d[1], 0.0], [0.0, 0.0, d[2]]],
                }
            }
        })
        .collect();
    let model = SmoothnessModel::new(n, penalties).expect("pair count matches");
    let n_rays = rng.gen_range(0..=spec.max_rays);
    let mut rays = Vec::with_capacity(n_rays);
    while rays.len() < n_rays {
        let target = [0, 1, 2].map(|k| rng.gen_range(0.0..dims[k] as f64));
        let dir = loop {
            let d = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0f64));
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if norm > 0.1 {
                break d.map(|c| c / norm);
            }
        };
        let back = 2.0 * (dims[0] + dims[1] + dims[2]) as f64;
        let origin = [0, 1, 2].map(|k| target[k] - back * dir[k]);
        let voxels: Vec<usize> = traverse(&grid, origin, dir)
            .iter()
            .map(|h| h.linear)
            .collect();
        if voxels.is_empty() {
            continue;
        }
        let costs = (0..voxels.len() * n)
            .map(|j| {
                if j % n == FREE {
                    0.0
                } else {
                    rng.gen_range(-4.0..1.0)
                }
            })
            .collect();
        let free_cost = rng.gen_range(-1.0..1.0);
        rays.push(Ray::new(voxels, costs, free_cost, n).expect("sized above"));
    }
    TinyInstance {
        grid,
        labels: LabelSpace::new(n).expect("at least two labels"),
        rays,
        model,
    }
}

/// Uniformly random labeling.
pub fn random_labeling<R: Rng>(rng: &mut R, grid: &VoxelGrid, n_labels: usize) -> BinaryLabeling {
    let labels = (0..grid.len())
        .map(|_| rng.gen_range(0..n_labels) as u8)
        .collect();
    BinaryLabeling::new(grid.clone(), labels).expect("sized to the grid")
}

/// The three-voxel single-ray instance with occupied costs `(-2, -3, -2)` and no regularizer.
pub fn weak_relaxation_instance() -> TinyInstance {
    let grid = VoxelGrid::unit([3, 1, 1]).expect("positive dims");
    let ray = Ray::with_occupied_costs(vec![0, 1, 2], &[-2.0, -3.0, -2.0], 2).expect("sized");
    TinyInstance {
        grid,
        labels: LabelSpace::new(2).expect("two labels"),
        rays: vec![ray],
        model: SmoothnessModel::uniform(2, 0.0).expect("two labels"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::labeling_energy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weak_instance_binary_optimum() {
        let (lab, e) = brute_force_minimize(&weak_relaxation_instance()).unwrap();
        assert_eq!(lab.labels(), &[0, 1, 0]);
        assert_eq!(e, -3.0);
    }

    #[test]
    fn zero_costs_give_constant_labeling() {
        let mut inst = weak_relaxation_instance();
        inst.rays = vec![Ray::with_occupied_costs(vec![0, 1, 2], &[0.0; 3], 2).unwrap()];
        inst.model = SmoothnessModel::uniform(2, 1.0).unwrap();
        let (lab, e) = brute_force_minimize(&inst).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(lab.labels(), &[0, 0, 0]);
    }

    #[test]
    fn brute_force_beats_random_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut spec = RandomSpec::tiny();
            spec.max_dims = [2, 2, 1];
            let inst = random_instance(&mut rng, &spec);
            let (_, best) = brute_force_minimize(&inst).unwrap();
            for _ in 0..100 {
                let lab = random_labeling(&mut rng, &inst.grid, inst.labels.count());
                assert!(best <= direct_energy(&inst, lab.labels()));
            }
        }
    }

    #[test]
    fn direct_energy_matches_solver_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let inst = random_instance(&mut rng, &RandomSpec::tiny());
            let prob = inst.to_problem();
            let lab = random_labeling(&mut rng, &inst.grid, inst.labels.count());
            let direct = direct_energy(&inst, lab.labels());
            let via = labeling_energy(&lab, &prob).unwrap().original_scale();
            assert!(
                (direct - via).abs() <= 1e-9 * (1.0 + direct.abs()),
                "{direct} vs {via}"
            );
        }
    }

    #[test]
    fn bound_enforced() {
        let mut inst = weak_relaxation_instance();
        inst.grid = VoxelGrid::unit([13, 1, 1]).unwrap();
        assert!(matches!(
            brute_force_minimize(&inst),
            Err(Error::EnumerationBound(_))
        ));
    }

    #[test]
    fn slices() {
        let grid = VoxelGrid::unit([3, 2, 2]).unwrap();
        let free = LabelField::from_labeling(&BinaryLabeling::constant(grid.clone(), 0), 2);
        let (w, h, px) = slice_export(&free, 2, 1).unwrap();
        assert_eq!((w, h), (3, 2));
        assert!(px.iter().all(|&p| p == 255));
        let half = LabelField::from_values(grid.clone(), 2, vec![0.5; 24]).unwrap();
        let (_, _, px) = slice_export(&half, 0, 2).unwrap();
        assert_eq!(px, vec![128; 4]);
        assert!(slice_export(&half, 1, 2).is_err());
    }
}
