//! Per-ray cost tables and the cost normalizations that make every cost non-positive.

use crate::error::{Error, Result};
use crate::grid::FREE;

/// A viewing ray: the voxels it crosses (camera outward) and its cost table.
///
/// `costs` is position-major with one row of `n_labels` entries per position. Column 0 holds the
/// per-position free-space cost `c_i^f`, which is zero until [`transform_nonpositive`] moves mass
/// into it. `free_cost` is the cost of the whole ray being free space.
#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    voxels: Vec<usize>,
    costs: Vec<f64>,
    free_cost: f64,
    n_labels: usize,
}

impl Ray {
    pub fn new(
        voxels: Vec<usize>,
        costs: Vec<f64>,
        free_cost: f64,
        n_labels: usize,
    ) -> Result<Self> {
        if n_labels < 2 {
            return Err(Error::LabelSpace(format!(
                "ray needs at least 2 labels, got {n_labels}"
            )));
        }
        if costs.len() != voxels.len() * n_labels {
            return Err(Error::Shape(format!(
                "{} positions x {} labels needs {} costs, got {}",
                voxels.len(),
                n_labels,
                voxels.len() * n_labels,
                costs.len()
            )));
        }
        Ok(Ray {
            voxels,
            costs,
            free_cost,
            n_labels,
        })
    }

    /// Ray whose occupied labels all share one per-position cost and whose free costs are zero.
    pub fn with_occupied_costs(
        voxels: Vec<usize>,
        occupied: &[f64],
        n_labels: usize,
    ) -> Result<Self> {
        if occupied.len() != voxels.len() {
            return Err(Error::Shape(format!(
                "{} positions but {} costs",
                voxels.len(),
                occupied.len()
            )));
        }
        let mut costs = vec![0.0; voxels.len() * n_labels];
        for (i, &c) in occupied.iter().enumerate() {
            for l in 1..n_labels {
                costs[i * n_labels + l] = c;
            }
        }
        Self::new(voxels, costs, 0.0, n_labels)
    }

    /// Number of positions `N_r + 1`.
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn voxel(&self, i: usize) -> usize {
        self.voxels[i]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cost(&self, i: usize, label: usize) -> f64 {
        self.costs[i * self.n_labels + label]
    }

    pub fn cost_mut(&mut self, i: usize, label: usize) -> &mut f64 {
        &mut self.costs[i * self.n_labels + label]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.costs[i * self.n_labels..(i + 1) * self.n_labels]
    }

    pub fn free_cost(&self) -> f64 {
        self.free_cost
    }

    /// Potential of the configuration whose first occupied voxel is `first = (position, label)`,
    /// or of the all-free ray when `first` is `None`.
    ///
    /// Sums the free-space costs of the visible prefix plus the cost of the first occupied entry.
    pub fn configuration_cost(&self, first: Option<(usize, usize)>) -> f64 {
        match first {
            Some((k, l)) => {
                debug_assert!(l != FREE);
                (0..k).map(|i| self.cost(i, FREE)).sum::<f64>() + self.cost(k, l)
            }
            None => (0..self.len()).map(|i| self.cost(i, FREE)).sum::<f64>() + self.free_cost,
        }
    }

    /// Potential for a binary labeling given as a label lookup per voxel.
    pub fn labeling_cost(&self, label_of: impl Fn(usize) -> usize) -> f64 {
        let first = self.voxels.iter().enumerate().find_map(|(i, &s)| {
            let l = label_of(s);
            (l != FREE).then_some((i, l))
        });
        self.configuration_cost(first)
    }

    /// Drop trailing positions whose costs are all zero. Exact when `free_cost == 0`: such positions
    /// add nothing to any configuration.
    pub fn trim_trailing(&mut self) {
        if self.free_cost != 0.0 {
            return;
        }
        let mut keep = self.len();
        while keep > 0 && self.row(keep - 1).iter().all(|&c| c == 0.0) {
            keep -= 1;
        }
        self.voxels.truncate(keep);
        self.costs.truncate(keep * self.n_labels);
    }
}

/// `min(0, lambda |i - i'| - K)` for every position `i` of a ray with `len` positions.
pub fn build_depth_costs(len: usize, depth_index: usize, lambda: f64, k: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let dist = (i as f64 - depth_index as f64).abs();
            (lambda * dist - k).min(0.0)
        })
        .collect()
}

/// Add `scores[l - 1]` to every occupied label `l` at every position.
pub fn add_semantic_costs(ray: &mut Ray, scores: &[f64]) -> Result<()> {
    let n = ray.n_labels;
    if scores.len() != n - 1 {
        return Err(Error::ScoreCount {
            expected: n - 1,
            got: scores.len(),
        });
    }
    for row in ray.costs.chunks_mut(n) {
        for (c, s) in row[1..].iter_mut().zip(scores) {
            *c += s;
        }
    }
    Ok(())
}

/// Move the all-free cost into the per-position costs: `c_i^l -= c^f`, `c^f = 0`.
///
/// Returns the removed constant; the original potential is the shifted one plus it.
pub fn shift_free_cost(ray: &mut Ray) -> f64 {
    let shift = ray.free_cost;
    if shift != 0.0 {
        let n = ray.n_labels;
        for row in ray.costs.chunks_mut(n) {
            for c in &mut row[1..] {
                *c -= shift;
            }
        }
        ray.free_cost = 0.0;
    }
    shift
}

/// Back-to-front rewrite that makes every cost non-positive without changing the minimizer.
///
/// For `i = N..0`: `M = max_l c_i^l`, `c_i^l -= M` for all labels and `c_{i-1}^f += M`; the `M`
/// pushed past position 0 is returned. The original potential equals the new one plus that
/// constant. Requires `free_cost == 0` (see [`shift_free_cost`]).
pub fn transform_nonpositive(ray: &mut Ray) -> f64 {
    debug_assert!(ray.free_cost == 0.0);
    let n = ray.n_labels;
    let mut carry = 0.0;
    for i in (0..ray.len()).rev() {
        let row = &mut ray.costs[i * n..(i + 1) * n];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for c in row.iter_mut() {
            *c -= m;
        }
        if i > 0 {
            ray.costs[(i - 1) * n + FREE] += m;
        } else {
            carry = m;
        }
    }
    carry
}

/// Shift then transform; returns the total omitted constant.
pub fn normalize(ray: &mut Ray) -> f64 {
    let shift = shift_free_cost(ray);
    let carry = transform_nonpositive(ray);
    shift + carry
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Brute-force potential over every first-occupied configuration.
    fn all_configs(ray: &Ray) -> Vec<f64> {
        let mut out = vec![ray.configuration_cost(None)];
        for i in 0..ray.len() {
            for l in 1..ray.n_labels() {
                out.push(ray.configuration_cost(Some((i, l))));
            }
        }
        out
    }

    fn random_ray(rng: &mut ChaCha8Rng) -> Ray {
        let len = rng.gen_range(1..=7);
        let n = rng.gen_range(2..=4);
        let costs: Vec<f64> = (0..len * n)
            .map(|j| {
                if j % n == 0 {
                    0.0
                } else {
                    rng.gen_range(-4.0..4.0)
                }
            })
            .collect();
        let free = rng.gen_range(-3.0..3.0);
        Ray::new((0..len).collect(), costs, free, n).unwrap()
    }

    #[test]
    fn depth_cost_formula() {
        let c = build_depth_costs(10, 5, 1.0, 3.0);
        assert_eq!(c[5], -3.0);
        assert_eq!(c[3], -1.0);
        assert_eq!(c[7], -1.0);
        assert_eq!(c[9], 0.0);
        assert!(build_depth_costs(8, 2, 1.0, -0.5).iter().all(|&v| v == 0.0));
        assert!(build_depth_costs(8, 2, 0.0, 2.0).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn semantic_costs_added_to_occupied_only() {
        let mut ray = Ray::with_occupied_costs(vec![0, 1, 2], &[0.0; 3], 3).unwrap();
        add_semantic_costs(&mut ray, &[-1.0, -2.0]).unwrap();
        for i in 0..3 {
            assert_eq!(ray.row(i), &[0.0, -1.0, -2.0]);
        }
        let before = ray.clone();
        add_semantic_costs(&mut ray, &[0.0, 0.0]).unwrap();
        assert_eq!(ray, before);
        assert!(matches!(
            add_semantic_costs(&mut ray, &[1.0]),
            Err(Error::ScoreCount {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn combined_costs_match_pointwise_formula() {
        let (lambda, k) = (0.7, 2.5);
        let sigma = [0.3, -1.2];
        let depth = build_depth_costs(9, 4, lambda, k);
        let mut ray = Ray::with_occupied_costs((0..9).collect(), &depth, 3).unwrap();
        add_semantic_costs(&mut ray, &sigma).unwrap();
        for i in 0..9 {
            for l in 1..3 {
                let expected = (lambda * (i as f64 - 4.0).abs() - k).min(0.0) + sigma[l - 1];
                assert!((ray.cost(i, l) - expected).abs() < 1e-15);
            }
            assert_eq!(ray.cost(i, FREE), 0.0);
        }
    }

    #[test]
    fn shift_examples() {
        let mut ray = Ray::with_occupied_costs(vec![0, 1], &[-2.0, -2.0], 2).unwrap();
        let before = ray.clone();
        assert_eq!(shift_free_cost(&mut ray), 0.0);
        assert_eq!(ray, before);

        let mut ray = Ray::new(vec![0, 1], vec![0.0, -2.0, 0.0, -2.0], 4.0, 2).unwrap();
        let original = all_configs(&ray);
        assert_eq!(shift_free_cost(&mut ray), 4.0);
        assert_eq!(ray.cost(0, 1), -6.0);
        assert_eq!(ray.free_cost(), 0.0);
        for (a, b) in all_configs(&ray).iter().zip(&original) {
            assert_eq!(a + 4.0, *b);
        }
    }

    #[test]
    fn transform_worked_example() {
        let mut ray = Ray::new(vec![0, 1], vec![0.0, -1.0, 0.0, 2.0], 0.0, 2).unwrap();
        let original = all_configs(&ray);
        let constant = transform_nonpositive(&mut ray);
        assert_eq!(constant, 2.0);
        assert_eq!(ray.row(0), &[0.0, -3.0]);
        assert_eq!(ray.row(1), &[-2.0, 0.0]);
        for (a, b) in all_configs(&ray).iter().zip(&original) {
            assert_eq!(a + 2.0, *b);
        }
    }

    #[test]
    fn transform_identity_on_nonpositive_costs() {
        let mut ray = Ray::with_occupied_costs(vec![0, 1, 2], &[-1.0, 0.0, -3.0], 2).unwrap();
        let before = ray.clone();
        assert_eq!(transform_nonpositive(&mut ray), 0.0);
        assert_eq!(ray, before);
    }

    #[test]
    fn normalization_exact_on_random_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut ray = random_ray(&mut rng);
            let original = all_configs(&ray);
            let constant = normalize(&mut ray);
            assert!(ray.costs().iter().all(|&c| c <= 0.0));
            assert_eq!(ray.free_cost(), 0.0);
            for i in 0..ray.len() {
                let m = ray.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(m, 0.0);
            }
            for (a, b) in all_configs(&ray).iter().zip(&original) {
                assert!((a + constant - b).abs() <= 1e-12);
            }
            // argmin preserved
            let argmin = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .min_by(|p, q| p.1.partial_cmp(q.1).unwrap())
                    .unwrap()
                    .0
            };
            let shifted: Vec<f64> = all_configs(&ray);
            assert_eq!(original[argmin(&original)], original[argmin(&shifted)],);
            // idempotent
            let again = ray.clone();
            let mut twice = ray.clone();
            assert_eq!(normalize(&mut twice), 0.0);
            assert_eq!(twice, again);
        }
    }

    #[test]
    fn trimming_preserves_every_labeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let len = rng.gen_range(1..8);
            let hit = rng.gen_range(0..len);
            let depth = build_depth_costs(len, hit, 1.0, 2.0);
            let mut ray = Ray::with_occupied_costs((0..len).collect(), &depth, 2).unwrap();
            normalize(&mut ray);
            let full = ray.clone();
            ray.trim_trailing();
            assert!(ray.len() <= hit + 2);
            for mask in 0..(1u32 << len) {
                let label_of = |s: usize| ((mask >> s) & 1) as usize;
                assert_eq!(full.labeling_cost(label_of), ray.labeling_cost(label_of));
            }
        }
    }
}
