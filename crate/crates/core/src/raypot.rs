//! Visibility variables along rays, the visibility-consistency constraint and its linear majorizer.
//!
//! For a ray with positions `0..=N` the visibility variable `y_i^l` says "everything before `i` is
//! free space and label `l` sits at `i`". Visibility is anchored by `y_{-1}^f = 1`. A feasible
//! assignment satisfies the box constraints
//!
//! ```text
//! 0 <= y_i^l <= y_{i-1}^f,    y_i^l <= x_{s_i}^l
//! ```
//!
//! and the (non-convex) visibility-consistency inequality
//!
//! ```text
//! sum_{l != f} y_i^l <= max(0, y_{i-1}^f - x_{s_i}^f).
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelField, FREE};
use crate::ray::Ray;

/// Branch of the linear majorizer `g` at one ray position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `g = 0`: no occupied label may become visible here.
    Zero,
    /// `g = y_{i-1}^f - x_{s_i}^f`.
    Linear,
}

impl Branch {
    /// The branch chosen at linearization point `(x^f, y_{i-1}^f)`; `tie` applies when they are equal.
    pub fn select(prev_free: f64, x_free: f64, tie: Branch) -> Branch {
        if prev_free > x_free {
            Branch::Linear
        } else if prev_free < x_free {
            Branch::Zero
        } else {
            tie
        }
    }

    /// The surrogate upper bound on the visible occupied mass.
    pub fn bound(self, prev_free: f64, x_free: f64) -> f64 {
        match self {
            Branch::Zero => 0.0,
            Branch::Linear => prev_free - x_free,
        }
    }
}

/// Visibility variables of a set of rays, flattened position-major with labels contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityField {
    n_labels: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl VisibilityField {
    /// All-zero field shaped after `rays`.
    pub fn zeros(rays: &[Ray], n_labels: usize) -> Self {
        let mut offsets = Vec::with_capacity(rays.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for r in rays {
            total += r.len();
            offsets.push(total);
        }
        VisibilityField {
            n_labels,
            offsets,
            values: vec![0.0; total * n_labels],
        }
    }

    pub fn n_rays(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    /// Index of the first position of each ray in the flattened position list, plus the total.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn ray(&self, r: usize) -> &[f64] {
        &self.values[self.offsets[r] * self.n_labels..self.offsets[r + 1] * self.n_labels]
    }

    pub fn ray_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[self.offsets[r] * self.n_labels..self.offsets[r + 1] * self.n_labels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Per-position majorizer branches, laid out like [`VisibilityField`] positions.
#[derive(Clone, Debug, PartialEq)]
pub struct MajorizerState {
    offsets: Vec<usize>,
    flags: Vec<Branch>,
}

impl MajorizerState {
    /// The same branch at every position.
    pub fn uniform(offsets: &[usize], branch: Branch) -> Self {
        MajorizerState {
            offsets: offsets.to_vec(),
            flags: vec![branch; *offsets.last().unwrap_or(&0)],
        }
    }

    pub fn ray(&self, r: usize) -> &[Branch] {
        &self.flags[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn flags(&self) -> &[Branch] {
        &self.flags
    }

    pub fn count(&self, branch: Branch) -> usize {
        self.flags.iter().filter(|&&b| b == branch).count()
    }
}

/// Visible-surface variables minimizing the ray potential for fixed `x`.
///
/// Free space takes the nested minimum `y_i^f = min_{j <= i} x_{s_j}^f`. At each position the
/// occupied labels with non-positive cost are then filled greedily, most negative cost first (ties
/// to the smaller label), up to `x_{s_i}^l` and the remaining visibility capacity
/// `max(0, y_{i-1}^f - x_{s_i}^f)`. Requires `x >= 0`; the simplex sum is not needed.
pub fn build_visibility(x: &LabelField, ray: &Ray) -> Result<Vec<f64>> {
    let mut y = vec![0.0; ray.len() * ray.n_labels()];
    fill_visibility(x, ray, &mut y)?;
    Ok(y)
}

/// [`build_visibility`] writing into a caller-provided slice.
pub fn fill_visibility(x: &LabelField, ray: &Ray, y: &mut [f64]) -> Result<()> {
    let n = ray.n_labels();
    debug_assert_eq!(y.len(), ray.len() * n);
    let mut order: Vec<usize> = (1..n).collect();
    let mut prev_free: f64 = 1.0;
    for i in 0..ray.len() {
        let s = ray.voxel(i);
        let xs = x.voxel(s);
        if let Some(l) = xs.iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeEntry {
                voxel: s,
                label: l,
                value: xs[l],
            });
        }
        let row = &mut y[i * n..(i + 1) * n];
        row.fill(0.0);
        let free = prev_free.min(xs[FREE]);
        row[FREE] = free;
        let mut capacity = (prev_free - xs[FREE]).max(0.0);
        order.sort_by(|&a, &b| {
            ray.cost(i, a)
                .partial_cmp(&ray.cost(i, b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &l in &order {
            if capacity <= 0.0 || ray.cost(i, l) > 0.0 {
                break;
            }
            let v = xs[l].min(capacity);
            row[l] = v;
            capacity -= v;
        }
        prev_free = free;
    }
    Ok(())
}

/// `sum_{i,l} c_i^l y_i^l`.
pub fn ray_energy(y: &[f64], ray: &Ray) -> f64 {
    debug_assert_eq!(y.len(), ray.costs().len());
    y.iter().zip(ray.costs()).map(|(a, c)| a * c).sum()
}

/// Worst constraint violations of one ray's visibility assignment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Violation {
    /// Excess of visible occupied mass over `max(0, y_{i-1}^f - x_{s_i}^f)`.
    pub visibility: f64,
    /// Largest breach of `0 <= y_i^l <= y_{i-1}^f` and `y_i^l <= x_{s_i}^l`.
    pub bounds: f64,
}

impl Violation {
    pub fn worst(&self) -> f64 {
        self.visibility.max(self.bounds)
    }

    pub fn merge(self, other: Violation) -> Violation {
        Violation {
            visibility: self.visibility.max(other.visibility),
            bounds: self.bounds.max(other.bounds),
        }
    }
}

pub fn check_consistency(x: &LabelField, y: &[f64], ray: &Ray) -> Violation {
    let n = ray.n_labels();
    let mut out = Violation::default();
    let mut prev_free = 1.0;
    for i in 0..ray.len() {
        let xs = x.voxel(ray.voxel(i));
        let row = &y[i * n..(i + 1) * n];
        let occupied: f64 = row[1..].iter().sum();
        let excess = occupied - (prev_free - xs[FREE]).max(0.0);
        out.visibility = out.visibility.max(excess);
        for l in 0..n {
            let b = (-row[l]).max(row[l] - prev_free).max(row[l] - xs[l]);
            out.bounds = out.bounds.max(b);
        }
        prev_free = row[FREE];
    }
    out
}

/// Branches of the majorizer linearized at `(x, y)` for one ray.
pub fn majorize_ray(x: &LabelField, y: &[f64], ray: &Ray, tie: Branch) -> Vec<Branch> {
    let n = ray.n_labels();
    let mut prev_free = 1.0;
    (0..ray.len())
        .map(|i| {
            let b = Branch::select(prev_free, x.get(ray.voxel(i), FREE), tie);
            prev_free = y[i * n + FREE];
            b
        })
        .collect()
}

/// Branches for every ray.
pub fn majorize(x: &LabelField, y: &VisibilityField, rays: &[Ray], tie: Branch) -> MajorizerState {
    let mut flags = Vec::with_capacity(*y.offsets().last().unwrap_or(&0));
    for (r, ray) in rays.iter().enumerate() {
        flags.extend(majorize_ray(x, y.ray(r), ray, tie));
    }
    MajorizerState {
        offsets: y.offsets().to_vec(),
        flags,
    }
}
