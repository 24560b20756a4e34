//! Label space, voxel-grid geometry and the relaxed per-voxel label field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label index of free space.
pub const FREE: usize = 0;

/// The set of labels `{0, 1, .., L}`; label 0 is free space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    count: usize,
    names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::LabelSpace(format!(
                "need at least 2 labels (free space plus one occupied), got {count}"
            )));
        }
        Ok(LabelSpace { count, names: None })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut space = Self::new(names.len())?;
        space.names = Some(names);
        Ok(space)
    }

    /// Total number of labels, free space included.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Number of occupied labels (`L`).
    pub fn occupied(&self) -> usize {
        self.count - 1
    }

    pub fn free_space_id(&self) -> usize {
        FREE
    }

    pub fn name(&self, label: usize) -> String {
        match &self.names {
            Some(names) => names[label].clone(),
            None if label == FREE => "free".to_string(),
            None => format!("label{label}"),
        }
    }
}

/// Regular grid of isotropic cubic voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    dims: [usize; 3],
    origin: [f64; 3],
    voxel_size: f64,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: f64) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Grid(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Grid(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Grid(format!(
                "origin must be finite, got {origin:?}"
            )));
        }
        Ok(VoxelGrid {
            dims,
            origin,
            voxel_size,
        })
    }

    /// Grid with unit voxels and its corner at the world origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [0.0; 3], 1.0)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, idx: [i64; 3]) -> bool {
        (0..3).all(|k| idx[k] >= 0 && (idx[k] as usize) < self.dims[k])
    }

    /// x-fastest linear index.
    pub fn linearize(&self, idx: [usize; 3]) -> usize {
        debug_assert!((0..3).all(|k| idx[k] < self.dims[k]));
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    pub fn delinearize(&self, lin: usize) -> [usize; 3] {
        let x = lin % self.dims[0];
        let rest = lin / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Linear index of the `+e_axis` neighbour, or `None` at the upper boundary.
    pub fn forward_neighbor(&self, lin: usize, axis: usize) -> Option<usize> {
        let idx = self.delinearize(lin);
        if idx[axis] + 1 >= self.dims[axis] {
            return None;
        }
        Some(lin + self.stride(axis))
    }

    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    /// World-space lower corner of the grid box.
    pub fn lower(&self) -> [f64; 3] {
        self.origin
    }

    /// World-space upper corner of the grid box.
    pub fn upper(&self) -> [f64; 3] {
        [
            self.origin[0] + self.dims[0] as f64 * self.voxel_size,
            self.origin[1] + self.dims[1] as f64 * self.voxel_size,
            self.origin[2] + self.dims[2] as f64 * self.voxel_size,
        ]
    }

    /// World-space center of a voxel.
    pub fn center(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + (idx[0] as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (idx[1] as f64 + 0.5) * self.voxel_size,
            self.origin[2] + (idx[2] as f64 + 0.5) * self.voxel_size,
        ]
    }

    /// Voxel containing a world point, if inside the grid.
    pub fn locate(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[k] as f64) {
                return None;
            }
            idx[k] = f as usize;
        }
        Some(idx)
    }
}

/// Relaxed indicator variables `x_s^l`, stored voxel-major with labels contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelField {
    grid: VoxelGrid,
    n_labels: usize,
    values: Vec<f64>,
}

impl LabelField {
    pub fn from_values(grid: VoxelGrid, n_labels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * n_labels {
            return Err(Error::Shape(format!(
                "label field needs {} values, got {}",
                grid.len() * n_labels,
                values.len()
            )));
        }
        Ok(LabelField {
            grid,
            n_labels,
            values,
        })
    }

    pub fn zeros(grid: VoxelGrid, n_labels: usize) -> Self {
        let values = vec![0.0; grid.len() * n_labels];
        LabelField {
            grid,
            n_labels,
            values,
        }
    }

    /// One-hot field of a binary labeling.
    pub fn from_labeling(labeling: &BinaryLabeling, n_labels: usize) -> Self {
        let mut field = Self::zeros(labeling.grid.clone(), n_labels);
        for (s, &l) in labeling.labels.iter().enumerate() {
            field.values[s * n_labels + l as usize] = 1.0;
        }
        field
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn get(&self, voxel: usize, label: usize) -> f64 {
        self.values[voxel * self.n_labels + label]
    }

    pub fn set(&mut self, voxel: usize, label: usize, value: f64) {
        self.values[voxel * self.n_labels + label] = value;
    }

    pub fn voxel(&self, voxel: usize) -> &[f64] {
        &self.values[voxel * self.n_labels..(voxel + 1) * self.n_labels]
    }

    pub fn voxel_mut(&mut self, voxel: usize) -> &mut [f64] {
        &mut self.values[voxel * self.n_labels..(voxel + 1) * self.n_labels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Largest deviation from the simplex constraint (box and sum) over all voxels.
    pub fn simplex_residual(&self) -> f64 {
        self.values
            .chunks(self.n_labels)
            .map(|v| {
                let sum: f64 = v.iter().sum();
                let box_viol = v
                    .iter()
                    .map(|&a| (-a).max(a - 1.0).max(0.0))
                    .fold(0.0, f64::max);
                (sum - 1.0).abs().max(box_viol)
            })
            .fold(0.0, f64::max)
    }
}

/// One label per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryLabeling {
    grid: VoxelGrid,
    labels: Vec<u8>,
}

impl BinaryLabeling {
    pub fn new(grid: VoxelGrid, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::Shape(format!(
                "labeling needs {} voxels, got {}",
                grid.len(),
                labels.len()
            )));
        }
        Ok(BinaryLabeling { grid, labels })
    }

    pub fn constant(grid: VoxelGrid, label: u8) -> Self {
        let labels = vec![label; grid.len()];
        BinaryLabeling { grid, labels }
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, voxel: usize) -> usize {
        self.labels[voxel] as usize
    }
}

/// Per voxel, the label with the largest value; ties go to the smallest label index.
pub fn argmax_round(x: &LabelField) -> BinaryLabeling {
    let labels = x
        .values
        .chunks(x.n_labels)
        .map(|v| {
            let mut best = 0;
            for l in 1..v.len() {
                if v[l] > v[best] {
                    best = l;
                }
            }
            best as u8
        })
        .collect();
    BinaryLabeling {
        grid: x.grid.clone(),
        labels,
    }
}

/// Every entry `1 / (L + 1)`.
pub fn uniform_init(grid: &VoxelGrid, labels: &LabelSpace) -> LabelField {
    let n = labels.count();
    LabelField {
        grid: grid.clone(),
        n_labels: n,
        values: vec![1.0 / n as f64; grid.len() * n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_space_requires_two_labels() {
        assert!(LabelSpace::new(1).is_err());
        let space = LabelSpace::new(3).unwrap();
        assert_eq!(space.occupied(), 2);
        assert_eq!(space.free_space_id(), 0);
    }

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(VoxelGrid::new([0, 1, 1], [0.0; 3], 1.0).is_err());
        assert!(VoxelGrid::new([1, 1, 1], [0.0; 3], 0.0).is_err());
        assert!(VoxelGrid::new([1, 1, 1], [f64::NAN, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn argmax_binary_and_tie() {
        let grid = VoxelGrid::unit([2, 1, 1]).unwrap();
        let x =
            LabelField::from_values(grid.clone(), 3, vec![1.0, 0.0, 0.0, 0.2, 0.4, 0.4]).unwrap();
        assert_eq!(argmax_round(&x).labels(), &[0, 1]);
        let half = LabelField::from_values(grid, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(argmax_round(&half).labels(), &[0, 0]);
    }

    #[test]
    fn uniform_values() {
        let grid = VoxelGrid::unit([3, 2, 2]).unwrap();
        let two = uniform_init(&grid, &LabelSpace::new(2).unwrap());
        assert!(two.values().iter().all(|&v| v == 0.5));
        let five = uniform_init(&grid, &LabelSpace::new(5).unwrap());
        assert!(five.values().iter().all(|&v| v == 0.2));
        assert!(five.simplex_residual() <= 1e-12);
    }

    #[test]
    fn locate_and_neighbors() {
        let grid = VoxelGrid::new([4, 3, 2], [-1.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(grid.locate([-0.9, 0.1, 0.6]), Some([0, 0, 1]));
        assert_eq!(grid.locate([1.1, 0.1, 0.1]), None);
        let s = grid.linearize([3, 1, 0]);
        assert_eq!(grid.forward_neighbor(s, 0), None);
        assert_eq!(grid.forward_neighbor(s, 1), Some(grid.linearize([3, 2, 0])));
    }

    proptest! {
        #[test]
        fn index_round_trip(nx in 1usize..9, ny in 1usize..9, nz in 1usize..9, seed in 0usize..10_000) {
            let grid = VoxelGrid::unit([nx, ny, nz]).unwrap();
            let lin = seed % grid.len();
            prop_assert_eq!(grid.linearize(grid.delinearize(lin)), lin);
        }

        #[test]
        fn argmax_matches_linear_scan(raw in prop::collection::vec(0.0f64..1.0, 4)) {
            let sum: f64 = raw.iter().sum::<f64>().max(1e-9);
            let v: Vec<f64> = raw.iter().map(|a| a / sum).collect();
            let grid = VoxelGrid::unit([1, 1, 1]).unwrap();
            let x = LabelField::from_values(grid, 4, v.clone()).unwrap();
            // oracle: first index attaining the maximum
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let expected = v.iter().position(|&a| a == max).unwrap();
            prop_assert_eq!(argmax_round(&x).get(0), expected);
        }
    }
}
