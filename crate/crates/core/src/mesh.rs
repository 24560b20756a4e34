//! Boundary surface between free space and occupied labels.

use crate::grid::BinaryLabeling;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Display color of a label. Free space is never meshed.
pub fn label_color(label: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [255, 255, 255],
        [200, 160, 110],
        [90, 150, 220],
        [110, 190, 100],
        [220, 90, 80],
        [180, 120, 200],
        [230, 200, 80],
        [90, 200, 200],
    ];
    PALETTE[label % PALETTE.len()]
}

/// Occupied-voxel faces whose neighbour is free space or lies outside the grid.
///
/// Returns `(voxel, axis, positive side)`.
pub fn boundary_faces(labeling: &BinaryLabeling) -> Vec<(usize, usize, bool)> {
    let grid = labeling.grid();
    let dims = grid.dims();
    let mut faces = Vec::new();
    for s in 0..grid.len() {
        if labeling.get(s) == 0 {
            continue;
        }
        let idx = grid.delinearize(s);
        for axis in 0..3 {
            for positive in [false, true] {
                let free = if positive {
                    idx[axis] + 1 == dims[axis] || labeling.get(s + grid.stride(axis)) == 0
                } else {
                    idx[axis] == 0 || labeling.get(s - grid.stride(axis)) == 0
                };
                if free {
                    faces.push((s, axis, positive));
                }
            }
        }
    }
    faces
}

/// Two triangles per boundary face, wound counter-clockwise seen from the free side, in world
/// coordinates and colored by the occupied label.
pub fn extract_boundary(labeling: &BinaryLabeling) -> Mesh {
    let grid = labeling.grid();
    let (o, h) = (grid.origin(), grid.voxel_size());
    let mut mesh = Mesh::default();
    for (s, axis, positive) in boundary_faces(labeling) {
        let idx = grid.delinearize(s);
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut corner = [idx[0] as f64, idx[1] as f64, idx[2] as f64];
        if positive {
            corner[axis] += 1.0;
        }
        let mut quad = [corner; 4];
        quad[1][a] += 1.0;
        quad[2][a] += 1.0;
        quad[2][b] += 1.0;
        quad[3][b] += 1.0;
        // (a, b, axis) is right-handed, so this order faces +axis
        if !positive {
            quad.swap(1, 3);
        }
        let color = label_color(labeling.get(s));
        let base = mesh.vertices.len();
        for p in quad {
            mesh.vertices
                .push([o[0] + p[0] * h, o[1] + p[1] * h, o[2] + p[2] * h]);
            mesh.colors.push(color);
        }
        mesh.triangles.push([base, base + 1, base + 2]);
        mesh.triangles.push([base, base + 2, base + 3]);
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;

    fn normal(mesh: &Mesh, t: [usize; 3]) -> [f64; 3] {
        let [p, q, r] = t.map(|i| mesh.vertices[i]);
        let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
        let v = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    }

    #[test]
    fn single_voxel_is_a_closed_outward_cube() {
        let grid = VoxelGrid::new([3, 3, 3], [1.0, 2.0, 3.0], 0.5).unwrap();
        let mut lab = BinaryLabeling::constant(grid.clone(), 0);
        lab.labels_mut()[grid.linearize([1, 1, 1])] = 2;
        let mesh = extract_boundary(&lab);
        assert_eq!(mesh.triangles.len(), 12);
        let center = grid.center([1, 1, 1]);
        for &t in &mesh.triangles {
            let n = normal(&mesh, t);
            let p = mesh.vertices[t[0]];
            let out: f64 = (0..3).map(|k| n[k] * (p[k] - center[k])).sum();
            assert!(out > 0.0);
        }
        assert!(mesh.colors.iter().all(|&c| c == label_color(2)));
        assert!(mesh
            .vertices
            .iter()
            .all(|p| (0..3).all(|k| (p[k] - center[k]).abs() == 0.25)));
    }

    #[test]
    fn empty_volume_has_empty_mesh() {
        let lab = BinaryLabeling::constant(VoxelGrid::unit([4, 4, 4]).unwrap(), 0);
        assert_eq!(extract_boundary(&lab), Mesh::default());
    }

    #[test]
    fn adjacent_occupied_voxels_share_no_face() {
        let grid = VoxelGrid::unit([2, 1, 1]).unwrap();
        let lab = BinaryLabeling::new(grid, vec![1, 2]).unwrap();
        assert_eq!(boundary_faces(&lab).len(), 10);
    }
}
