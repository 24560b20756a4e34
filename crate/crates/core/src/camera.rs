//! Pinhole cameras and incremental ray/voxel traversal.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::grid::VoxelGrid;

/// Pinhole camera mapping world points by `x_cam = R x_world + t`, pixels by `K x_cam`.
///
/// Pixel centers sit at integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    image_size: (usize, usize),
    intrinsics_inv: Matrix3<f64>,
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let intrinsics_inv = intrinsics
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Camera("intrinsics matrix is singular".into()))?;
        let ortho = (rotation * rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        if !(ortho <= 1e-6) || !((rotation.determinant() - 1.0).abs() <= 1e-6) {
            return Err(Error::Camera(format!(
                "rotation is not orthonormal (|RR^T - I| = {ortho:e}, det = {})",
                rotation.determinant()
            )));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::Camera("image size must be positive".into()));
        }
        Ok(Camera {
            intrinsics,
            rotation,
            translation,
            image_size,
            intrinsics_inv,
        })
    }

    /// Camera at `eye` looking at `target`, square pixels, principal point at the image center.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let mut right = forward.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            // up is parallel to the viewing direction
            let alt = if forward.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::y()
            };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let (w, h) = image_size;
        let intrinsics = Matrix3::new(
            focal,
            0.0,
            (w as f64 - 1.0) / 2.0,
            0.0,
            focal,
            (h as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(intrinsics, rotation, translation, image_size)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let c = -(self.rotation.transpose() * self.translation);
        [c.x, c.y, c.z]
    }

    /// World-space direction through pixel `(u, v)`, scaled so its optical-axis component is 1.
    ///
    /// A point at depth `d` along the pixel is `center + d * dir`.
    pub fn pixel_direction(&self, u: f64, v: f64) -> [f64; 3] {
        let d_cam = self.intrinsics_inv * Vector3::new(u, v, 1.0);
        let d_cam = d_cam / d_cam.z;
        let d = self.rotation.transpose() * d_cam;
        [d.x, d.y, d.z]
    }

    /// Pixel coordinates and depth of a world point; `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let pc = self.rotation * Vector3::from(p) + self.translation;
        if pc.z <= 0.0 {
            return None;
        }
        let q = self.intrinsics * pc;
        Some((q.x / q.z, q.y / q.z, pc.z))
    }
}

/// One voxel crossed by a ray, with the parameter interval spent inside it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelHit {
    pub index: [usize; 3],
    pub linear: usize,
    pub t_in: f64,
    pub t_out: f64,
}

/// Voxels crossed by the ray through pixel `(u, v)`, ordered from the camera outward.
pub fn traverse_ray(
    camera: &Camera,
    pixel: (usize, usize),
    grid: &VoxelGrid,
) -> Result<Vec<VoxelHit>> {
    let (w, h) = camera.image_size();
    if pixel.0 >= w || pixel.1 >= h {
        return Err(Error::OutOfBounds {
            axis: if pixel.0 >= w { 0 } else { 1 },
            index: if pixel.0 >= w { pixel.0 } else { pixel.1 },
            size: if pixel.0 >= w { w } else { h },
        });
    }
    let dir = camera.pixel_direction(pixel.0 as f64, pixel.1 as f64);
    Ok(traverse(grid, camera.center(), dir))
}

/// Parameter interval `[t_enter, t_exit]` where `origin + t dir` lies inside the box.
pub fn clip_to_box(
    lower: [f64; 3],
    upper: [f64; 3],
    origin: [f64; 3],
    dir: [f64; 3],
) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < lower[k] || origin[k] >= upper[k] {
                return None;
            }
            continue;
        }
        let a = (lower[k] - origin[k]) / dir[k];
        let b = (upper[k] - origin[k]) / dir[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 < t1).then_some((t0, t1))
}

/// Amanatides-Woo traversal of the half-line `origin + t dir, t >= 0`.
///
/// Zero-length visits (the ray grazing an edge or corner) are skipped, so consecutive voxels
/// share a face, an edge or a corner.
pub fn traverse(grid: &VoxelGrid, origin: [f64; 3], dir: [f64; 3]) -> Vec<VoxelHit> {
    let mut hits = Vec::new();
    let Some((t_enter, t_exit)) = clip_to_box(grid.lower(), grid.upper(), origin, dir) else {
        return hits;
    };
    let t_start = t_enter.max(0.0);
    if t_start >= t_exit {
        return hits;
    }
    let dims = grid.dims();
    let vs = grid.voxel_size();
    let go = grid.origin();
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    // sample the entry point slightly inside to avoid landing on the boundary plane
    let t_probe = t_start + 1e-9 * (t_exit - t_start).min(1.0);
    for k in 0..3 {
        let p = origin[k] + t_probe * dir[k];
        let cell = ((p - go[k]) / vs).floor() as i64;
        idx[k] = cell.clamp(0, dims[k] as i64 - 1);
        if dir[k] > 0.0 {
            step[k] = 1;
            let boundary = go[k] + (idx[k] + 1) as f64 * vs;
            t_max[k] = (boundary - origin[k]) / dir[k];
            t_delta[k] = vs / dir[k];
        } else if dir[k] < 0.0 {
            step[k] = -1;
            let boundary = go[k] + idx[k] as f64 * vs;
            t_max[k] = (boundary - origin[k]) / dir[k];
            t_delta[k] = -vs / dir[k];
        }
    }
    let mut t_cur = t_start;
    loop {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t_next = t_max[axis].min(t_exit);
        if t_next > t_cur {
            let index = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
            hits.push(VoxelHit {
                index,
                linear: grid.linearize(index),
                t_in: t_cur,
                t_out: t_next,
            });
            t_cur = t_next;
        }
        if t_max[axis] >= t_exit {
            break;
        }
        idx[axis] += step[axis];
        if idx[axis] < 0 || idx[axis] >= dims[axis] as i64 {
            break;
        }
        t_max[axis] += t_delta[axis];
    }
    hits
}
