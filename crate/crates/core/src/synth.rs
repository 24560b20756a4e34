//! Analytic test scenes rendered into noiseless depth (and score) maps.

use crate::camera::{clip_to_box, Camera};
use crate::error::Result;
use crate::grid::{BinaryLabeling, LabelSpace, VoxelGrid};
use crate::ingest::{DepthMap, SemanticScores, View};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Aabb { lower: [f64; 3], upper: [f64; 3] },
}

impl Shape {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Shape::Sphere { center, radius } => dist2(p, center) <= radius * radius,
            Shape::Aabb { lower, upper } => (0..3).all(|k| p[k] >= lower[k] && p[k] < upper[k]),
        }
    }

    /// First positive hit parameter along `origin + t dir`.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = [
                    origin[0] - center[0],
                    origin[1] - center[1],
                    origin[2] - center[2],
                ];
                let a = dot(dir, dir);
                let b = dot(oc, dir);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .find(|&t| t > 0.0)
            }
            Shape::Aabb { lower, upper } => {
                let (t0, t1) = clip_to_box(lower, upper, origin, dir)?;
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solid {
    pub shape: Shape,
    pub label: u8,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub grid: VoxelGrid,
    pub labels: LabelSpace,
    /// Earlier solids win where they overlap.
    pub solids: Vec<Solid>,
    pub views: Vec<View>,
}

impl Scene {
    /// Ground-truth labeling sampled at voxel centers.
    pub fn occupancy(&self) -> BinaryLabeling {
        let labels = (0..self.grid.len())
            .map(|s| {
                let c = self.grid.center(self.grid.delinearize(s));
                self.solids
                    .iter()
                    .find(|so| so.shape.contains(c))
                    .map_or(0, |so| so.label)
            })
            .collect();
        BinaryLabeling::new(self.grid.clone(), labels).expect("one label per voxel")
    }

    /// Depth map, and per-label scores when `semantic`, as seen by `camera`.
    ///
    /// Scores are `-1` for the label of the surface hit and `0` elsewhere; pixels that hit
    /// nothing get depth `0` (missing).
    pub fn render(&self, camera: &Camera, semantic: bool) -> (DepthMap, Option<SemanticScores>) {
        let (w, h) = camera.image_size();
        let n = self.labels.count();
        let origin = camera.center();
        let mut depth = vec![0f32; w * h];
        let mut scores = vec![0f32; if semantic { w * h * n } else { 0 }];
        for v in 0..h {
            for u in 0..w {
                let dir = camera.pixel_direction(u as f64, v as f64);
                let hit = self
                    .solids
                    .iter()
                    .filter_map(|so| so.shape.intersect(origin, dir).map(|t| (t, so.label)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((t, label)) = hit {
                    // the direction has unit optical-axis component, so t is the depth
                    depth[v * w + u] = t as f32;
                    if semantic {
                        scores[(v * w + u) * n + label as usize] = -1.0;
                    }
                }
            }
        }
        let depth = DepthMap::new(w, h, depth).expect("sized above");
        let scores = semantic.then(|| SemanticScores::new(w, h, n, scores).expect("sized above"));
        (depth, scores)
    }

    fn add_views(&mut self, cameras: Vec<Camera>, semantic: bool) {
        for camera in cameras {
            let (depth, semantics) = self.render(&camera, semantic);
            self.views.push(View {
                camera,
                depth: Some(depth),
                semantics,
            });
        }
    }
}

/// `count` roughly uniform unit directions.
pub fn fibonacci_directions(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Cameras on a sphere around the grid center, each framing the whole grid.
pub fn orbit_cameras(grid: &VoxelGrid, count: usize, image: usize) -> Result<Vec<Camera>> {
    let (lo, hi) = (grid.lower(), grid.upper());
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let bound = dist2(lo, hi).sqrt() / 2.0;
    let distance = 2.5 * bound;
    let focal = (image as f64 / 2.0) / (bound / distance).asin().tan();
    fibonacci_directions(count)
        .into_iter()
        .map(|d| {
            let eye = [0, 1, 2].map(|k| center[k] + distance * d[k]);
            Camera::look_at(eye, center, [0.0, 0.0, 1.0], focal, (image, image))
        })
        .collect()
}

/// Sphere of `radius` voxels centered in an `n`^3 grid, seen by `views` orbiting cameras.
pub fn sphere_scene(n: usize, radius: f64, views: usize, image: usize) -> Result<Scene> {
    let grid = VoxelGrid::unit([n, n, n])?;
    let c = n as f64 / 2.0;
    let mut scene = Scene {
        name: "sphere".into(),
        grid: grid.clone(),
        labels: LabelSpace::new(2)?,
        solids: vec![Solid {
            shape: Shape::Sphere {
                center: [c, c, c],
                radius,
            },
            label: 1,
        }],
        views: Vec::new(),
    };
    scene.add_views(orbit_cameras(&grid, views, image)?, false);
    Ok(scene)
}

/// Wall occupying the single voxel layer `x = n/2` of an `n`^3 grid, seen by
/// `per_side` cameras on each side.
pub fn wall_scene(n: usize, per_side: usize, image: usize) -> Result<Scene> {
    let grid = VoxelGrid::unit([n, n, n])?;
    let mid = (n / 2) as f64;
    let margin = (n / 8) as f64;
    let nf = n as f64;
    let mut scene = Scene {
        name: "wall".into(),
        grid: grid.clone(),
        labels: LabelSpace::new(2)?,
        solids: vec![Solid {
            shape: Shape::Aabb {
                // half a voxel thick and centered in the layer, so that no surface lies on a
                // voxel face
                lower: [mid + 0.25, margin, margin],
                upper: [mid + 0.75, nf - margin, nf - margin],
            },
            label: 1,
        }],
        views: Vec::new(),
    };
    let c = nf / 2.0;
    let distance = 2.0 * nf;
    let bound = nf * 3f64.sqrt() / 2.0;
    let focal = (image as f64 / 2.0) / (bound / distance).asin().tan();
    let mut cameras = Vec::new();
    for side in [-1.0, 1.0] {
        for i in 0..per_side {
            // spread over a cone of about 35 degrees around the wall normal
            let a = 2.0 * std::f64::consts::PI * i as f64 / per_side.max(1) as f64;
            let tilt = if per_side > 1 { 0.6 } else { 0.0 };
            let d = [side * 1.0, tilt * a.cos(), tilt * a.sin()];
            let norm = dot(d, d).sqrt();
            let eye = [0, 1, 2].map(|k| [c, c, c][k] + distance * d[k] / norm);
            cameras.push(Camera::look_at(
                eye,
                [c, c, c],
                [0.0, 0.0, 1.0],
                focal,
                (image, image),
            )?);
        }
    }
    scene.add_views(cameras, false);
    Ok(scene)
}

/// A box (label 1) resting on a ground slab (label 2), with depth and semantic scores.
pub fn box_scene(n: usize, views: usize, image: usize) -> Result<Scene> {
    let grid = VoxelGrid::unit([n, n, n])?;
    let nf = n as f64;
    let ground = (n / 4) as f64;
    let (lo, hi) = (0.3 * nf, 0.7 * nf);
    let mut scene = Scene {
        name: "box".into(),
        grid: grid.clone(),
        labels: LabelSpace::with_names(vec!["free".into(), "box".into(), "ground".into()])?,
        solids: vec![
            Solid {
                shape: Shape::Aabb {
                    lower: [lo.floor(), lo.floor(), ground],
                    upper: [hi.ceil(), hi.ceil(), ground + (hi - lo).round()],
                },
                label: 1,
            },
            Solid {
                shape: Shape::Aabb {
                    lower: [-nf, -nf, 0.0],
                    upper: [2.0 * nf, 2.0 * nf, ground],
                },
                label: 2,
            },
        ],
        views: Vec::new(),
    };
    // upper hemisphere only: nothing is visible from below the ground
    let cameras = orbit_cameras(&grid, 2 * views, image)?
        .into_iter()
        .filter(|cam| cam.center()[2] > nf / 2.0)
        .take(views)
        .collect();
    scene.add_views(cameras, true);
    Ok(scene)
}
