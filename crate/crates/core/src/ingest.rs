//! Views (camera, depth map, semantic scores) to normalized per-ray cost tables.

use serde::{Deserialize, Serialize};

use crate::camera::{traverse_ray, Camera};
use crate::error::{Error, Result};
use crate::ray::{add_semantic_costs, build_depth_costs, normalize, Ray};

/// Per-pixel depth along the optical axis; values `<= 0` (or non-finite) mark missing depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 at the top of the image.
    pub depth: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} depth map needs {} values, got {}",
                width * height,
                depth.len()
            )));
        }
        Ok(DepthMap {
            width,
            height,
            depth,
        })
    }

    /// Depth at pixel `(u, v)` if valid.
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.depth[v * self.width + u] as f64;
        (d > 0.0 && d.is_finite()).then_some(d)
    }
}

/// Per-pixel classifier responses, one channel per label (channel 0 is free space).
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticScores {
    pub width: usize,
    pub height: usize,
    pub n_labels: usize,
    /// Pixel-major with labels contiguous.
    pub scores: Vec<f32>,
}

impl SemanticScores {
    pub fn new(width: usize, height: usize, n_labels: usize, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != width * height * n_labels {
            return Err(Error::Shape(format!(
                "{width}x{height} score map with {n_labels} labels needs {} values, got {}",
                width * height * n_labels,
                scores.len()
            )));
        }
        Ok(SemanticScores {
            width,
            height,
            n_labels,
            scores,
        })
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let i = (v * self.width + u) * self.n_labels;
        &self.scores[i..i + self.n_labels]
    }
}

/// One posed image.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: Camera,
    pub depth: Option<DepthMap>,
    pub semantics: Option<SemanticScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Slope of the depth cost, per voxel of distance.
    pub lambda: f64,
    /// Depth of the cost well.
    pub k: f64,
    /// Multiplier on the semantic scores.
    pub semantic_weight: f64,
    /// Use every `pixel_stride`-th pixel in each image direction.
    pub pixel_stride: usize,
    /// Build semantics-only rays for pixels without depth.
    pub semantics_without_depth: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            lambda: 0.5,
            k: 3.0,
            semantic_weight: 1.0,
            pixel_stride: 1,
            semantics_without_depth: true,
        }
    }
}

/// Normalized rays and the bookkeeping of what was dropped.
#[derive(Clone, Debug, Default)]
pub struct RaySet {
    pub rays: Vec<Ray>,
    /// Sum of the constants removed by normalization.
    pub omitted_constants: f64,
    pub missed_grid: usize,
    pub depth_outside_grid: usize,
    pub no_data: usize,
}

/// Cast one ray per (strided) pixel of every view and build its normalized cost table.
///
/// The depth index is the traversal position whose parameter interval contains the depth; rays
/// whose depth point falls outside the grid are dropped.
pub fn build_rays(
    views: &[View],
    grid: &crate::grid::VoxelGrid,
    n_labels: usize,
    cfg: &IngestConfig,
) -> Result<RaySet> {
    let stride = cfg.pixel_stride.max(1);
    let mut out = RaySet::default();
    for view in views {
        let (w, h) = view.camera.image_size();
        if let Some(d) = &view.depth {
            if (d.width, d.height) != (w, h) {
                return Err(Error::Shape(format!(
                    "depth map is {}x{} but the camera image is {w}x{h}",
                    d.width, d.height
                )));
            }
        }
        if let Some(sem) = &view.semantics {
            if (sem.width, sem.height) != (w, h) {
                return Err(Error::Shape(format!(
                    "score map is {}x{} but the camera image is {w}x{h}",
                    sem.width, sem.height
                )));
            }
            if sem.n_labels != n_labels {
                return Err(Error::ScoreCount {
                    expected: n_labels,
                    got: sem.n_labels,
                });
            }
        }
        for v in (0..h).step_by(stride) {
            for u in (0..w).step_by(stride) {
                let depth = view.depth.as_ref().and_then(|d| d.get(u, v));
                let scores = view.semantics.as_ref().map(|s| s.pixel(u, v));
                if depth.is_none() && !(scores.is_some() && cfg.semantics_without_depth) {
                    out.no_data += 1;
                    continue;
                }
                let hits = traverse_ray(&view.camera, (u, v), grid)?;
                if hits.is_empty() {
                    out.missed_grid += 1;
                    continue;
                }
                let occupied = match depth {
                    Some(d) => match hits.iter().position(|hit| hit.t_in <= d && d < hit.t_out) {
                        Some(i) => build_depth_costs(hits.len(), i, cfg.lambda, cfg.k),
                        None => {
                            out.depth_outside_grid += 1;
                            continue;
                        }
                    },
                    None => vec![0.0; hits.len()],
                };
                let voxels = hits.iter().map(|hit| hit.linear).collect();
                let mut ray = Ray::with_occupied_costs(voxels, &occupied, n_labels)?;
                if let Some(sc) = scores {
                    let sigma: Vec<f64> = sc[1..]
                        .iter()
                        .map(|&s| cfg.semantic_weight * s as f64)
                        .collect();
                    add_semantic_costs(&mut ray, &sigma)?;
                }
                out.omitted_constants += normalize(&mut ray);
                ray.trim_trailing();
                if !ray.is_empty() {
                    out.rays.push(ray);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;

    fn view_down_x(depth: f32) -> View {
        // camera on the -x side of an 8^3 grid looking down +x, 1x1 image
        let camera = Camera::look_at(
            [-10.0, 4.0, 4.0],
            [4.0, 4.0, 4.0],
            [0.0, 0.0, 1.0],
            1.0,
            (1, 1),
        )
        .unwrap();
        View {
            camera,
            depth: Some(DepthMap::new(1, 1, vec![depth]).unwrap()),
            semantics: None,
        }
    }

    #[test]
    fn depth_index_from_traversal_interval() {
        let grid = VoxelGrid::unit([8, 8, 8]).unwrap();
        // depth 15.5 puts the surface 5.5 units into the grid: voxel x = 5
        let set = build_rays(&[view_down_x(15.5)], &grid, 2, &IngestConfig::default()).unwrap();
        assert_eq!(set.rays.len(), 1);
        let ray = &set.rays[0];
        let costs: Vec<f64> = (0..ray.len()).map(|i| ray.cost(i, 1)).collect();
        // min(0, 0.5|i-5| - 3) with i = 0..7; non-positive already, nothing omitted
        assert_eq!(costs, vec![-0.5, -1.0, -1.5, -2.0, -2.5, -3.0, -2.5, -2.0]);
        assert_eq!(set.omitted_constants, 0.0);
    }

    #[test]
    fn depth_outside_grid_drops_ray() {
        let grid = VoxelGrid::unit([8, 8, 8]).unwrap();
        let set = build_rays(&[view_down_x(30.0)], &grid, 2, &IngestConfig::default()).unwrap();
        assert!(set.rays.is_empty());
        assert_eq!(set.depth_outside_grid, 1);
        let set = build_rays(&[view_down_x(-1.0)], &grid, 2, &IngestConfig::default()).unwrap();
        assert_eq!(set.no_data, 1);
    }

    #[test]
    fn semantics_only_ray() {
        let grid = VoxelGrid::unit([8, 8, 8]).unwrap();
        let mut view = view_down_x(0.0);
        view.semantics = Some(SemanticScores::new(1, 1, 3, vec![5.0, -1.0, -2.0]).unwrap());
        let set = build_rays(&[view], &grid, 3, &IngestConfig::default()).unwrap();
        assert_eq!(set.rays.len(), 1);
        let ray = &set.rays[0];
        // constant (-1, -2) along the ray, then made non-positive back to front
        assert_eq!(ray.row(0), &[0.0, -1.0, -2.0]);
        assert!(ray.costs().iter().all(|&c| c <= 0.0));
    }
}
