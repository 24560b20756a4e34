//! Browser bindings: the three-voxel relaxation example, a small sphere reconstruction shown as a
//! slice, and the visibility majorizer on the unit square.

use rayfusion::grid::BinaryLabeling;
use rayfusion::ingest::{build_rays, IngestConfig};
use rayfusion::oracle::{convex_relaxation_solve, slice_export, weak_relaxation_instance};
use rayfusion::raypot::Branch;
use rayfusion::regularizer::SmoothnessModel;
use rayfusion::solver::{reconstruct, Problem, SolverConfig};
use rayfusion::synth::sphere_scene;
use wasm_bindgen::prelude::*;

fn js_err(e: rayfusion::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct WeakRelaxation {
    relaxed_energy: f64,
    relaxed_free: Vec<f64>,
    mm_energy: f64,
    mm_labels: Vec<u8>,
}

#[wasm_bindgen]
impl WeakRelaxation {
    #[wasm_bindgen(getter)]
    pub fn relaxed_energy(&self) -> f64 {
        self.relaxed_energy
    }

    /// Free-space value of each voxel in the relaxed solution.
    #[wasm_bindgen(getter)]
    pub fn relaxed_free(&self) -> Vec<f64> {
        self.relaxed_free.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mm_energy(&self) -> f64 {
        self.mm_energy
    }

    #[wasm_bindgen(getter)]
    pub fn mm_labels(&self) -> Vec<u8> {
        self.mm_labels.clone()
    }
}

fn weak_relaxation_impl() -> rayfusion::Result<WeakRelaxation> {
    let inst = weak_relaxation_instance();
    let (x, relaxed_energy) = convex_relaxation_solve(&inst)?;
    let rec = reconstruct(&inst.to_problem(), &SolverConfig::default())?;
    Ok(WeakRelaxation {
        relaxed_energy,
        relaxed_free: (0..x.grid().len()).map(|s| x.get(s, 0)).collect(),
        mm_energy: rec.report.original_scale(),
        mm_labels: rec.labeling.labels().to_vec(),
    })
}

/// Plain convex relaxation against majorize-minimize on one ray through three voxels.
#[wasm_bindgen]
pub fn weak_relaxation() -> Result<WeakRelaxation, JsError> {
    weak_relaxation_impl().map_err(js_err)
}

#[wasm_bindgen]
pub struct SliceView {
    width: usize,
    height: usize,
    relaxed: Vec<u8>,
    rounded: Vec<u8>,
    truth: Vec<u8>,
    energy: f64,
    iou: f64,
    outer_steps: usize,
}

#[wasm_bindgen]
impl SliceView {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Free-space value of the relaxed field, 255 for free.
    #[wasm_bindgen(getter)]
    pub fn relaxed(&self) -> Vec<u8> {
        self.relaxed.clone()
    }

    /// 255 where the rounded labeling is free.
    #[wasm_bindgen(getter)]
    pub fn rounded(&self) -> Vec<u8> {
        self.rounded.clone()
    }

    /// 255 where the analytic sphere is absent.
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<u8> {
        self.truth.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn energy(&self) -> f64 {
        self.energy
    }

    #[wasm_bindgen(getter)]
    pub fn iou(&self) -> f64 {
        self.iou
    }

    #[wasm_bindgen(getter)]
    pub fn outer_steps(&self) -> usize {
        self.outer_steps
    }
}

fn z_slice(labeling: &BinaryLabeling, z: usize) -> Vec<u8> {
    let [nx, ny, _] = labeling.grid().dims();
    let mut px = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            let s = labeling.grid().linearize([x, y, z]);
            px.push(if labeling.get(s) == 0 { 255 } else { 0 });
        }
    }
    px
}

fn iou(a: &BinaryLabeling, b: &BinaryLabeling) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.labels().iter().zip(b.labels()) {
        inter += usize::from(p != 0 && q != 0);
        union += usize::from(p != 0 || q != 0);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn sphere_slice_impl(
    size: usize,
    views: usize,
    weight: f64,
    inner_iters: usize,
    max_outer: usize,
) -> rayfusion::Result<SliceView> {
    let n = size.clamp(4, 48);
    let scene = sphere_scene(n, 0.3125 * n as f64, views.clamp(1, 40), 2 * n)?;
    let rays = build_rays(&scene.views, &scene.grid, 2, &IngestConfig::default())?;
    let problem = Problem {
        grid: scene.grid.clone(),
        labels: scene.labels.clone(),
        rays: rays.rays,
        model: SmoothnessModel::uniform(2, weight.max(0.0))?,
        omitted_constants: rays.omitted_constants,
    };
    let config = SolverConfig {
        inner_iters: inner_iters.max(1),
        max_outer: max_outer.max(1),
        ..SolverConfig::default()
    };
    let rec = reconstruct(&problem, &config)?;
    let z = n / 2;
    let (width, height, relaxed) = slice_export(&rec.relaxed, 2, z)?;
    let truth = scene.occupancy();
    Ok(SliceView {
        width,
        height,
        relaxed,
        rounded: z_slice(&rec.labeling, z),
        truth: z_slice(&truth, z),
        energy: rec.report.original_scale(),
        iou: iou(&rec.labeling, &truth),
        outer_steps: rec.trace.len(),
    })
}

/// Reconstruct a synthetic sphere on a `size`^3 grid and return its middle z slice.
#[wasm_bindgen]
pub fn sphere_slice(
    size: usize,
    views: usize,
    weight: f64,
    inner_iters: usize,
    max_outer: usize,
) -> Result<SliceView, JsError> {
    sphere_slice_impl(size, views, weight, inner_iters, max_outer).map_err(js_err)
}

/// Gap `max(0, y - x) - g(x, y)` of the linear majorizer built at `(x0, y0)`, sampled on a
/// `res` x `res` grid over the unit square (row index is `y`, column index is `x`).
#[wasm_bindgen]
pub fn majorizer_gap(x0: f64, y0: f64, tie_linear: bool, res: usize) -> Vec<f64> {
    let tie = if tie_linear { Branch::Linear } else { Branch::Zero };
    let branch = Branch::select(y0, x0, tie);
    let res = res.clamp(2, 512);
    let step = 1.0 / (res - 1) as f64;
    let mut out = Vec::with_capacity(res * res);
    for j in 0..res {
        let y = j as f64 * step;
        for i in 0..res {
            let x = i as f64 * step;
            out.push((y - x).max(0.0) - branch.bound(y, x));
        }
    }
    out
}

/// Branch picked at `(x0, y0)`: `"zero"` or `"linear"`.
#[wasm_bindgen]
pub fn majorizer_branch(x0: f64, y0: f64, tie_linear: bool) -> String {
    let tie = if tie_linear { Branch::Linear } else { Branch::Zero };
    match Branch::select(y0, x0, tie) {
        Branch::Zero => "zero".into(),
        Branch::Linear => "linear".into(),
    }
}
