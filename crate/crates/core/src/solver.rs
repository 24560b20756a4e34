//! Majorize-minimize outer loop around a diagonally preconditioned primal-dual inner solver.
//!
//! The surrogate program at each majorization step is linear in `(x, y, z)` except for the
//! regularizer, which enters through per-pair dual vectors `q` in the unit ball
//! (`phi(v) = |A v| = max_{|q| <= 1} <q, A v>`). Dualized constraint families:
//!
//! ```text
//! alpha_{i,l} >= 0 : y_i^l - y_{i-1}^f <= 0                        (i >= 1)
//! beta_{i,l}  >= 0 : y_i^l - x_{s_i}^l <= 0
//! gamma_i     >= 0 : sum_{l != f} y_i^l + x_{s_i}^f - y_{i-1}^f <= 0 (linear branch only)
//! mu_out, mu_in    : the two marginalization equalities of each (s, k) slice
//! ```
//!
//! Box constraints (`y, z` in `[0, 1]`, `x` on the simplex, occupied `y = 0` on zero branches) are
//! handled by the proximal steps.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{
    argmax_round, uniform_init, BinaryLabeling, LabelField, LabelSpace, VoxelGrid, FREE,
};
use crate::ray::Ray;
use crate::raypot::{
    check_consistency, fill_visibility, majorize, ray_energy, Branch, MajorizerState, Violation,
    VisibilityField,
};
use crate::regularizer::{
    feasible_z, marginal_neighbor, marginalization_residual, pair_count, pair_index,
    smoothness_energy, SmoothnessModel, TransitionGradients,
};
use crate::simplex::project_in_place;

/// Outer-loop and inner-solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Primal-dual iterations between majorization steps (`p`).
    pub inner_iters: usize,
    pub max_outer: usize,
    pub rel_energy_tol: f64,
    pub tie_branch: Branch,
    /// Repeat the inner solver until the gap falls below `C / n`, `C` the first gap.
    pub gap_check: bool,
    /// Cap on the number of `p`-iteration blocks per step when `gap_check` is on.
    pub gap_max_rounds: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            inner_iters: 10,
            max_outer: 200,
            rel_energy_tol: 1e-6,
            tie_branch: Branch::Zero,
            gap_check: false,
            gap_max_rounds: 20,
        }
    }
}

/// Whether the visibility-consistency constraint is part of the program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisibilityMode {
    /// Linearized constraint according to the current branches.
    Majorized,
    /// Constraint dropped: the plain convex relaxation.
    Relaxed,
}

/// Everything the energy depends on.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: VoxelGrid,
    pub labels: LabelSpace,
    /// Normalized rays: non-positive costs, zero free cost.
    pub rays: Vec<Ray>,
    pub model: SmoothnessModel,
    /// Sum of the constants removed by ray normalization.
    pub omitted_constants: f64,
}

impl Problem {
    pub fn n_labels(&self) -> usize {
        self.labels.count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub ray_term: f64,
    pub smoothness_term: f64,
    pub omitted_constants: f64,
    /// `ray_term + smoothness_term`.
    pub total: f64,
    pub simplex_residual: f64,
    pub visibility_residual: f64,
    pub marginalization_residual: f64,
}

impl EnergyReport {
    /// Energy on the scale of the un-normalized costs.
    pub fn original_scale(&self) -> f64 {
        self.total + self.omitted_constants
    }

    pub fn max_residual(&self) -> f64 {
        self.simplex_residual
            .max(self.visibility_residual)
            .max(self.marginalization_residual)
    }
}

/// `E = psi_R + psi_S` for a given primal point, with its feasibility residuals.
pub fn total_energy(
    x: &LabelField,
    y: &VisibilityField,
    z: &TransitionGradients,
    rays: &[Ray],
    model: &SmoothnessModel,
) -> EnergyReport {
    let mut ray_term = 0.0;
    let mut violation = Violation::default();
    for (r, ray) in rays.iter().enumerate() {
        ray_term += ray_energy(y.ray(r), ray);
        violation = violation.merge(check_consistency(x, y.ray(r), ray));
    }
    let smoothness_term = if model.is_zero() {
        0.0
    } else {
        smoothness_energy(z, model)
    };
    EnergyReport {
        ray_term,
        smoothness_term,
        omitted_constants: 0.0,
        total: ray_term + smoothness_term,
        simplex_residual: x.simplex_residual(),
        visibility_residual: violation.worst(),
        marginalization_residual: marginalization_residual(x, z),
    }
}

/// Duals of every dualized constraint family.
#[derive(Clone, Debug, PartialEq)]
pub struct Duals {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu_out: Vec<f64>,
    pub mu_in: Vec<f64>,
    /// Per voxel and unordered label pair, a 3-vector in the unit ball.
    pub q: Vec<f64>,
}

impl Duals {
    fn zeros(positions: usize, voxels: usize, n: usize) -> Self {
        Duals {
            alpha: vec![0.0; positions * n],
            beta: vec![0.0; positions * n],
            gamma: vec![0.0; positions],
            mu_out: vec![0.0; voxels * 3 * n],
            mu_in: vec![0.0; voxels * 3 * n],
            q: vec![0.0; voxels * pair_count(n) * 3],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub x: LabelField,
    pub y: VisibilityField,
    pub z: TransitionGradients,
    pub duals: Duals,
    pub branch: MajorizerState,
    /// Feasible energies of the accepted majorization steps.
    pub energy_history: Vec<f64>,
    pub best_feasible_energy: f64,
}

/// One row of the outer-loop trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_step: usize,
    pub accepted: bool,
    pub feasible_energy: f64,
    pub surrogate_energy: f64,
    pub gap: Option<f64>,
    pub wall_ms: f64,
}

/// CSV rendering of a trace, header included.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out =
        String::from("outer_step,accepted,feasible_energy,surrogate_energy,gap,wall_ms\n");
    for t in trace {
        let gap = t.gap.map(|g| format!("{g:.17e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.17e},{:.17e},{},{:.3}\n",
            t.outer_step, t.accepted as u8, t.feasible_energy, t.surrogate_energy, gap, t.wall_ms
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub labeling: BinaryLabeling,
    /// Energy of the rounded labeling.
    pub report: EnergyReport,
    /// Best feasible relaxed point and its energy.
    pub relaxed: LabelField,
    pub relaxed_report: EnergyReport,
    pub trace: Vec<TraceRow>,
    pub accepted_energies: Vec<f64>,
    pub warnings: Vec<String>,
}

struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64() * 1e3
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

// Sign with which a pair's regularizer dual enters the gradient of `z^{lm}`.
#[derive(Clone, Copy, Debug)]
enum PairSign {
    Plus(usize),
    Minus(usize),
    Diagonal,
}

/// The primal-dual machinery for one problem: static layout, step sizes and scratch buffers.
pub struct Solver<'a> {
    problem: &'a Problem,
    mode: VisibilityMode,
    n: usize,
    pos_voxel: Vec<usize>,
    pos_index: Vec<usize>,
    pos_last: Vec<bool>,
    costs: Vec<f64>,
    neighbors: Vec<[usize; 3]>,
    hits_per_voxel: Vec<usize>,
    in_count: Vec<usize>,
    metrics: Vec<Matrix3<f64>>,
    pairs: Vec<(usize, usize)>,
    pair_of: Vec<PairSign>,
    sigma_q: Vec<f64>,
    tau_z: Vec<f64>,
    tau_x: Vec<f64>,
    tau_y: Vec<f64>,
    with_regularizer: bool,
    anchor: f64,
    gx: Vec<f64>,
    gy: Vec<f64>,
    gz: Vec<f64>,
    pub state: SolverState,
}

impl<'a> Solver<'a> {
    /// Solver at the uniform label field, greedy visibility and feasible transition gradients.
    ///
    /// The branches start all linear: the linearization point is the all-visible state
    /// `y^f = 1` rather than the uniform field itself, where every position past the first would
    /// sit on a tie.
    pub fn new(problem: &'a Problem, mode: VisibilityMode) -> Result<Self> {
        let grid = &problem.grid;
        let n = problem.n_labels();
        let v = grid.len();
        let x = uniform_init(grid, &problem.labels);
        let mut y = VisibilityField::zeros(&problem.rays, n);
        for (r, ray) in problem.rays.iter().enumerate() {
            fill_visibility(&x, ray, y.ray_mut(r))?;
        }
        let z = feasible_z(&x, &TransitionGradients::zeros(grid, n))?;
        let offsets = y.offsets().to_vec();
        let positions = *offsets.last().unwrap_or(&0);
        let mut pos_voxel = Vec::with_capacity(positions);
        let mut pos_index = Vec::with_capacity(positions);
        let mut pos_last = Vec::with_capacity(positions);
        let mut costs = Vec::with_capacity(positions * n);
        let mut hits_per_voxel = vec![0usize; v];
        for ray in &problem.rays {
            for i in 0..ray.len() {
                pos_voxel.push(ray.voxel(i));
                pos_index.push(i);
                pos_last.push(i + 1 == ray.len());
                hits_per_voxel[ray.voxel(i)] += 1;
            }
            costs.extend_from_slice(ray.costs());
        }
        let neighbors: Vec<[usize; 3]> = (0..v)
            .map(|s| [0, 1, 2].map(|k| marginal_neighbor(grid, s, k)))
            .collect();
        let mut in_count = vec![0usize; v];
        for nb in &neighbors {
            for &t in nb {
                in_count[t] += 1;
            }
        }
        let np = pair_count(n);
        let metrics: Vec<Matrix3<f64>> =
            (0..np).map(|p| *problem.model.metric_by_pair(p)).collect();
        let sigma_q = metrics
            .iter()
            .map(|a| {
                let row = (0..3)
                    .map(|j| 2.0 * (0..3).map(|k| a[(j, k)].abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                if row > 0.0 {
                    1.0 / row
                } else {
                    0.0
                }
            })
            .collect();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|l| (l + 1..n).map(move |m| (l, m)))
            .collect();
        let pair_of = (0..n * n)
            .map(|j| {
                let (l, m) = (j / n, j % n);
                match l.cmp(&m) {
                    std::cmp::Ordering::Less => PairSign::Plus(pair_index(n, l, m)),
                    std::cmp::Ordering::Greater => PairSign::Minus(pair_index(n, l, m)),
                    std::cmp::Ordering::Equal => PairSign::Diagonal,
                }
            })
            .collect();
        let mut tau_z = vec![0.0; 3 * n * n];
        for k in 0..3 {
            for l in 0..n {
                for m in 0..n {
                    let extra = if l == m {
                        0.0
                    } else {
                        let a = problem.model.metric(l, m);
                        (0..3).map(|j| a[(j, k)].abs()).sum::<f64>()
                    };
                    tau_z[(k * n + l) * n + m] = 1.0 / (2.0 + extra);
                }
            }
        }
        let branch = MajorizerState::uniform(&offsets, Branch::Linear);
        let state = SolverState {
            x,
            y,
            z,
            duals: Duals::zeros(positions, v, n),
            branch,
            energy_history: Vec::new(),
            best_feasible_energy: f64::INFINITY,
        };
        let mut solver = Solver {
            problem,
            mode,
            n,
            pos_voxel,
            pos_index,
            pos_last,
            costs,
            neighbors,
            hits_per_voxel,
            in_count,
            metrics,
            pairs,
            pair_of,
            sigma_q,
            tau_z,
            tau_x: vec![0.0; v],
            tau_y: vec![0.0; positions * n],
            with_regularizer: !problem.model.is_zero(),
            anchor: 0.0,
            gx: vec![0.0; v * n],
            gy: vec![0.0; positions * n],
            gz: Vec::new(),
            state,
        };
        if solver.with_regularizer {
            solver.gz = vec![0.0; solver.state.z.values().len()];
        }
        solver.update_steps();
        Ok(solver)
    }

    /// Adds `delta/2 |x - 1/n|^2` to the objective. Among several optimal relaxed solutions this
    /// selects the one closest to the uniform field.
    pub fn set_anchor(&mut self, delta: f64) {
        self.anchor = delta;
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    fn gamma_active(&self, p: usize) -> bool {
        self.mode == VisibilityMode::Majorized && self.state.branch.flags()[p] == Branch::Linear
    }

    fn forced_zero(&self, p: usize) -> bool {
        self.mode == VisibilityMode::Majorized && self.state.branch.flags()[p] == Branch::Zero
    }

    /// Reciprocal column sums; depend on the branches through the `gamma` rows.
    fn update_steps(&mut self) {
        let n = self.n;
        let positions = self.pos_voxel.len();
        let mut gamma_per_voxel = vec![0usize; self.problem.grid.len()];
        for p in 0..positions {
            let first = self.pos_index[p] == 0;
            let active = self.gamma_active(p);
            if active {
                gamma_per_voxel[self.pos_voxel[p]] += 1;
            }
            let next_active = !self.pos_last[p] && self.gamma_active(p + 1);
            let base = (!first) as usize + 1;
            for l in 0..n {
                let mut col = base;
                if l == FREE {
                    if !self.pos_last[p] {
                        col += n + next_active as usize;
                    }
                } else if active {
                    col += 1;
                }
                self.tau_y[p * n + l] = 1.0 / col as f64;
            }
        }
        let reg = if self.with_regularizer { 3 } else { 0 };
        for s in 0..self.problem.grid.len() {
            let inc = if self.with_regularizer {
                self.in_count[s]
            } else {
                0
            };
            let col = self.hits_per_voxel[s] + gamma_per_voxel[s] + reg + inc;
            self.tau_x[s] = if col > 0 { 1.0 / col as f64 } else { 1.0 };
        }
    }

    /// `K^T xi` into the gradient buffers.
    fn adjoint(&mut self) {
        let n = self.n;
        let d = &self.state.duals;
        self.gx.fill(0.0);
        self.gy.fill(0.0);
        for p in 0..self.pos_voxel.len() {
            let s = self.pos_voxel[p];
            let first = self.pos_index[p] == 0;
            for l in 0..n {
                let a = d.alpha[p * n + l];
                let b = d.beta[p * n + l];
                self.gy[p * n + l] += a + b;
                if !first {
                    self.gy[(p - 1) * n + FREE] -= a;
                }
                self.gx[s * n + l] -= b;
            }
            if self.mode == VisibilityMode::Majorized
                && self.state.branch.flags()[p] == Branch::Linear
            {
                let g = d.gamma[p];
                for l in 1..n {
                    self.gy[p * n + l] += g;
                }
                self.gx[s * n + FREE] += g;
                if !first {
                    self.gy[(p - 1) * n + FREE] -= g;
                }
            }
        }
        if !self.with_regularizer {
            return;
        }
        // the z part of the adjoint is folded into the z proximal step
        for (s, nbs) in self.neighbors.iter().enumerate() {
            for (k, &nb) in nbs.iter().enumerate() {
                let m_base = (s * 3 + k) * n;
                for l in 0..n {
                    self.gx[s * n + l] -= d.mu_out[m_base + l];
                    self.gx[nb * n + l] -= d.mu_in[m_base + l];
                }
            }
        }
    }

    /// Primal proximal step; leaves the extrapolated point `2 u_new - u_old` in the gradient buffers.
    fn primal_step(&mut self) {
        let n = self.n;
        let mut buf = vec![0.0; n];
        let uniform = 1.0 / n as f64;
        let delta = self.anchor;
        let x = self.state.x.values_mut();
        for s in 0..self.tau_x.len() {
            let t = self.tau_x[s];
            for l in 0..n {
                buf[l] = (x[s * n + l] - t * self.gx[s * n + l] + t * delta * uniform)
                    / (1.0 + t * delta);
            }
            project_in_place(&mut buf);
            for l in 0..n {
                let old = x[s * n + l];
                x[s * n + l] = buf[l];
                self.gx[s * n + l] = 2.0 * buf[l] - old;
            }
        }
        let majorized = self.mode == VisibilityMode::Majorized;
        let flags = self.state.branch.flags();
        let y = self.state.y.values_mut();
        for p in 0..self.pos_voxel.len() {
            let zero = majorized && flags[p] == Branch::Zero;
            for l in 0..n {
                let i = p * n + l;
                let old = y[i];
                let new = if zero && l != FREE {
                    0.0
                } else {
                    (old - self.tau_y[i] * (self.gy[i] + self.costs[i])).clamp(0.0, 1.0)
                };
                y[i] = new;
                self.gy[i] = 2.0 * new - old;
            }
        }
        if !self.with_regularizer {
            return;
        }
        let nn = n * n;
        let np = pair_count(n);
        let d = &self.state.duals;
        let z = self.state.z.values_mut();
        // A^T q per pair and axis
        let mut atq = vec![0.0; np * 3];
        for s in 0..self.neighbors.len() {
            for (pair, a) in self.metrics.iter().enumerate() {
                let q = &d.q[(s * np + pair) * 3..(s * np + pair) * 3 + 3];
                for k in 0..3 {
                    atq[pair * 3 + k] = a[(0, k)] * q[0] + a[(1, k)] * q[1] + a[(2, k)] * q[2];
                }
            }
            for k in 0..3 {
                let m_base = (s * 3 + k) * n;
                let z_base = m_base * n;
                let tau = &self.tau_z[k * nn..(k + 1) * nn];
                for l in 0..n {
                    let mo = d.mu_out[m_base + l];
                    for m in 0..n {
                        let mut g = mo + d.mu_in[m_base + m];
                        match self.pair_of[l * n + m] {
                            PairSign::Plus(p) => g += atq[p * 3 + k],
                            PairSign::Minus(p) => g -= atq[p * 3 + k],
                            PairSign::Diagonal => {}
                        }
                        let j = z_base + l * n + m;
                        let old = z[j];
                        let new = (old - tau[l * n + m] * g).clamp(0.0, 1.0);
                        z[j] = new;
                        self.gz[j] = 2.0 * new - old;
                    }
                }
            }
        }
    }

    /// Dual ascent step at the extrapolated primal point held in the gradient buffers.
    fn dual_step(&mut self) {
        let n = self.n;
        let majorized = self.mode == VisibilityMode::Majorized;
        let flags = self.state.branch.flags();
        let d = &mut self.state.duals;
        let (xb, yb) = (&self.gx, &self.gy);
        let occupied = (n - 1) as f64;
        for p in 0..self.pos_voxel.len() {
            let s = self.pos_voxel[p];
            let first = self.pos_index[p] == 0;
            let prev_free = if first { 1.0 } else { yb[(p - 1) * n + FREE] };
            for l in 0..n {
                let i = p * n + l;
                if !first {
                    d.alpha[i] = (d.alpha[i] + 0.5 * (yb[i] - prev_free)).max(0.0);
                }
                d.beta[i] = (d.beta[i] + 0.5 * (yb[i] - xb[s * n + l])).max(0.0);
            }
            if majorized && flags[p] == Branch::Linear {
                let visible: f64 = yb[p * n + 1..(p + 1) * n].iter().sum();
                let r = visible + xb[s * n + FREE] - prev_free;
                let sigma = 1.0 / (occupied + 1.0 + (!first) as usize as f64);
                d.gamma[p] = (d.gamma[p] + sigma * r).max(0.0);
            }
        }
        if !self.with_regularizer {
            return;
        }
        let zb = &self.gz;
        let sigma_mu = 1.0 / (n as f64 + 1.0);
        let np = pair_count(n);
        let mut col = vec![0.0; n];
        for (s, nbs) in self.neighbors.iter().enumerate() {
            for (k, &nb) in nbs.iter().enumerate() {
                let m_base = (s * 3 + k) * n;
                let w = &zb[m_base * n..(m_base + n) * n];
                col.fill(0.0);
                for l in 0..n {
                    let row = &w[l * n..(l + 1) * n];
                    let mut sum = 0.0;
                    for m in 0..n {
                        sum += row[m];
                        col[m] += row[m];
                    }
                    d.mu_out[m_base + l] += sigma_mu * (sum - xb[s * n + l]);
                }
                for l in 0..n {
                    d.mu_in[m_base + l] += sigma_mu * (col[l] - xb[nb * n + l]);
                }
            }
            for (pair, &(l, m)) in self.pairs.iter().enumerate() {
                let sigma = self.sigma_q[pair];
                if sigma == 0.0 {
                    continue;
                }
                let mut diff = [0.0; 3];
                for (k, dk) in diff.iter_mut().enumerate() {
                    let base = (s * 3 + k) * n * n;
                    *dk = zb[base + l * n + m] - zb[base + m * n + l];
                }
                let a = &self.metrics[pair];
                let qi = (s * np + pair) * 3;
                let q = &mut d.q[qi..qi + 3];
                for j in 0..3 {
                    q[j] +=
                        sigma * (a[(j, 0)] * diff[0] + a[(j, 1)] * diff[1] + a[(j, 2)] * diff[2]);
                }
                let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                if norm > 1.0 {
                    for v in q.iter_mut() {
                        *v /= norm;
                    }
                }
            }
        }
    }

    /// `p` primal-dual iterations with the branches held fixed.
    pub fn inner_minimize(&mut self, p: usize) {
        for _ in 0..p {
            self.adjoint();
            self.primal_step();
            self.dual_step();
        }
    }

    /// Surrogate objective `sum c y + psi_S(z)` at the current (possibly infeasible) iterate.
    pub fn surrogate_energy(&self) -> f64 {
        let data: f64 = self
            .state
            .y
            .values()
            .iter()
            .zip(&self.costs)
            .map(|(a, c)| a * c)
            .sum();
        let reg = if self.with_regularizer {
            smoothness_energy(&self.state.z, &self.problem.model)
        } else {
            0.0
        };
        data + reg
    }

    /// Feasible point nearest in spirit to the current iterate: simplex projection of `x`,
    /// greedy visibility, and feasible transition gradients repaired from the current `z`.
    pub fn make_feasible(&self) -> Result<(LabelField, VisibilityField, TransitionGradients)> {
        make_feasible(&self.state.x, &self.state.z, &self.problem.rays)
    }

    /// Energy of `x` under the current mode: greedy visibility when majorized, the nested minimum
    /// without visibility consistency when relaxed.
    pub fn feasible_energy(&self) -> Result<EnergyReport> {
        let (x, y, z) = self.make_feasible()?;
        let mut report = match self.mode {
            VisibilityMode::Majorized => {
                total_energy(&x, &y, &z, &self.problem.rays, &self.problem.model)
            }
            VisibilityMode::Relaxed => {
                let ray_term = self
                    .problem
                    .rays
                    .iter()
                    .map(|r| relaxed_ray_energy(&x, r))
                    .sum();
                let smoothness_term = smoothness_energy(&z, &self.problem.model);
                EnergyReport {
                    ray_term,
                    smoothness_term,
                    omitted_constants: 0.0,
                    total: ray_term + smoothness_term,
                    simplex_residual: x.simplex_residual(),
                    visibility_residual: 0.0,
                    marginalization_residual: marginalization_residual(&x, &z),
                }
            }
        };
        report.omitted_constants = self.problem.omitted_constants;
        Ok(report)
    }

    /// Lower bound on the surrogate program from the current multipliers.
    pub fn dual_bound(&mut self) -> f64 {
        self.adjoint();
        let n = self.n;
        let mut bound = 0.0;
        for s in 0..self.tau_x.len() {
            bound += self.gx[s * n..(s + 1) * n]
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
        }
        for p in 0..self.pos_voxel.len() {
            let zero = self.forced_zero(p);
            for l in 0..n {
                if zero && l != FREE {
                    continue;
                }
                let i = p * n + l;
                bound += (self.gy[i] + self.costs[i]).min(0.0);
            }
            if self.gamma_active(p) && self.pos_index[p] == 0 {
                bound -= self.state.duals.gamma[p];
            }
        }
        if self.with_regularizer {
            bound += self.gz.iter().map(|g| g.min(0.0)).sum::<f64>();
        }
        bound
    }

    /// Feasible energy minus the dual bound, clamped at zero.
    ///
    /// The feasible point comes from [`make_feasible`], which satisfies the true constraints but
    /// not necessarily the current linearization, so the raw difference may be slightly negative.
    pub fn primal_dual_gap(&mut self) -> Result<f64> {
        let primal = self.feasible_energy()?.total;
        Ok((primal - self.dual_bound()).max(0.0))
    }

    /// Re-linearize at `(x, y)`; duals at positions whose branch flipped are reset.
    pub fn set_branches(&mut self, branch: MajorizerState) {
        let n = self.n;
        let d = &mut self.state.duals;
        for (p, (old, new)) in self
            .state
            .branch
            .flags()
            .iter()
            .zip(branch.flags())
            .enumerate()
        {
            if old != new {
                d.gamma[p] = 0.0;
                d.alpha[p * n..(p + 1) * n].fill(0.0);
                d.beta[p * n..(p + 1) * n].fill(0.0);
            }
        }
        self.state.branch = branch;
        self.update_steps();
    }

    /// Run primal-dual iterations without majorization until `iters`, or until over `check`
    /// iterations the feasible energy moves by at most `tol` (relative) and `x` by at most 1e-8.
    pub fn run_fixed(&mut self, iters: usize, check: usize, tol: f64) -> Result<EnergyReport> {
        let mut last = self.feasible_energy()?;
        let mut done = 0;
        while done < iters {
            let step = check.min(iters - done);
            let before = self.state.x.values().to_vec();
            self.inner_minimize(step);
            done += step;
            let report = self.feasible_energy()?;
            let moved = before
                .iter()
                .zip(self.state.x.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let stalled = (report.total - last.total).abs() <= tol * report.total.abs().max(1.0)
                && moved <= 1e-8;
            last = report;
            if stalled {
                break;
            }
        }
        Ok(last)
    }
}

/// Simplex projection of `x`, greedy visibility for every ray, then feasible transition gradients.
pub fn make_feasible(
    x: &LabelField,
    z: &TransitionGradients,
    rays: &[Ray],
) -> Result<(LabelField, VisibilityField, TransitionGradients)> {
    let n = x.n_labels();
    let mut xf = x.clone();
    for s in 0..xf.grid().len() {
        project_in_place(xf.voxel_mut(s));
    }
    let mut y = VisibilityField::zeros(rays, n);
    for (r, ray) in rays.iter().enumerate() {
        fill_visibility(&xf, ray, y.ray_mut(r))?;
    }
    let zf = feasible_z(&xf, z)?;
    Ok((xf, y, zf))
}

/// Optimal ray term for `x` without visibility consistency: every label independently takes
/// `y_i^l = min(y_{i-1}^f, x_{s_i}^l)` where its cost is negative.
pub fn relaxed_ray_energy(x: &LabelField, ray: &Ray) -> f64 {
    let n = ray.n_labels();
    let mut prev_free: f64 = 1.0;
    let mut total = 0.0;
    for i in 0..ray.len() {
        let xs = x.voxel(ray.voxel(i));
        let free = prev_free.min(xs[FREE]);
        for l in 0..n {
            let c = ray.cost(i, l);
            if c < 0.0 {
                let y = if l == FREE {
                    free
                } else {
                    prev_free.min(xs[l])
                };
                total += c * y;
            }
        }
        prev_free = free;
    }
    total
}

/// Energy report of a binary labeling (greedy visibility, forced transition gradients).
pub fn labeling_energy(labeling: &BinaryLabeling, problem: &Problem) -> Result<EnergyReport> {
    let n = problem.n_labels();
    let x = LabelField::from_labeling(labeling, n);
    let (x, y, z) = make_feasible(
        &x,
        &TransitionGradients::zeros(&problem.grid, n),
        &problem.rays,
    )?;
    let mut report = total_energy(&x, &y, &z, &problem.rays, &problem.model);
    report.omitted_constants = problem.omitted_constants;
    Ok(report)
}

/// Majorize-minimize from the uniform label field.
pub fn reconstruct(problem: &Problem, config: &SolverConfig) -> Result<Reconstruction> {
    let clock = Stopwatch::start();
    let mut warnings = Vec::new();
    if problem.rays.is_empty() && problem.model.is_zero() {
        warnings
            .push("no rays and no regularizer: returning the rounded uniform field".to_string());
        let x = uniform_init(&problem.grid, &problem.labels);
        let labeling = argmax_round(&x);
        let report = labeling_energy(&labeling, problem)?;
        let mut relaxed_report = report.clone();
        relaxed_report.total = 0.0;
        return Ok(Reconstruction {
            labeling,
            report,
            relaxed: x,
            relaxed_report,
            trace: Vec::new(),
            accepted_energies: Vec::new(),
            warnings,
        });
    }
    let p = config.inner_iters.max(1);
    let mut solver = Solver::new(problem, VisibilityMode::Majorized)?;
    let mut best_x = solver.state.x.clone();
    let mut best_report = EnergyReport::default();
    let mut trace = Vec::new();
    let mut gap_scale: Option<f64> = None;
    for outer in 0..config.max_outer {
        let surrogate = solver.surrogate_energy();
        let (x, y, z) = solver.make_feasible()?;
        let mut report = total_energy(&x, &y, &z, &problem.rays, &problem.model);
        report.omitted_constants = problem.omitted_constants;
        let accepted = report.total <= solver.state.best_feasible_energy;
        if accepted {
            solver.state.best_feasible_energy = report.total;
            solver.state.energy_history.push(report.total);
            best_x = x.clone();
            best_report = report.clone();
            if outer > 0 {
                let branch = majorize(&x, &y, &problem.rays, config.tie_branch);
                solver.set_branches(branch);
            }
            solver.state.x = x;
            solver.state.y = y;
            solver.state.z = z;
        }
        let mut gap = None;
        if config.gap_check {
            gap = Some(solver.primal_dual_gap()?);
        }
        trace.push(TraceRow {
            outer_step: outer,
            accepted,
            feasible_energy: report.total,
            surrogate_energy: surrogate,
            gap,
            wall_ms: clock.ms(),
        });
        let hist = &solver.state.energy_history;
        if accepted && hist.len() > 10 {
            let now = hist[hist.len() - 1];
            let then = hist[hist.len() - 11];
            if (then - now).abs() <= config.rel_energy_tol * now.abs().max(1e-12) {
                break;
            }
        }
        if outer + 1 == config.max_outer {
            break;
        }
        solver.inner_minimize(p);
        if config.gap_check {
            let first = match gap_scale {
                Some(c) => c,
                None => {
                    let c = gap.unwrap_or(0.0);
                    gap_scale = Some(c);
                    c
                }
            };
            let bound = first / (outer + 1) as f64;
            for _ in 1..config.gap_max_rounds {
                if solver.primal_dual_gap()? <= bound {
                    break;
                }
                solver.inner_minimize(p);
            }
        }
    }
    let labeling = argmax_round(&best_x);
    let report = labeling_energy(&labeling, problem)?;
    Ok(Reconstruction {
        labeling,
        report,
        relaxed: best_x,
        relaxed_report: best_report,
        trace,
        accepted_energies: solver.state.energy_history.clone(),
        warnings,
    })
}

/// Weight of the pull toward the uniform field during the first half of [`relaxation_solve`].
pub const RELAXATION_ANCHOR: f64 = 1e-3;

/// Convex relaxation without the visibility-consistency constraint, run from the uniform field.
pub fn relaxation_solve(problem: &Problem, iters: usize) -> Result<(LabelField, EnergyReport)> {
    let mut solver = Solver::new(problem, VisibilityMode::Relaxed)?;
    solver.set_anchor(RELAXATION_ANCHOR);
    solver.run_fixed(iters / 2, 200, 1e-12)?;
    solver.set_anchor(0.0);
    let report = solver.run_fixed(iters - iters / 2, 200, 1e-12)?;
    let (x, _, _) = solver.make_feasible()?;
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raypot::build_visibility;

    fn three_voxel_problem() -> Problem {
        let grid = VoxelGrid::unit([3, 1, 1]).unwrap();
        let ray = Ray::with_occupied_costs(vec![0, 1, 2], &[-2.0, -3.0, -2.0], 2).unwrap();
        Problem {
            grid,
            labels: LabelSpace::new(2).unwrap(),
            rays: vec![ray],
            model: SmoothnessModel::uniform(2, 0.0).unwrap(),
            omitted_constants: 0.0,
        }
    }

    #[test]
    fn three_voxel_binary_energy() {
        let prob = three_voxel_problem();
        let lab = BinaryLabeling::new(prob.grid.clone(), vec![0, 1, 0]).unwrap();
        let report = labeling_energy(&lab, &prob).unwrap();
        assert_eq!(report.total, -3.0);
    }

    #[test]
    fn empty_rays_zero_energy() {
        let grid = VoxelGrid::unit([2, 2, 2]).unwrap();
        let x = uniform_init(&grid, &LabelSpace::new(2).unwrap());
        let y = VisibilityField::zeros(&[], 2);
        let z = TransitionGradients::zeros(&grid, 2);
        let model = SmoothnessModel::uniform(2, 1.0).unwrap();
        assert_eq!(total_energy(&x, &y, &z, &[], &model).total, 0.0);
    }

    #[test]
    fn mm_reaches_binary_optimum_on_three_voxel_ray() {
        let prob = three_voxel_problem();
        let rec = reconstruct(&prob, &SolverConfig::default()).unwrap();
        assert_eq!(rec.labeling.get(0), 0);
        assert_eq!(rec.labeling.get(1), 1);
        assert_eq!(rec.report.total, -3.0);
    }

    #[test]
    fn relaxation_reaches_half() {
        let prob = three_voxel_problem();
        let (x, report) = relaxation_solve(&prob, 20000).unwrap();
        assert!((report.total + 3.5).abs() < 1e-3, "{}", report.total);
        assert!((x.get(0, 0) - 0.5).abs() < 1e-3);
        assert!((x.get(1, 0) - 0.5).abs() < 1e-3);
        assert!((x.get(2, 0) - 0.5).abs() < 1e-3, "{:?}", x.voxel(2));
    }

    #[test]
    fn feasible_binary_state_is_fixed_point() {
        let prob = three_voxel_problem();
        let lab = BinaryLabeling::new(prob.grid.clone(), vec![0, 1, 0]).unwrap();
        let x = LabelField::from_labeling(&lab, 2);
        let (xf, y, _) =
            make_feasible(&x, &TransitionGradients::zeros(&prob.grid, 2), &prob.rays).unwrap();
        assert_eq!(xf, x);
        assert_eq!(
            y.ray(0),
            build_visibility(&x, &prob.rays[0]).unwrap().as_slice()
        );
    }
}
