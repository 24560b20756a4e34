//! JSON run configuration. Relative paths are resolved against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use rayfusion::grid::{LabelSpace, VoxelGrid};
use rayfusion::ingest::IngestConfig;
use rayfusion::regularizer::{SmoothnessModel, SurfacePenalty};
use rayfusion::solver::SolverConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn field(name: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("config field `{name}`: {msg}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: [usize; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    #[serde(default = "one")]
    pub voxel_size: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

/// One of: a single isotropic weight for every pair, a symmetric matrix of pair weights, or an
/// explicit penalty per pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SmoothnessSpec {
    Uniform { weight: f64 },
    PairWeights { pair_weights: Vec<Vec<f64>> },
    Pairs { pairs: Vec<SurfacePenalty> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub camera: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    /// Prefix of the score maps: `<prefix>.label<l>.pfm` for every label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default = "default_volume")]
    pub volume: String,
    #[serde(default = "default_trace")]
    pub trace: String,
    /// Also write the best relaxed field as a float volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxed_volume: Option<String>,
}

fn default_volume() -> String {
    "labels.vol".into()
}

fn default_trace() -> String {
    "trace.csv".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub labels: LabelSpec,
    #[serde(default)]
    pub ingest: IngestConfig,
    pub smoothness: SmoothnessSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    pub views: Vec<ViewSpec>,
    pub output: OutputSpec,
    #[serde(default = "one_thread")]
    pub threads: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one_thread() -> usize {
    1
}

impl RunConfig {
    /// Parse, resolve relative paths and check ranges and input files.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for v in &mut self.views {
            fix(&mut v.camera);
            if let Some(d) = &mut v.depth {
                fix(d);
            }
            if let Some(s) = &mut v.semantics {
                fix(s);
            }
        }
        fix(&mut self.output.dir);
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        self.grid_value()?;
        self.label_space()?;
        self.model()?;
        let ing = &self.ingest;
        if !(ing.lambda >= 0.0 && ing.lambda.is_finite()) {
            return Err(field("ingest.lambda", format!("must be >= 0, got {}", ing.lambda)));
        }
        if !ing.k.is_finite() {
            return Err(field("ingest.k", "must be finite"));
        }
        if !ing.semantic_weight.is_finite() {
            return Err(field("ingest.semantic_weight", "must be finite"));
        }
        if ing.pixel_stride == 0 {
            return Err(field("ingest.pixel_stride", "must be >= 1"));
        }
        let s = &self.solver;
        if s.inner_iters == 0 {
            return Err(field("solver.inner_iters", "must be >= 1"));
        }
        if s.max_outer == 0 {
            return Err(field("solver.max_outer", "must be >= 1"));
        }
        if !(s.rel_energy_tol >= 0.0) {
            return Err(field("solver.rel_energy_tol", "must be >= 0"));
        }
        if self.threads == 0 {
            return Err(field("threads", "must be >= 1"));
        }
        for (i, v) in self.views.iter().enumerate() {
            if !v.camera.is_file() {
                return Err(field(&format!("views[{i}].camera"), format!("{} not found", v.camera.display())));
            }
            if let Some(d) = &v.depth {
                if !d.is_file() {
                    return Err(field(&format!("views[{i}].depth"), format!("{} not found", d.display())));
                }
            }
            if let Some(p) = &v.semantics {
                for l in 0..self.labels.count {
                    let f = semantic_path(p, l);
                    if !f.is_file() {
                        return Err(field(&format!("views[{i}].semantics"), format!("{} not found", f.display())));
                    }
                }
            }
            if v.depth.is_none() && v.semantics.is_none() {
                return Err(field(&format!("views[{i}]"), "needs a depth map or semantic scores"));
            }
        }
        Ok(())
    }

    pub fn grid_value(&self) -> Result<VoxelGrid, ConfigError> {
        VoxelGrid::new(self.grid.dims, self.grid.origin, self.grid.voxel_size).map_err(|e| field("grid", e))
    }

    pub fn label_space(&self) -> Result<LabelSpace, ConfigError> {
        if self.labels.count > 256 {
            return Err(field("labels.count", "at most 256 labels fit the volume format"));
        }
        match &self.labels.names {
            Some(names) => {
                if names.len() != self.labels.count {
                    return Err(field(
                        "labels.names",
                        format!("{} names for {} labels", names.len(), self.labels.count),
                    ));
                }
                LabelSpace::with_names(names.clone()).map_err(|e| field("labels", e))
            }
            None => LabelSpace::new(self.labels.count).map_err(|e| field("labels.count", e)),
        }
    }

    pub fn model(&self) -> Result<SmoothnessModel, ConfigError> {
        let n = self.labels.count;
        match &self.smoothness {
            SmoothnessSpec::Uniform { weight } => {
                SmoothnessModel::uniform(n, *weight).map_err(|e| field("smoothness.weight", e))
            }
            SmoothnessSpec::PairWeights { pair_weights } => {
                if pair_weights.len() != n {
                    return Err(field("smoothness.pair_weights", format!("needs {n} rows")));
                }
                SmoothnessModel::isotropic(pair_weights).map_err(|e| field("smoothness.pair_weights", e))
            }
            SmoothnessSpec::Pairs { pairs } => {
                SmoothnessModel::new(n, pairs.clone()).map_err(|e| field("smoothness.pairs", e))
            }
        }
    }
}

pub fn semantic_path(prefix: &Path, label: usize) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".label{label}.pfm"));
    PathBuf::from(s)
}
