mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayfusion::grid::{argmax_round, BinaryLabeling, VoxelGrid};
use rayfusion::ingest::{build_rays, DepthMap, SemanticScores, View};
use rayfusion::io::{self, FloatImage, Volume};
use rayfusion::mesh::extract_boundary;
use rayfusion::oracle::{convex_relaxation_solve, slice_export, weak_relaxation_instance};
use rayfusion::solver::{reconstruct, trace_csv, Problem, SolverConfig};
use rayfusion::synth::{box_scene, sphere_scene, wall_scene, Scene};
use rayfusion::validate::run_validation;
use serde_json::json;

use config::{semantic_path, GridSpec, LabelSpec, OutputSpec, RunConfig, SmoothnessSpec, ViewSpec};

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "rayfusion", version, about = "Multi-label volumetric fusion with ray potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse the views of a JSON run configuration into a label volume.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the thread count of the configuration.
        #[arg(long)]
        threads: Option<usize>,
        /// Comma-separated `axis:index` pairs, axis one of x, y, z.
        #[arg(long, value_delimiter = ',')]
        emit_slices: Vec<String>,
        #[arg(long)]
        emit_mesh: bool,
    },
    /// Built-in demonstrations.
    Demo {
        #[arg(value_enum)]
        which: DemoKind,
    },
    /// Run the property suites on seeded random instances.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Boundary mesh of a label volume as a PLY file.
    ExportMesh {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// World position of the grid's lower corner, `x,y,z`.
        #[arg(long, value_delimiter = ',')]
        origin: Option<Vec<f64>>,
        #[arg(long)]
        voxel_size: Option<f64>,
    },
    /// Write a synthetic dataset with its run configuration and ground truth.
    Synth {
        #[arg(long, value_enum)]
        scene: SceneKind,
        #[arg(long)]
        out: PathBuf,
        /// Grid edge length in voxels.
        #[arg(long)]
        size: Option<usize>,
        /// Number of views (per side for the wall).
        #[arg(long)]
        views: Option<usize>,
        /// Image edge length in pixels.
        #[arg(long)]
        image: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoKind {
    WeakRelaxation,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Sphere,
    Wall,
    Box,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Reconstruct {
            config,
            threads,
            emit_slices,
            emit_mesh,
        } => cmd_reconstruct(&config, threads, &emit_slices, emit_mesh),
        Command::Demo { which } => match which {
            DemoKind::WeakRelaxation => cmd_demo_weak_relaxation(),
        },
        Command::Validate { seed, trials } => cmd_validate(seed, trials),
        Command::ExportMesh {
            input,
            out,
            origin,
            voxel_size,
        } => cmd_export_mesh(&input, &out, origin, voxel_size),
        Command::Synth {
            scene,
            out,
            size,
            views,
            image,
        } => cmd_synth(scene, &out, size, views, image),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn parse_slice(spec: &str) -> CliResult<(usize, usize)> {
    let bad = || format!("--emit-slices: expected axis:index, got `{spec}`");
    let (a, i) = spec.split_once(':').ok_or_else(bad)?;
    let axis = match a.trim() {
        "x" | "0" => 0,
        "y" | "1" => 1,
        "z" | "2" => 2,
        _ => return Err(bad().into()),
    };
    let index = i.trim().parse().map_err(|_| bad())?;
    Ok((axis, index))
}

fn load_views(cfg: &RunConfig) -> CliResult<Vec<View>> {
    let n = cfg.labels.count;
    let mut views = Vec::with_capacity(cfg.views.len());
    for v in &cfg.views {
        let camera = io::read_camera(&v.camera)?;
        let depth = match &v.depth {
            Some(p) => {
                let img = io::read_pfm(p)?;
                Some(DepthMap::new(img.width, img.height, img.data)?)
            }
            None => None,
        };
        let semantics = match &v.semantics {
            Some(prefix) => {
                let mut channels = Vec::with_capacity(n);
                for l in 0..n {
                    channels.push(io::read_pfm(&semantic_path(prefix, l))?);
                }
                let (w, h) = (channels[0].width, channels[0].height);
                let mut scores = vec![0f32; w * h * n];
                for (l, img) in channels.iter().enumerate() {
                    if (img.width, img.height) != (w, h) {
                        return Err(format!("{}: size differs from label 0", semantic_path(prefix, l).display()).into());
                    }
                    for (px, &s) in img.data.iter().enumerate() {
                        scores[px * n + l] = s;
                    }
                }
                Some(SemanticScores::new(w, h, n, scores)?)
            }
            None => None,
        };
        views.push(View {
            camera,
            depth,
            semantics,
        });
    }
    Ok(views)
}

fn cmd_reconstruct(path: &Path, threads: Option<usize>, slices: &[String], emit_mesh: bool) -> CliResult<ExitCode> {
    let started = Instant::now();
    let mut cfg = RunConfig::load(path)?;
    if let Some(t) = threads {
        if t == 0 {
            return Err("--threads must be >= 1".into());
        }
        cfg.threads = t;
    }
    let slices = slices.iter().map(|s| parse_slice(s)).collect::<CliResult<Vec<_>>>()?;
    let grid = cfg.grid_value()?;
    for &(axis, index) in &slices {
        if index >= grid.dims()[axis] {
            return Err(format!("--emit-slices: index {index} outside axis of length {}", grid.dims()[axis]).into());
        }
    }
    let labels = cfg.label_space()?;
    let model = cfg.model()?;
    let views = load_views(&cfg)?;
    let rays = build_rays(&views, &grid, labels.count(), &cfg.ingest)?;
    eprintln!(
        "{} rays ({} missed the grid, {} with depth outside, {} without data)",
        rays.rays.len(),
        rays.missed_grid,
        rays.depth_outside_grid,
        rays.no_data
    );
    let problem = Problem {
        grid: grid.clone(),
        labels,
        rays: rays.rays,
        model,
        omitted_constants: rays.omitted_constants,
    };
    let rec = reconstruct(&problem, &cfg.solver)?;
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }

    let out = &cfg.output.dir;
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let n_labels = problem.n_labels();
    io::write_volume(
        &out.join(&cfg.output.volume),
        &Volume::Labels {
            labeling: rec.labeling.clone(),
            n_labels,
        },
    )?;
    if let Some(name) = &cfg.output.relaxed_volume {
        io::write_volume(&out.join(name), &Volume::Field(rec.relaxed.clone()))?;
    }
    let trace_path = out.join(&cfg.output.trace);
    std::fs::write(&trace_path, trace_csv(&rec.trace)).map_err(|e| format!("{}: {e}", trace_path.display()))?;
    let mut written = Vec::new();
    for &(axis, index) in &slices {
        let (w, h, px) = slice_export(&rec.relaxed, axis, index)?;
        let name = format!("slice_{}_{index}.pgm", ["x", "y", "z"][axis]);
        io::write_pgm(&out.join(&name), w, h, &px)?;
        written.push(name);
    }
    if emit_mesh {
        io::write_ply(&out.join("mesh.ply"), &extract_boundary(&rec.labeling))?;
        written.push("mesh.ply".into());
    }
    let occupied = rec.labeling.labels().iter().filter(|&&l| l != 0).count();
    let report = json!({
        "rays": problem.rays.len(),
        "missed_grid": rays.missed_grid,
        "depth_outside_grid": rays.depth_outside_grid,
        "no_data": rays.no_data,
        "energy": rec.report.original_scale(),
        "relaxed_energy": rec.relaxed_report.original_scale(),
        "outer_steps": rec.trace.len(),
        "accepted_steps": rec.accepted_energies.len(),
        "occupied_voxels": occupied,
        "threads": cfg.threads,
        "seconds": started.elapsed().as_secs_f64(),
        "warnings": rec.warnings,
        "extra_outputs": written,
    });
    let report_path = out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .map_err(|e| format!("{}: {e}", report_path.display()))?;
    println!(
        "energy {:.6} after {} outer steps; wrote {}",
        rec.report.original_scale(),
        rec.trace.len(),
        out.join(&cfg.output.volume).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_demo_weak_relaxation() -> CliResult<ExitCode> {
    let inst = weak_relaxation_instance();
    let (x, relaxed_energy) = convex_relaxation_solve(&inst)?;
    let problem = inst.to_problem();
    let rec = reconstruct(&problem, &SolverConfig::default())?;
    println!("three voxels on one ray, occupied costs -2, -3, -2, free cost 0");
    println!("convex relaxation energy: {relaxed_energy:.6}");
    for s in 0..x.grid().len() {
        println!("  voxel {s}: x_free = {:.6}", x.get(s, 0));
    }
    println!("majorize-minimize energy: {:.6}", rec.report.original_scale());
    let labels: Vec<String> = rec.labeling.labels().iter().map(|l| l.to_string()).collect();
    println!("  labeling: [{}]", labels.join(", "));
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(seed: u64, trials: usize) -> CliResult<ExitCode> {
    let report = run_validation(seed, trials);
    print!("{}", report.render());
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_export_mesh(input: &Path, out: &Path, origin: Option<Vec<f64>>, voxel_size: Option<f64>) -> CliResult<ExitCode> {
    if origin.as_ref().is_some_and(|o| o.len() != 3) {
        return Err("--origin: expected three comma-separated numbers".into());
    }
    let vol = io::read_volume(input)?;
    let labeling = match vol {
        Volume::Labels { labeling, .. } => labeling,
        Volume::Field(x) => argmax_round(&x),
    };
    let labeling = if origin.is_some() || voxel_size.is_some() {
        let o = origin.map_or([0.0; 3], |o| [o[0], o[1], o[2]]);
        let grid = VoxelGrid::new(labeling.grid().dims(), o, voxel_size.unwrap_or(1.0))?;
        BinaryLabeling::new(grid, labeling.labels().to_vec())?
    } else {
        labeling
    };
    let mesh = extract_boundary(&labeling);
    io::write_ply(out, &mesh)?;
    println!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    Ok(ExitCode::SUCCESS)
}

fn scene_for(kind: SceneKind, size: Option<usize>, views: Option<usize>, image: Option<usize>) -> CliResult<Scene> {
    Ok(match kind {
        SceneKind::Sphere => {
            let n = size.unwrap_or(64);
            sphere_scene(n, 20.0 * n as f64 / 64.0, views.unwrap_or(20), image.unwrap_or(64))?
        }
        SceneKind::Wall => wall_scene(size.unwrap_or(32), views.unwrap_or(4), image.unwrap_or(48))?,
        SceneKind::Box => box_scene(size.unwrap_or(32), views.unwrap_or(12), image.unwrap_or(48))?,
    })
}

fn cmd_synth(
    kind: SceneKind,
    out: &Path,
    size: Option<usize>,
    views: Option<usize>,
    image: Option<usize>,
) -> CliResult<ExitCode> {
    if size == Some(0) || views == Some(0) || image == Some(0) {
        return Err("--size, --views and --image must be >= 1".into());
    }
    let scene = scene_for(kind, size, views, image)?;
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let n = scene.labels.count();
    let mut specs = Vec::new();
    for (i, view) in scene.views.iter().enumerate() {
        let camera = format!("view{i:03}.cam");
        io::write_camera(&out.join(&camera), &view.camera)?;
        let depth = view.depth.as_ref().map(|d| -> CliResult<String> {
            let name = format!("view{i:03}.depth.pfm");
            let img = FloatImage {
                width: d.width,
                height: d.height,
                data: d.depth.clone(),
            };
            io::write_pfm(&out.join(&name), &img)?;
            Ok(name)
        });
        let semantics = view.semantics.as_ref().map(|s| -> CliResult<String> {
            let base = format!("view{i:03}.sem");
            for l in 0..n {
                let img = FloatImage {
                    width: s.width,
                    height: s.height,
                    data: s.scores.iter().skip(l).step_by(n).copied().collect(),
                };
                io::write_pfm(&semantic_path(&out.join(&base), l), &img)?;
            }
            Ok(base)
        });
        specs.push(ViewSpec {
            camera: camera.into(),
            depth: depth.transpose()?.map(PathBuf::from),
            semantics: semantics.transpose()?.map(PathBuf::from),
        });
    }
    let truth = scene.occupancy();
    io::write_volume(
        &out.join("truth.vol"),
        &Volume::Labels {
            labeling: truth,
            n_labels: n,
        },
    )?;
    let cfg = RunConfig {
        grid: GridSpec {
            dims: scene.grid.dims(),
            origin: scene.grid.origin(),
            voxel_size: scene.grid.voxel_size(),
        },
        labels: LabelSpec {
            count: n,
            names: Some((0..n).map(|l| scene.labels.name(l)).collect()),
        },
        ingest: Default::default(),
        smoothness: SmoothnessSpec::Uniform { weight: 0.5 },
        solver: SolverConfig::default(),
        views: specs,
        output: OutputSpec {
            dir: "out".into(),
            volume: "labels.vol".into(),
            trace: "trace.csv".into(),
            relaxed_volume: None,
        },
        threads: 1,
        seed: 0,
    };
    let cfg_path = out.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)? + "\n")
        .map_err(|e| format!("{}: {e}", cfg_path.display()))?;
    println!("{} scene, {} views, wrote {}", scene.name, scene.views.len(), cfg_path.display());
    Ok(ExitCode::SUCCESS)
}
