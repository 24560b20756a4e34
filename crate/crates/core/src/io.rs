//! File formats: PFM depth/score maps, PGM slices, camera text files, label volumes, PLY meshes.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::{BinaryLabeling, LabelField, VoxelGrid};
use crate::mesh::Mesh;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Single-channel float image, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Grayscale PFM bytes: little-endian (scale -1), rows stored bottom to top.
pub fn encode_pfm(img: &FloatImage) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for row in (0..img.height).rev() {
        for &v in &img.data[row * img.width..(row + 1) * img.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

// Next whitespace-delimited header token, advancing `pos`.
fn token<'b>(bytes: &'b [u8], pos: &mut usize) -> Option<&'b str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos)
        .then(|| std::str::from_utf8(&bytes[start..*pos]).ok())
        .flatten()
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FloatImage> {
    let bad = |msg: &str| Error::format(path, msg);
    let mut pos = 0;
    let channels = match token(bytes, &mut pos) {
        Some("Pf") => 1,
        Some("PF") => 3,
        _ => return Err(bad("not a PFM file")),
    };
    let mut num = |what: &str| -> Result<f64> {
        token(bytes, &mut pos)
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| bad(&format!("bad {what} in PFM header")))
    };
    let width = num("width")? as usize;
    let height = num("height")? as usize;
    let scale = num("scale")?;
    if scale == 0.0 {
        return Err(bad("PFM scale must be non-zero"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * channels * 4;
    if bytes.len() < pos + need {
        return Err(bad(&format!("raster truncated: need {need} bytes")));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0f32; width * height];
    for (k, chunk) in raster.chunks_exact(4 * channels).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row_from_bottom, col) = (k / width, k % width);
        data[(height - 1 - row_from_bottom) * width + col] = v;
    }
    Ok(FloatImage {
        width,
        height,
        data,
    })
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    decode_pfm(&read(path)?, path)
}

pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    write(path, &encode_pfm(img))
}

/// 8-bit binary PGM (P5), row 0 at the top.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |msg: &str| Error::format(path, msg);
    let mut pos = 0;
    if token(bytes, &mut pos) != Some("P5") {
        return Err(bad("not a binary PGM file"));
    }
    let mut num = || token(bytes, &mut pos).and_then(|t| t.parse::<usize>().ok());
    let (Some(w), Some(h), Some(255)) = (num(), num(), num()) else {
        return Err(bad("bad PGM header"));
    };
    pos += 1;
    if bytes.len() < pos + w * h {
        return Err(bad("PGM raster truncated"));
    }
    Ok((w, h, bytes[pos..pos + w * h].to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write(path, &encode_pgm(width, height, pixels))
}

/// Camera text: three lines of `K`, three of `R`, one of `t`, then `width height`.
pub fn encode_camera(cam: &Camera) -> String {
    let mut s = String::new();
    for m in [cam.intrinsics(), cam.rotation()] {
        for r in 0..3 {
            s.push_str(&format!(
                "{:?} {:?} {:?}\n",
                m[(r, 0)],
                m[(r, 1)],
                m[(r, 2)]
            ));
        }
    }
    let t = cam.translation();
    s.push_str(&format!("{:?} {:?} {:?}\n", t.x, t.y, t.z));
    let (w, h) = cam.image_size();
    s.push_str(&format!("{w} {h}\n"));
    s
}

pub fn decode_camera(text: &str, path: &Path) -> Result<Camera> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() < 8 {
        return Err(Error::format(
            path,
            format!("camera file needs 8 lines, found {}", lines.len()),
        ));
    }
    let row = |i: usize| -> Result<[f64; 3]> {
        let v: Vec<f64> = lines[i]
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        v.try_into()
            .map_err(|_| Error::format(path, format!("line {}: expected 3 numbers", i + 1)))
    };
    let mat = |first: usize| -> Result<Matrix3<f64>> {
        let (a, b, c) = (row(first)?, row(first + 1)?, row(first + 2)?);
        Ok(Matrix3::new(
            a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2],
        ))
    };
    let k = mat(0)?;
    let r = mat(3)?;
    let t = row(6)?;
    let size: Vec<usize> = lines[7]
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, format!("line 8: {e}")))?;
    if size.len() != 2 {
        return Err(Error::format(path, "line 8: expected `width height`"));
    }
    Camera::new(k, r, Vector3::from(t), (size[0], size[1]))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_camera(&text, path)
}

pub fn write_camera(path: &Path, cam: &Camera) -> Result<()> {
    write(path, encode_camera(cam).as_bytes())
}

pub const VOLUME_MAGIC: &[u8; 8] = b"RAYVOXEL";
pub const VOLUME_VERSION: u32 = 1;
const FLAG_RELAXED: u32 = 1;

/// Contents of a volume file. Grid placement is not stored: loaded grids have unit voxels at the
/// origin.
#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Labels {
        labeling: BinaryLabeling,
        n_labels: usize,
    },
    Field(LabelField),
}

impl Volume {
    pub fn grid(&self) -> &VoxelGrid {
        match self {
            Volume::Labels { labeling, .. } => labeling.grid(),
            Volume::Field(x) => x.grid(),
        }
    }

    pub fn n_labels(&self) -> usize {
        match self {
            Volume::Labels { n_labels, .. } => *n_labels,
            Volume::Field(x) => x.n_labels(),
        }
    }
}

/// 16-byte header (magic, version, flags), dims and label count as u32 LE, then either one u8
/// label per voxel or one f32 per voxel and label.
pub fn encode_volume(vol: &Volume) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    let flags = if matches!(vol, Volume::Field(_)) {
        FLAG_RELAXED
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    for d in vol.grid().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(vol.n_labels() as u32).to_le_bytes());
    match vol {
        Volume::Labels { labeling, .. } => out.extend_from_slice(labeling.labels()),
        Volume::Field(x) => {
            for &v in x.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Volume> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 32 {
        return Err(bad(format!(
            "volume header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..8] != VOLUME_MAGIC {
        return Err(bad("bad volume magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(8);
    if version != VOLUME_VERSION {
        return Err(bad(format!("unsupported volume version {version}")));
    }
    let flags = word(12);
    if flags & !FLAG_RELAXED != 0 {
        return Err(bad(format!("unknown volume flags {flags:#x}")));
    }
    let dims = [word(16) as usize, word(20) as usize, word(24) as usize];
    let n_labels = word(28) as usize;
    let grid = VoxelGrid::unit(dims).map_err(|e| bad(e.to_string()))?;
    let payload = &bytes[32..];
    if flags & FLAG_RELAXED != 0 {
        let need = grid.len() * n_labels * 4;
        if payload.len() != need {
            return Err(bad(format!(
                "expected {need} payload bytes, found {}",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Volume::Field(LabelField::from_values(
            grid, n_labels, values,
        )?))
    } else {
        if payload.len() != grid.len() {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                grid.len(),
                payload.len()
            )));
        }
        if let Some(&l) = payload.iter().find(|&&l| l as usize >= n_labels) {
            return Err(bad(format!("label {l} out of range for {n_labels} labels")));
        }
        let labeling = BinaryLabeling::new(grid, payload.to_vec())?;
        Ok(Volume::Labels { labeling, n_labels })
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&read(path)?, path)
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    write(path, &encode_volume(vol))
}

/// ASCII PLY with per-vertex colors.
pub fn encode_ply(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    s.push_str(&format!("element face {}\n", mesh.triangles.len()));
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (p, c) in mesh.vertices.iter().zip(&mesh.colors) {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p[0], p[1], p[2], c[0], c[1], c[2]
        ));
    }
    for t in &mesh.triangles {
        s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    s
}

/// Reads back what [`encode_ply`] writes.
pub fn decode_ply(text: &str, path: &Path) -> Result<Mesh> {
    let bad = |msg: &str| Error::format(path, msg);
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("not a PLY file"));
    }
    let (mut nv, mut nf) = (None, None);
    for line in lines.by_ref() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => nv = n.parse::<usize>().ok(),
            ["element", "face", n] => nf = n.parse::<usize>().ok(),
            ["end_header"] => break,
            _ => {}
        }
    }
    let (Some(nv), Some(nf)) = (nv, nf) else {
        return Err(bad("PLY header lacks element counts"));
    };
    let mut mesh = Mesh::default();
    for _ in 0..nv {
        let parts: Vec<f64> = lines
            .next()
            .ok_or_else(|| bad("missing vertex"))?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad("bad vertex")))
            .collect::<Result<_>>()?;
        if parts.len() != 6 {
            return Err(bad("vertex needs 6 fields"));
        }
        mesh.vertices.push([parts[0], parts[1], parts[2]]);
        mesh.colors
            .push([parts[3] as u8, parts[4] as u8, parts[5] as u8]);
    }
    for _ in 0..nf {
        let parts: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing face"))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad("bad face")))
            .collect::<Result<_>>()?;
        if parts.len() != 4 || parts[0] != 3 || parts[1..].iter().any(|&i| i >= nv) {
            return Err(bad("faces must be triangles over existing vertices"));
        }
        mesh.triangles.push([parts[1], parts[2], parts[3]]);
    }
    Ok(mesh)
}

pub fn write_ply(path: &Path, mesh: &Mesh) -> Result<()> {
    write(path, encode_ply(mesh).as_bytes())
}

pub fn read_ply(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&text, path)
}
