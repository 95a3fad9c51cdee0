//! OBJ, binary PLY and quantized JSON tile output.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MeshVertex, SurfaceMesh};
use crate::geom::Vec3;
use crate::heightfield::NodeKey;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed mesh file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Obj,
    Ply,
    JsonTiles,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "json" | "json-tiles" | "tiles" => Ok(Self::JsonTiles),
            other => Err(format!("unknown mesh format {other:?} (expected obj, ply or json-tiles)")),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.display().to_string(), source }
}

pub fn export_mesh(mesh: &SurfaceMesh, format: ExportFormat, path: &Path) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    match format {
        ExportFormat::Obj => write_obj(mesh, &mut out),
        ExportFormat::Ply => write_ply(mesh, &mut out),
        ExportFormat::JsonTiles => serde_json::to_writer(&mut out, &tiles_json(mesh)).map_err(std::io::Error::from),
    }
    .map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn write_obj(mesh: &SurfaceMesh, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "# surgedeck surface mesh, timepoint {}", mesh.meta.timepoint)?;
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.position.x, v.position.y, v.position.z)?;
    }
    for v in &mesh.vertices {
        writeln!(out, "vn {} {} {}", v.normal.x, v.normal.y, v.normal.z)?;
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}")?;
    }
    Ok(())
}

const PLY_HEADER_VERTEX: &str = "property float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar hidden\n";

/// Binary little-endian PLY with float positions, normals and a hidden flag.
pub fn write_ply(mesh: &SurfaceMesh, out: &mut impl Write) -> std::io::Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\ncomment surgedeck surface mesh\nelement vertex {}\n{}element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        PLY_HEADER_VERTEX,
        mesh.triangles.len()
    )?;
    for v in &mesh.vertices {
        for x in v.position.iter().chain(v.normal.iter()) {
            out.write_all(&(*x as f32).to_le_bytes())?;
        }
        out.write_all(&[v.hidden as u8])?;
    }
    for t in &mesh.triangles {
        out.write_all(&[3u8])?;
        for i in t {
            out.write_all(&i.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads back the PLY layout produced by [`write_ply`].
pub fn read_ply(input: impl Read) -> Result<(Vec<MeshVertex>, Vec<[u32; 3]>), ExportError> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut vertex_props = String::new();
    let mut current = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).map_err(|e| ExportError::Format(e.to_string()))? == 0 {
            return Err(ExportError::Format("missing end_header".into()));
        }
        header.push_str(&line);
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", f, _] if *f != "binary_little_endian" => return Err(ExportError::Format(format!("unsupported format {f}"))),
            ["element", name, n] => {
                current = name.to_string();
                counts.insert(current.clone(), n.parse().map_err(|_| ExportError::Format(line.clone()))?);
            }
            ["property", ..] if current == "vertex" => vertex_props.push_str(&line),
            _ => {}
        }
    }
    if !header.starts_with("ply\n") || vertex_props != PLY_HEADER_VERTEX {
        return Err(ExportError::Format("unexpected vertex layout".into()));
    }
    let nv = counts.get("vertex").copied().unwrap_or(0);
    let nf = counts.get("face").copied().unwrap_or(0);
    let short = |e: std::io::Error| ExportError::Format(format!("truncated body: {e}"));
    let mut vertices = Vec::with_capacity(nv);
    let mut buf = [0u8; 25];
    for _ in 0..nv {
        reader.read_exact(&mut buf).map_err(short)?;
        let f = |k: usize| f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        vertices.push(MeshVertex {
            position: Vec3::new(f(0), f(1), f(2)),
            normal: Vec3::new(f(3), f(4), f(5)),
            hidden: buf[24] != 0,
        });
    }
    let mut triangles = Vec::with_capacity(nf);
    let mut face = [0u8; 13];
    for _ in 0..nf {
        reader.read_exact(&mut face).map_err(short)?;
        if face[0] != 3 {
            return Err(ExportError::Format("only triangles are supported".into()));
        }
        let idx = |k: usize| u32::from_le_bytes(face[1 + 4 * k..5 + 4 * k].try_into().unwrap());
        triangles.push([idx(0), idx(1), idx(2)]);
    }
    Ok((vertices, triangles))
}

/// Octahedral encoding of a unit normal into two 16-bit values.
pub fn encode_oct(n: &Vec3) -> [u16; 2] {
    let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    let l1 = n.x.abs() + n.y.abs() + n.z.abs();
    let (mut px, mut py) = (n.x / l1, n.y / l1);
    if n.z < 0.0 {
        (px, py) = ((1.0 - py.abs()) * sign(px), (1.0 - px.abs()) * sign(py));
    }
    let q = |v: f64| ((v.clamp(-1.0, 1.0) * 0.5 + 0.5) * 65535.0).round() as u16;
    [q(px), q(py)]
}

pub fn decode_oct(e: [u16; 2]) -> Vec3 {
    let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    let (mut px, mut py) = (e[0] as f64 / 65535.0 * 2.0 - 1.0, e[1] as f64 / 65535.0 * 2.0 - 1.0);
    let z = 1.0 - px.abs() - py.abs();
    if z < 0.0 {
        (px, py) = ((1.0 - py.abs()) * sign(px), (1.0 - px.abs()) * sign(py));
    }
    Vec3::new(px, py, z).normalize()
}

/// One quadnode's geometry with positions quantized to 16 bits:
/// `x = origin[0] + verts_q[3i] / 65535 · scale`, likewise y, and
/// `z = z_origin + verts_q[3i+2] / 65535 · z_scale`. Triangles index the
/// tile's own vertex list; `hidden` is a bitset with bit `i % 8` of byte
/// `i / 8` set for hidden vertex `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshTile {
    pub key: NodeKey,
    pub origin: [f64; 2],
    pub scale: f64,
    pub z_origin: f64,
    pub z_scale: f64,
    pub verts_q: Vec<u16>,
    pub normals_oct: Vec<u16>,
    pub tris: Vec<u32>,
    pub hidden: Vec<u8>,
}

fn quantize(v: f64, origin: f64, scale: f64) -> u16 {
    (((v - origin) / scale).clamp(0.0, 1.0) * 65535.0).round() as u16
}

impl MeshTile {
    pub fn vertex_count(&self) -> usize {
        self.verts_q.len() / 3
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.verts_q
            .chunks_exact(3)
            .map(|q| {
                Vec3::new(
                    self.origin[0] + q[0] as f64 / 65535.0 * self.scale,
                    self.origin[1] + q[1] as f64 / 65535.0 * self.scale,
                    self.z_origin + q[2] as f64 / 65535.0 * self.z_scale,
                )
            })
            .collect()
    }

    pub fn normals(&self) -> Vec<Vec3> {
        self.normals_oct.chunks_exact(2).map(|e| decode_oct([e[0], e[1]])).collect()
    }

    pub fn is_hidden(&self, i: usize) -> bool {
        self.hidden[i / 8] & (1 << (i % 8)) != 0
    }

    pub fn from_patch(mesh: &SurfaceMesh, patch: &super::Patch) -> Self {
        let mut local: HashMap<u32, u32> = HashMap::new();
        let mut order = Vec::new();
        let mut tris = Vec::with_capacity(3 * (patch.strip + patch.interior));
        for t in patch.triangles() {
            for &g in &mesh.triangles[t] {
                let next = order.len() as u32;
                let l = *local.entry(g).or_insert_with(|| {
                    order.push(g);
                    next
                });
                tris.push(l);
            }
        }
        let verts: Vec<&MeshVertex> = order.iter().map(|&g| &mesh.vertices[g as usize]).collect();
        let (mut lo, mut hi) = (Vec3::repeat(f64::MAX), Vec3::repeat(f64::MIN));
        for v in &verts {
            lo = lo.inf(&v.position);
            hi = hi.sup(&v.position);
        }
        if verts.is_empty() {
            (lo, hi) = (Vec3::zeros(), Vec3::zeros());
        }
        let scale = (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE);
        let z_scale = (hi.z - lo.z).max(f64::MIN_POSITIVE);
        let mut verts_q = Vec::with_capacity(3 * verts.len());
        let mut normals_oct = Vec::with_capacity(2 * verts.len());
        let mut hidden = vec![0u8; verts.len().div_ceil(8)];
        for (i, v) in verts.iter().enumerate() {
            verts_q.push(quantize(v.position.x, lo.x, scale));
            verts_q.push(quantize(v.position.y, lo.y, scale));
            verts_q.push(quantize(v.position.z, lo.z, z_scale));
            normals_oct.extend(encode_oct(&v.normal));
            if v.hidden {
                hidden[i / 8] |= 1 << (i % 8);
            }
        }
        Self { key: patch.key, origin: [lo.x, lo.y], scale, z_origin: lo.z, z_scale, verts_q, normals_oct, tris, hidden }
    }
}

/// Tile document consumed by the viewer.
pub fn tiles_json(mesh: &SurfaceMesh) -> serde_json::Value {
    let tiles: Vec<MeshTile> = mesh.patches.iter().map(|p| MeshTile::from_patch(mesh, p)).collect();
    serde_json::json!({
        "format": "surgedeck-tiles",
        "version": 1,
        "timepoint": mesh.meta.timepoint,
        "policy": mesh.meta.policy,
        "tiles": tiles,
    })
}
