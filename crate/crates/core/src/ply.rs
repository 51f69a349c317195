//! Binary little-endian PLY for point clouds and triangle meshes.
//!
//! Writers emit `x,y,z` as float, `red,green,blue` as uchar, optional
//! `nx,ny,nz` as float, and faces as `list uchar uint vertex_indices`.
//! The reader accepts any scalar property types and ignores unknown
//! properties.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::meshing::TriangleMesh;
use crate::pointcloud::PointCloud;

fn quantize(c: f32) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

fn write_vertex_header(out: &mut impl Write, n: usize, colors: bool, normals: bool) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "element vertex {n}")?;
    for a in ["x", "y", "z"] {
        writeln!(out, "property float {a}")?;
    }
    if colors {
        for a in ["red", "green", "blue"] {
            writeln!(out, "property uchar {a}")?;
        }
    }
    if normals {
        for a in ["nx", "ny", "nz"] {
            writeln!(out, "property float {a}")?;
        }
    }
    Ok(())
}

fn write_vertex(
    out: &mut impl Write,
    p: &Vector3<f64>,
    c: Option<&[f32; 3]>,
    n: Option<&Vector3<f64>>,
) -> std::io::Result<()> {
    for v in p.iter() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    if let Some(c) = c {
        out.write_all(&[quantize(c[0]), quantize(c[1]), quantize(c[2])])?;
    }
    if let Some(n) = n {
        for v in n.iter() {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_point_cloud(path: &Path, pc: &PointCloud) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    write_vertex_header(&mut out, pc.len(), pc.colors().is_some(), pc.normals().is_some()).map_err(io)?;
    writeln!(out, "end_header").map_err(io)?;
    for i in 0..pc.len() {
        write_vertex(
            &mut out,
            &pc.positions()[i],
            pc.colors().map(|c| &c[i]),
            pc.normals().map(|n| &n[i]),
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    write_vertex_header(&mut out, mesh.vertices.len(), true, false).map_err(io)?;
    writeln!(out, "element face {}", mesh.triangles.len()).map_err(io)?;
    writeln!(out, "property list uchar uint vertex_indices").map_err(io)?;
    writeln!(out, "end_header").map_err(io)?;
    for (p, c) in mesh.vertices.iter().zip(&mesh.vertex_colors) {
        write_vertex(&mut out, p, Some(c), None).map_err(io)?;
    }
    for t in &mesh.triangles {
        out.write_all(&[3u8]).map_err(io)?;
        for &i in t {
            out.write_all(&i.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct PlyData {
    vertex_props: Vec<(String, Vec<f64>)>,
    faces: Vec<[u32; 3]>,
}

impl PlyData {
    fn column(&self, name: &str) -> Option<&[f64]> {
        self.vertex_props
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    fn positions(&self, path: &Path) -> Result<Vec<Vector3<f64>>> {
        match (self.column("x"), self.column("y"), self.column("z")) {
            (Some(x), Some(y), Some(z)) => Ok((0..x.len()).map(|i| Vector3::new(x[i], y[i], z[i])).collect()),
            _ => Err(Error::format(path, "vertex element lacks x/y/z")),
        }
    }

    fn colors(&self) -> Option<Vec<[f32; 3]>> {
        let (r, g, b) = (self.column("red")?, self.column("green")?, self.column("blue")?);
        Some(
            (0..r.len())
                .map(|i| [(r[i] / 255.0) as f32, (g[i] / 255.0) as f32, (b[i] / 255.0) as f32])
                .collect(),
        )
    }

    fn normals(&self) -> Option<Vec<Vector3<f64>>> {
        let (x, y, z) = (self.column("nx")?, self.column("ny")?, self.column("nz")?);
        Some((0..x.len()).map(|i| Vector3::new(x[i], y[i], z[i])).collect())
    }
}

fn read_ply(path: &Path) -> Result<PlyData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let fmt = |r: &str| Error::format(path, r.to_string());

    let mut line = String::new();
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(fmt("unexpected end of header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if first {
            if tokens != ["ply"] {
                return Err(fmt("not a PLY file"));
            }
            first = false;
            continue;
        }
        match tokens.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(fmt(&format!("unsupported PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| fmt("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| fmt("property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| fmt("bad list count type"))?;
                let it = Scalar::parse(it).ok_or_else(|| fmt("bad list item type"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| fmt("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| fmt(&format!("bad property type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(fmt(&format!("unrecognized header line {:?}", line.trim()))),
        }
    }

    let mut data = PlyData {
        vertex_props: Vec::new(),
        faces: Vec::new(),
    };
    let mut buf = [0u8; 8];
    let eof = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "truncated PLY body")
        } else {
            Error::io(path, e)
        }
    };
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            data.vertex_props = el
                .props
                .iter()
                .filter_map(|p| match p {
                    Property::Scalar(n, _) => Some((n.clone(), Vec::with_capacity(el.count))),
                    Property::List(..) => None,
                })
                .collect();
        }
        for _ in 0..el.count {
            let mut col = 0;
            for p in &el.props {
                match p {
                    Property::Scalar(_, ty) => {
                        reader.read_exact(&mut buf[..ty.size()]).map_err(eof)?;
                        if is_vertex {
                            data.vertex_props[col].1.push(ty.decode(&buf));
                            col += 1;
                        }
                    }
                    Property::List(name, ct, it) => {
                        reader.read_exact(&mut buf[..ct.size()]).map_err(eof)?;
                        let n = ct.decode(&buf) as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            reader.read_exact(&mut buf[..it.size()]).map_err(eof)?;
                            items.push(it.decode(&buf) as u32);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            // fan-triangulate polygons
                            for k in 1..n.saturating_sub(1) {
                                data.faces.push([items[0], items[k], items[k + 1]]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(data)
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let data = read_ply(path)?;
    let mut pc = PointCloud::new(data.positions(path)?);
    if let Some(c) = data.colors() {
        pc = pc.with_colors(c)?;
    }
    if let Some(n) = data.normals() {
        let n: Vec<_> = n
            .into_iter()
            .map(|v| if v.norm() > 0.0 { v.normalize() } else { Vector3::z() })
            .collect();
        pc = pc.with_normals(n)?;
    }
    Ok(pc)
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let data = read_ply(path)?;
    let vertices = data.positions(path)?;
    let vertex_colors = data.colors().unwrap_or_else(|| vec![[0.5; 3]; vertices.len()]);
    let mesh = TriangleMesh {
        vertices,
        vertex_colors,
        triangles: data.faces,
        vertex_density: None,
    };
    mesh.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(mesh)
}
