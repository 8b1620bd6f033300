//! OBJ (vertices and faces only) and binary little-endian PLY.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let mesh = match extension(path).as_deref() {
        Some("obj") => read_obj(BufReader::new(fs::File::open(path)?), path)?,
        Some("ply") => read_ply(BufReader::new(fs::File::open(path)?), path)?,
        _ => return Err(Error::UnsupportedFormat(path.to_path_buf())),
    };
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    Ok(mesh)
}

/// Writes via a temporary sibling and renames it into place.
/// Like [`load_mesh`], but a file with no faces yields an empty mesh.
pub fn load_mesh_or_empty(path: impl AsRef<Path>) -> Result<TriMesh> {
    match load_mesh(path) {
        Err(Error::EmptyMesh) => Ok(TriMesh::empty()),
        other => other,
    }
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = extension(path);
    if !matches!(ext.as_deref(), Some("obj" | "ply")) {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    let tmp = path.with_extension(format!("{}.tmp", ext.as_deref().unwrap_or("")));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        match ext.as_deref() {
            Some("obj") => write_obj(mesh, &mut w)?,
            _ => write_ply(mesh, &mut w)?,
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn read_obj<R: BufRead>(reader: R, path: &Path) -> Result<TriMesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let tok = tokens.next().ok_or_else(|| err(n + 1, "short vertex".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| err(n + 1, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vec3::from(xyz));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|_| err(n + 1, format!("bad face index {tok:?}")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(err(n + 1, "face index 0".into()));
                    };
                    if resolved < 0 {
                        return Err(err(n + 1, format!("face index {idx} out of range")));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(err(n + 1, "face with fewer than 3 vertices".into()));
                }
                for i in 1..poly.len() - 1 {
                    triangles.push([poly[0], poly[i], poly[i + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn write_obj<W: Write>(mesh: &TriMesh, w: &mut W) -> Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        Ok(match self {
            Self::I8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as i8 as f64
            }
            Self::U8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as f64
            }
            Self::I16 => {
                r.read_exact(&mut b[..2])?;
                i16::from_le_bytes([b[0], b[1]]) as f64
            }
            Self::U16 => {
                r.read_exact(&mut b[..2])?;
                u16::from_le_bytes([b[0], b[1]]) as f64
            }
            Self::I32 => {
                r.read_exact(&mut b[..4])?;
                i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Self::U32 => {
                r.read_exact(&mut b[..4])?;
                u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Self::F32 => {
                r.read_exact(&mut b[..4])?;
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Self::F64 => {
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

pub fn read_ply<R: BufRead>(mut reader: R, path: &Path) -> Result<TriMesh> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(err("missing ply magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(err("unterminated header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => return Err(err(format!("unsupported ply format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(format!("bad count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                let c = Scalar::parse(count_ty).ok_or_else(|| err(format!("bad type {count_ty}")))?;
                let i = Scalar::parse(item_ty).ok_or_else(|| err(format!("bad type {item_ty}")))?;
                el.properties.push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                let t = Scalar::parse(ty).ok_or_else(|| err(format!("bad type {ty}")))?;
                el.properties.push(Property::Scalar(name.to_string(), t));
            }
            _ => return Err(err(format!("unexpected header line {:?}", line.trim_end()))),
        }
    }

    let truncated = |e: std::io::Error| err(format!("truncated body: {e}"));
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        let value = ty.read(&mut reader).map_err(truncated)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => xyz[0] = value,
                                "y" => xyz[1] = value,
                                "z" => xyz[2] = value,
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let n = count_ty.read(&mut reader).map_err(truncated)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(item_ty.read(&mut reader).map_err(truncated)?);
                        }
                        let is_faces = el.name == "face"
                            && (name == "vertex_indices" || name == "vertex_index");
                        if is_faces {
                            if n < 3 || items.iter().any(|&i| i < 0.0) {
                                return Err(err("invalid face".into()));
                            }
                            for i in 1..n - 1 {
                                triangles.push([items[0] as u32, items[i] as u32, items[i + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vec3::from(xyz));
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn write_ply<W: Write>(mesh: &TriMesh, w: &mut W) -> Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices().len(),
        mesh.triangles().len()
    )?;
    for v in mesh.vertices() {
        for c in v.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for t in mesh.triangles() {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_cube_mesh;

    #[test]
    fn obj_cube_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        save_mesh(&unit_cube_mesh(), &path).unwrap();
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh, unit_cube_mesh());
        assert!(mesh.is_watertight());
    }

    #[test]
    fn ply_cube_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.ply");
        save_mesh(&unit_cube_mesh(), &path).unwrap();
        assert_eq!(load_mesh(&path).unwrap(), unit_cube_mesh());
    }

    #[test]
    fn obj_quads_and_slashes() {
        let src = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 -1/1\n";
        let mesh = read_obj(src.as_bytes(), Path::new("q.obj")).unwrap();
        assert_eq!(mesh.triangles().len(), 2);
        assert_eq!(mesh.triangles()[1], [0, 2, 3]);
    }

    #[test]
    fn obj_parse_failure() {
        let src = "v 0 0 zero\n";
        assert!(matches!(
            read_obj(src.as_bytes(), Path::new("bad.obj")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.obj");
        std::fs::write(&path, "# nothing\n").unwrap();
        assert!(matches!(load_mesh(&path), Err(Error::EmptyMesh)));
    }

    #[test]
    fn ply_with_extra_properties() {
        let mut buf = Vec::new();
        write!(
            buf,
            "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\n\
             property float y\nproperty float z\nproperty uchar red\nelement face 1\n\
             property list uchar uint vertex_indices\nend_header\n"
        )
        .unwrap();
        for (x, y) in [(0f32, 0f32), (1.0, 0.0), (0.0, 1.0)] {
            buf.extend(x.to_le_bytes());
            buf.extend(y.to_le_bytes());
            buf.extend(0f32.to_le_bytes());
            buf.push(255);
        }
        buf.push(3);
        for i in 0u32..3 {
            buf.extend(i.to_le_bytes());
        }
        let mesh = read_ply(&buf[..], Path::new("t.ply")).unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2]]);
        assert!((mesh.surface_area() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn truncated_ply_fails() {
        let mut buf = Vec::new();
        write_ply(&unit_cube_mesh(), &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(read_ply(&buf[..], Path::new("t.ply")).is_err());
    }
}
