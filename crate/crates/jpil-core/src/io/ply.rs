//! PLY reader and writer.
//!
//! Reads ASCII and binary little-endian PLY with a `vertex` element carrying
//! `x`, `y`, `z` (float32 or float64) and an optional `face` element with a
//! `vertex_indices` (or `vertex_index`) list. Unknown properties and elements
//! are skipped. Parse errors carry the byte offset where they occurred.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::mesh::TriangleMesh;

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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
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
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count_ty: Scalar, item_ty: Scalar },
}

#[derive(Debug, Clone)]
struct ElementDef {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::PlyParse { offset: self.pos as u64, message: message.into() }
    }

    fn read_line(&mut self) -> Result<&'a str> {
        if self.pos >= self.data.len() {
            return Err(self.err("unexpected end of file in header"));
        }
        let start = self.pos;
        let end = self.data[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .unwrap_or(self.data.len());
        self.pos = (end + 1).min(self.data.len());
        let mut line = &self.data[start..end];
        if line.last() == Some(&b'\r') {
            line = &line[..line.len() - 1];
        }
        std::str::from_utf8(line)
            .map_err(|_| Error::PlyParse { offset: start as u64, message: "non-UTF8 header line".into() })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!(
                "truncated file: needed {n} bytes, {} remain",
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_scalar(&mut self, ty: Scalar) -> Result<f64> {
        let bytes = self.take(ty.size())?;
        Ok(match ty {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
        })
    }

    /// Next whitespace-separated ASCII token (spans line breaks).
    fn read_token(&mut self) -> Result<&'a str> {
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.data.len() {
            return Err(self.err("truncated file: expected a value"));
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| Error::PlyParse { offset: start as u64, message: "non-UTF8 value".into() })
    }

    fn read_ascii_f64(&mut self) -> Result<f64> {
        let start = self.pos;
        let tok = self.read_token()?;
        tok.parse::<f64>().map_err(|_| Error::PlyParse {
            offset: start as u64,
            message: format!("expected number, got {tok:?}"),
        })
    }
}

struct Header {
    format: Format,
    elements: Vec<ElementDef>,
}

fn parse_header(r: &mut Reader) -> Result<Header> {
    let magic = r.read_line()?;
    if magic.trim() != "ply" {
        return Err(Error::PlyParse { offset: 0, message: "missing 'ply' magic".into() });
    }
    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        let line_start = r.pos;
        let line = r.read_line()?;
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");
        let bad = |msg: String| Error::PlyParse { offset: line_start as u64, message: msg };
        match keyword {
            "comment" | "obj_info" | "" => {}
            "format" => {
                format = Some(match tokens.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => return Err(bad(format!("unsupported format {other:?}"))),
                    None => return Err(bad("format line missing type".into())),
                });
            }
            "element" => {
                let name = tokens.next().ok_or_else(|| bad("element missing name".into()))?;
                let count: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad("element missing count".into()))?;
                elements.push(ElementDef { name: name.to_string(), count, properties: Vec::new() });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element".into()))?;
                let first = tokens.next().ok_or_else(|| bad("property missing type".into()))?;
                if first == "list" {
                    let count_ty = tokens
                        .next()
                        .and_then(Scalar::parse)
                        .ok_or_else(|| bad("bad list count type".into()))?;
                    let item_ty = tokens
                        .next()
                        .and_then(Scalar::parse)
                        .ok_or_else(|| bad("bad list item type".into()))?;
                    let name = tokens.next().ok_or_else(|| bad("list missing name".into()))?;
                    element.properties.push(Property::List {
                        name: name.to_string(),
                        count_ty,
                        item_ty,
                    });
                } else {
                    let ty = Scalar::parse(first)
                        .ok_or_else(|| bad(format!("unknown property type {first:?}")))?;
                    let name = tokens.next().ok_or_else(|| bad("property missing name".into()))?;
                    element.properties.push(Property::Scalar { name: name.to_string(), ty });
                }
            }
            "end_header" => break,
            other => return Err(bad(format!("unknown header keyword {other:?}"))),
        }
    }
    let format = format
        .ok_or_else(|| Error::PlyParse { offset: r.pos as u64, message: "missing format line".into() })?;
    Ok(Header { format, elements })
}

struct Parsed {
    vertices: Vec<Point3>,
    faces: Vec<[u32; 3]>,
}

fn parse_body(r: &mut Reader, header: &Header) -> Result<Parsed> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        // Positions of x/y/z among the scalar properties.
        let mut xyz = [usize::MAX; 3];
        for (i, p) in element.properties.iter().enumerate() {
            if let Property::Scalar { name, .. } = p {
                match name.as_str() {
                    "x" => xyz[0] = i,
                    "y" => xyz[1] = i,
                    "z" => xyz[2] = i,
                    _ => {}
                }
            }
        }
        if is_vertex && xyz.contains(&usize::MAX) {
            return Err(Error::PlyParse {
                offset: r.pos as u64,
                message: "vertex element lacks x/y/z properties".into(),
            });
        }
        if is_vertex {
            vertices.reserve(element.count);
        }
        for _ in 0..element.count {
            let mut coords = [0.0f64; 3];
            for (pi, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = match header.format {
                            Format::Ascii => r.read_ascii_f64()?,
                            Format::BinaryLe => r.read_scalar(*ty)?,
                        };
                        if is_vertex {
                            if let Some(axis) = xyz.iter().position(|&j| j == pi) {
                                coords[axis] = v;
                            }
                        }
                    }
                    Property::List { name, count_ty, item_ty } => {
                        let count_pos = r.pos;
                        let count = match header.format {
                            Format::Ascii => r.read_ascii_f64()?,
                            Format::BinaryLe => r.read_scalar(*count_ty)?,
                        } as usize;
                        let wanted = is_face && (name == "vertex_indices" || name == "vertex_index");
                        if wanted && count < 3 {
                            return Err(Error::PlyParse {
                                offset: count_pos as u64,
                                message: format!("face with {count} vertices"),
                            });
                        }
                        let mut poly = Vec::with_capacity(if wanted { count } else { 0 });
                        for _ in 0..count {
                            let v = match header.format {
                                Format::Ascii => r.read_ascii_f64()?,
                                Format::BinaryLe => r.read_scalar(*item_ty)?,
                            };
                            if wanted {
                                poly.push(v as u32);
                            }
                        }
                        if wanted {
                            for i in 1..poly.len() - 1 {
                                faces.push([poly[0], poly[i], poly[i + 1]]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
        }
    }
    Ok(Parsed { vertices, faces })
}

/// Parse a PLY mesh (vertex positions plus triangulated faces).
pub fn read_mesh(bytes: &[u8]) -> Result<TriangleMesh> {
    let mut r = Reader { data: bytes, pos: 0 };
    let header = parse_header(&mut r)?;
    let parsed = parse_body(&mut r, &header)?;
    TriangleMesh::new(parsed.vertices, parsed.faces)
}

/// Parse a PLY point cloud (vertex positions; faces ignored).
pub fn read_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader { data: bytes, pos: 0 };
    let header = parse_header(&mut r)?;
    let parsed = parse_body(&mut r, &header)?;
    Ok(PointCloud::new(parsed.vertices))
}

/// Serialize a mesh as binary little-endian PLY with float64 coordinates.
pub fn write_mesh(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            mesh.vertices().len(),
            mesh.triangles().len()
        )
        .as_bytes(),
    );
    for v in mesh.vertices() {
        out.extend_from_slice(&v.x.to_le_bytes());
        out.extend_from_slice(&v.y.to_le_bytes());
        out.extend_from_slice(&v.z.to_le_bytes());
    }
    for t in mesh.triangles() {
        out.push(3u8);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

/// Serialize a point cloud as binary little-endian vertex-only PLY.
pub fn write_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
            cloud.len()
        )
        .as_bytes(),
    );
    for v in &cloud.points {
        out.extend_from_slice(&v.x.to_le_bytes());
        out.extend_from_slice(&v.y.to_le_bytes());
        out.extend_from_slice(&v.z.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::box_mesh;
    use nalgebra::Vector3;

    #[test]
    fn mesh_round_trip_binary() {
        let mesh = box_mesh(Point3::new(1.0, -2.0, 0.5), Vector3::new(2.0, 3.0, 1.0));
        let bytes = write_mesh(&mesh);
        let back = read_mesh(&bytes).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn ascii_mesh_with_extra_properties() {
        let src = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255\n1 0 0 128\n0 1 0 0\n3 0 1 2\n";
        let mesh = read_mesh(src.as_bytes()).unwrap();
        assert_eq!(mesh.vertices().len(), 3);
        assert_eq!(mesh.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn quad_faces_are_triangulated() {
        let src = "ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let mesh = read_mesh(src.as_bytes()).unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn truncated_binary_names_offset() {
        let mesh = box_mesh(Point3::ORIGIN, Vector3::new(1.0, 1.0, 1.0));
        let mut bytes = write_mesh(&mesh);
        bytes.truncate(bytes.len() - 7);
        match read_mesh(&bytes) {
            Err(Error::PlyParse { offset, .. }) => {
                assert!(offset > 0, "offset should be reported");
            }
            other => panic!("expected PlyParse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(
            read_mesh(b"off\n"),
            Err(Error::PlyParse { offset: 0, .. })
        ));
    }

    #[test]
    fn cloud_round_trip() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.25, -1.5, 3.75),
            Point3::new(1e-12, 2.0, -0.125),
        ]);
        let back = read_cloud(&write_cloud(&cloud)).unwrap();
        assert_eq!(back, cloud);
    }
}
