//! Mesh and point-cloud file formats: PLY (ASCII and binary little-endian)
//! and OBJ (`v`/`f` records).

pub mod obj;
pub mod ply;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Load a mesh from raw bytes, sniffing the format: PLY magic, otherwise OBJ.
pub fn load_mesh_bytes(bytes: &[u8]) -> Result<TriangleMesh> {
    if bytes.starts_with(b"ply") {
        ply::read_mesh(bytes)
    } else if looks_like_obj(bytes) {
        obj::read_mesh(bytes)
    } else {
        Err(Error::Validation("unrecognized mesh format (expected PLY or OBJ)".into()))
    }
}

fn looks_like_obj(bytes: &[u8]) -> bool {
    let text = match std::str::from_utf8(&bytes[..bytes.len().min(4096)]) {
        Ok(t) => t,
        Err(_) => return false,
    };
    text.lines().any(|l| {
        let l = l.trim_start();
        l.starts_with("v ") || l.starts_with("f ") || l.starts_with('#')
    })
}

/// Load a mesh from a file path.
pub fn load_mesh(path: &std::path::Path) -> Result<TriangleMesh> {
    let bytes = std::fs::read(path)?;
    load_mesh_bytes(&bytes)
}
