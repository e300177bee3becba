//! Binary readers/writers for the ".smesh" and ".sfeat" formats.
//! Both are little-endian with a 4-byte magic and a u32 version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};

use super::{FeatureField, SphereMesh};

const MESH_MAGIC: [u8; 4] = *b"SMSH";
const FEAT_MAGIC: [u8; 4] = *b"SFTR";
const VERSION: u32 = 1;

pub fn write_mesh(mesh: &SphereMesh, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(&MESH_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(mesh.vertices.len() as u32)
        .map_err(io_err)?;
    w.write_u32::<LittleEndian>(mesh.triangles.len() as u32)
        .map_err(io_err)?;
    for v in &mesh.vertices {
        for &c in v {
            w.write_f32::<LittleEndian>(c as f32).map_err(io_err)?;
        }
    }
    for t in &mesh.triangles {
        for &ix in t {
            w.write_u32::<LittleEndian>(ix as u32).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_mesh(path: &Path) -> Result<SphereMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |_| Error::Format(format!("{}: truncated mesh file", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != MESH_MAGIC {
        return Err(Error::Format(format!("{}: bad mesh magic", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported mesh version {version}",
            path.display()
        )));
    }
    let n_vertices = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let n_triangles = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let x = r.read_f32::<LittleEndian>().map_err(io_err)? as f64;
        let y = r.read_f32::<LittleEndian>().map_err(io_err)? as f64;
        let z = r.read_f32::<LittleEndian>().map_err(io_err)? as f64;
        vertices.push([x, y, z]);
    }
    let mut triangles = Vec::with_capacity(n_triangles);
    for _ in 0..n_triangles {
        let a = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let b = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let c = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        triangles.push([a, b, c]);
    }
    Ok(SphereMesh {
        vertices,
        triangles,
    })
}

pub fn write_feature_field(field: &FeatureField, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(&FEAT_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(field.n_vertices() as u32)
        .map_err(io_err)?;
    w.write_u32::<LittleEndian>(field.n_channels() as u32)
        .map_err(io_err)?;
    for name in &field.channel_names {
        let bytes = name.as_bytes();
        w.write_u16::<LittleEndian>(bytes.len() as u16).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
    }
    for c in 0..field.n_channels() {
        for v in 0..field.n_vertices() {
            w.write_f32::<LittleEndian>(field.values[[c, v]] as f32)
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_feature_field(path: &Path) -> Result<FeatureField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |_| Error::Format(format!("{}: truncated feature file", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != FEAT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad feature magic",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported feature version {version}",
            path.display()
        )));
    }
    let n_vertices = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let n_channels = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut channel_names = Vec::with_capacity(n_channels);
    for _ in 0..n_channels {
        let len = r.read_u16::<LittleEndian>().map_err(io_err)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(io_err)?;
        let name = String::from_utf8(buf).map_err(|_| {
            Error::Format(format!("{}: channel name is not UTF-8", path.display()))
        })?;
        channel_names.push(name);
    }
    let mut values = Array2::zeros((n_channels, n_vertices));
    for c in 0..n_channels {
        for v in 0..n_vertices {
            values[[c, v]] = r.read_f32::<LittleEndian>().map_err(io_err)? as f64;
        }
    }
    FeatureField::new(channel_names, values)
}
