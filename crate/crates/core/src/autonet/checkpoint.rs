//! ".mlpc" checkpoint format: magic "MLPC", u32 version, u32 header length,
//! a UTF-8 JSON header (config, channel names, standardization stats, and
//! an ordered array manifest with shapes), then the concatenated f64
//! little-endian arrays in manifest order. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataio::StandardizationStats;
use crate::error::{Error, Result};

use super::model::{BlockParams, HeadParams, MlpModel, ModelConfig};

const MAGIC: [u8; 4] = *b"MLPC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    channel_names: Vec<String>,
    standardization: Option<StandardizationStats>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub channel_names: Vec<String>,
    pub stats: Option<StandardizationStats>,
}

fn array_manifest(model: &MlpModel) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (i, b) in model.blocks.iter().enumerate() {
        let d = b.weight.dim();
        out.push((
            format!("block{i}.weight"),
            vec![d.0, d.1],
            b.weight.iter().copied().collect(),
        ));
        out.push((format!("block{i}.bias"), vec![b.bias.len()], b.bias.to_vec()));
        out.push((format!("block{i}.gamma"), vec![b.gamma.len()], b.gamma.to_vec()));
        out.push((format!("block{i}.beta"), vec![b.beta.len()], b.beta.to_vec()));
        out.push((
            format!("block{i}.running_mean"),
            vec![b.running_mean.len()],
            b.running_mean.to_vec(),
        ));
        out.push((
            format!("block{i}.running_var"),
            vec![b.running_var.len()],
            b.running_var.to_vec(),
        ));
    }
    let h = &model.head;
    let d1 = h.weight1.dim();
    let d2 = h.weight2.dim();
    out.push((
        "head.weight1".into(),
        vec![d1.0, d1.1],
        h.weight1.iter().copied().collect(),
    ));
    out.push(("head.bias1".into(), vec![h.bias1.len()], h.bias1.to_vec()));
    out.push((
        "head.weight2".into(),
        vec![d2.0, d2.1],
        h.weight2.iter().copied().collect(),
    ));
    out.push(("head.bias2".into(), vec![h.bias2.len()], h.bias2.to_vec()));
    out
}

pub fn save_checkpoint_bytes(
    model: &MlpModel,
    channel_names: &[String],
    stats: Option<&StandardizationStats>,
) -> Result<Vec<u8>> {
    let manifest = array_manifest(model);
    let header = Header {
        config: model.config.clone(),
        channel_names: channel_names.to_vec(),
        standardization: stats.cloned(),
        arrays: manifest
            .iter()
            .map(|(name, shape, _)| ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(header_json.len() as u32).unwrap();
    out.extend_from_slice(&header_json);
    for (_, _, data) in &manifest {
        for &x in data {
            out.write_f64::<LittleEndian>(x).unwrap();
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    model: &MlpModel,
    channel_names: &[String],
    stats: Option<&StandardizationStats>,
    path: &Path,
) -> Result<()> {
    let bytes = save_checkpoint_bytes(model, channel_names, stats)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = bytes;
    let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
    if magic != MAGIC {
        return Err(fmt("bad magic"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fmt("truncated version"))?;
    if version != VERSION {
        return Err(fmt(&format!("unsupported version {version}")));
    }
    let header_len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fmt("truncated header length"))? as usize;
    if r.len() < header_len {
        return Err(fmt("truncated header"));
    }
    let (header_bytes, mut rest) = r.split_at(header_len);
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| fmt(&format!("bad header JSON: {e}")))?;

    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let len: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(
                rest.read_f64::<LittleEndian>()
                    .map_err(|_| fmt(&format!("truncated array {}", entry.name)))?,
            );
        }
        arrays.push((entry.name.clone(), entry.shape.clone(), data));
    }

    let model = assemble_model(&header.config, &arrays)?;
    Ok(Checkpoint {
        model,
        channel_names: header.channel_names,
        stats: header.standardization,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(&bytes)
}

fn take<'a>(
    arrays: &'a [(String, Vec<usize>, Vec<f64>)],
    name: &str,
) -> Result<&'a (String, Vec<usize>, Vec<f64>)> {
    arrays
        .iter()
        .find(|(n, _, _)| n == name)
        .ok_or_else(|| Error::Format(format!("checkpoint: missing array {name}")))
}

fn to_array2(entry: &(String, Vec<usize>, Vec<f64>)) -> Result<Array2<f64>> {
    if entry.1.len() != 2 {
        return Err(Error::Format(format!("checkpoint: {} is not 2-d", entry.0)));
    }
    Array2::from_shape_vec((entry.1[0], entry.1[1]), entry.2.clone())
        .map_err(|e| Error::Format(format!("checkpoint: {}: {e}", entry.0)))
}

fn to_array1(entry: &(String, Vec<usize>, Vec<f64>)) -> Array1<f64> {
    Array1::from_vec(entry.2.clone())
}

fn assemble_model(
    config: &ModelConfig,
    arrays: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<MlpModel> {
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for i in 0..config.n_blocks {
        let running_var = to_array1(take(arrays, &format!("block{i}.running_var"))?);
        if running_var.iter().any(|&v| v <= 0.0) {
            return Err(Error::Format(format!(
                "checkpoint: block{i}.running_var must be positive"
            )));
        }
        blocks.push(BlockParams {
            weight: to_array2(take(arrays, &format!("block{i}.weight"))?)?,
            bias: to_array1(take(arrays, &format!("block{i}.bias"))?),
            gamma: to_array1(take(arrays, &format!("block{i}.gamma"))?),
            beta: to_array1(take(arrays, &format!("block{i}.beta"))?),
            running_mean: to_array1(take(arrays, &format!("block{i}.running_mean"))?),
            running_var,
        });
    }
    let head = HeadParams {
        weight1: to_array2(take(arrays, "head.weight1")?)?,
        bias1: to_array1(take(arrays, "head.bias1")?),
        weight2: to_array2(take(arrays, "head.weight2")?)?,
        bias2: to_array1(take(arrays, "head.bias2")?),
    };
    Ok(MlpModel {
        config: config.clone(),
        blocks,
        head,
    })
}
