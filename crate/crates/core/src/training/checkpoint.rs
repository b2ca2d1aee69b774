//! Versioned binary checkpoints: magic bytes, a JSON header carrying
//! the config and block shapes, then raw little-endian f64 data per
//! block in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamRegistry;
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"PMF1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    blocks: Vec<BlockMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockMeta {
    name: String,
    shape: Vec<usize>,
}

/// Writes a checkpoint for a model of the given kind.
pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &serde_json::Value,
    params: &ParamRegistry,
) -> Result<()> {
    let header = Header {
        version: 1,
        kind: kind.to_string(),
        config: config.clone(),
        blocks: (0..params.len())
            .map(|i| BlockMeta {
                name: params.name(i).to_string(),
                shape: params.tensor(i).shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for i in 0..params.len() {
        for &v in params.tensor(i).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back: model kind, config JSON, and parameters.
pub fn load_checkpoint(path: &Path) -> Result<(String, serde_json::Value, ParamRegistry)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic bytes {magic:?}, not a checkpoint file"
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let mut params = ParamRegistry::new();
    for block in &header.blocks {
        let n: usize = block.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor = Tensor::new(block.shape.clone(), data)
            .map_err(|e| Error::Checkpoint(format!("block '{}': {e}", block.name)))?;
        params.register(block.name.clone(), tensor);
    }
    Ok((header.kind, header.config, params))
}
