//! Parameter checkpoints.
//!
//! Layout: the line `ROGAT-PARAMS 1`, one line of JSON describing the
//! layers, then every matrix as row-major little-endian `f64` in
//! [`GatParams::tensors`] order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GatLayer, GatParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "ROGAT-PARAMS 1";

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    in_dim: usize,
    heads: usize,
    out_dim: usize,
    concat: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layers: Vec<LayerHeader>,
}

pub fn save_params<T: Scalar>(params: &GatParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        layers: params
            .layers
            .iter()
            .map(|l| LayerHeader {
                in_dim: l.in_dim(),
                heads: l.heads,
                out_dim: l.out_dim,
                concat: l.concat,
            })
            .collect(),
    };
    let mut buf = Vec::with_capacity(64 + 8 * params.n_values());
    writeln!(buf, "{MAGIC}").expect("writing to a Vec");
    serde_json::to_writer(&mut buf, &header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.push(b'\n');
    for t in params.tensors() {
        for &v in t.iter() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Scalar>(path: impl AsRef<Path>) -> Result<GatParams<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!("{} lacks the expected magic line", path.display())));
    }
    line.clear();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&line).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Array2<T>> {
        let mut bytes = vec![0u8; 8 * rows * cols];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("{} is truncated", path.display())))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), values).expect("length matches shape"))
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for l in &header.layers {
        layers.push(GatLayer {
            weight: read_matrix(l.in_dim, l.heads * l.out_dim)?,
            att_src: read_matrix(l.out_dim, l.heads)?,
            att_dst: read_matrix(l.out_dim, l.heads)?,
            heads: l.heads,
            out_dim: l.out_dim,
            concat: l.concat,
        });
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    if layers.is_empty() {
        return Err(Error::Checkpoint("no layers".into()));
    }
    Ok(GatParams { layers })
}
