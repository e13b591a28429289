//! On-disk network format.
//!
//! A model directory holds two files:
//!
//! - `manifest.json`: format tag, the network topologies and free-form
//!   metadata (scaling constants, training config).
//! - `params.bin`: every parameter as little-endian `f64`, layer after layer.
//!   Each layer block is its weight matrix in row-major order
//!   (`out_dim x in_dim`) followed by its `out_dim` biases. The manifest
//!   records each block's starting element `offset`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, Network};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT_TAG: &str = "ebscreen-dense";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerEntry {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    input_dims: Vec<usize>,
    branches: Vec<Vec<LayerEntry>>,
    trunk: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    params_file: String,
    networks: Vec<NetworkEntry>,
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub network: Network,
}

fn push_layer(layer: &DenseLayer, params: &mut Vec<f64>) -> LayerEntry {
    let offset = params.len();
    params.extend(layer.weights.iter());
    params.extend(layer.biases.iter());
    LayerEntry {
        in_dim: layer.in_dim(),
        out_dim: layer.out_dim(),
        activation: layer.activation,
        offset,
    }
}

pub fn write_networks(
    dir: &Path,
    networks: &[(&str, &Network)],
    metadata: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::new();
    let entries = networks
        .iter()
        .map(|(name, net)| NetworkEntry {
            name: name.to_string(),
            input_dims: net.input_dims().to_vec(),
            branches: net
                .branches()
                .iter()
                .map(|b| b.iter().map(|l| push_layer(l, &mut params)).collect())
                .collect(),
            trunk: net
                .trunk()
                .iter()
                .map(|l| push_layer(l, &mut params))
                .collect(),
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        dtype: "f64-le".into(),
        params_file: PARAMS_FILE.into(),
        networks: entries,
        metadata,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    Ok(())
}

fn read_layer(entry: &LayerEntry, params: &[f64]) -> Result<DenseLayer> {
    let n_w = entry.in_dim * entry.out_dim;
    let end = entry.offset + n_w + entry.out_dim;
    if end > params.len() {
        return Err(Error::Format(format!(
            "layer at offset {} needs {} values, file has {}",
            entry.offset,
            n_w + entry.out_dim,
            params.len()
        )));
    }
    let w = &params[entry.offset..entry.offset + n_w];
    let b = &params[entry.offset + n_w..end];
    Ok(DenseLayer {
        weights: Array2::from_shape_vec((entry.out_dim, entry.in_dim), w.to_vec())
            .map_err(|e| Error::Format(e.to_string()))?,
        biases: Array1::from(b.to_vec()),
        activation: entry.activation,
    })
}

/// Inverse of [`write_networks`]. Returns the networks in file order and the
/// metadata value.
pub fn read_networks(dir: &Path) -> Result<(Vec<NamedNetwork>, serde_json::Value)> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if manifest.format != FORMAT_TAG || manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.dtype != "f64-le" {
        return Err(Error::Format(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    let bytes = fs::read(dir.join(&manifest.params_file))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(
            "parameter file length is not a multiple of 8".into(),
        ));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let networks = manifest
        .networks
        .iter()
        .map(|entry| {
            let branches = entry
                .branches
                .iter()
                .map(|b| b.iter().map(|l| read_layer(l, &params)).collect())
                .collect::<Result<Vec<Vec<_>>>>()?;
            let trunk = entry
                .trunk
                .iter()
                .map(|l| read_layer(l, &params))
                .collect::<Result<Vec<_>>>()?;
            Ok(NamedNetwork {
                name: entry.name.clone(),
                network: Network::new(entry.input_dims.clone(), branches, trunk)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((networks, manifest.metadata))
}
