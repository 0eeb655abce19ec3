//! Network files: a single JSON document holding the layer widths, the shared
//! basis, the init seed and every coefficient array in layer order.
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! correct rounding, so a save/load cycle reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::basis::BasisSpec;
use super::network::{KanLayer, KanNetwork};
use crate::error::{Error, Result};

pub const NETWORK_FORMAT: &str = "kanpnp-network";
pub const NETWORK_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    format: String,
    version: u32,
    dims: Vec<usize>,
    basis: BasisSpec,
    seed: u64,
    layers: Vec<LayerArrays>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerArrays {
    spline_coeffs: Vec<f64>,
    base_weights: Vec<f64>,
}

pub fn network_to_string(net: &KanNetwork) -> Result<String> {
    net.validate()?;
    let basis = net.layers[0].basis;
    if net.layers.iter().any(|l| l.basis != basis) {
        return Err(Error::config(
            "network files require one basis shared by all layers",
        ));
    }
    let file = NetworkFile {
        format: NETWORK_FORMAT.into(),
        version: NETWORK_VERSION,
        dims: net.dims(),
        basis,
        seed: net.seed,
        layers: net
            .layers
            .iter()
            .map(|l| LayerArrays {
                spline_coeffs: l.spline_coeffs.clone(),
                base_weights: l.base_weights.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn network_from_str(s: &str) -> Result<KanNetwork> {
    let file: NetworkFile = serde_json::from_str(s)?;
    if file.format != NETWORK_FORMAT {
        return Err(Error::UnsupportedFormat(format!(
            "expected {NETWORK_FORMAT}, found {}",
            file.format
        )));
    }
    if file.version != NETWORK_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "network file version {}",
            file.version
        )));
    }
    if file.dims.len() != file.layers.len() + 1 {
        return Err(Error::shape(
            format!("{} layers", file.dims.len().saturating_sub(1)),
            file.layers.len(),
        ));
    }
    let layers = file
        .dims
        .windows(2)
        .zip(file.layers)
        .map(|(w, arr)| KanLayer {
            in_dim: w[0],
            out_dim: w[1],
            basis: file.basis,
            spline_coeffs: arr.spline_coeffs,
            base_weights: arr.base_weights,
        })
        .collect();
    let net = KanNetwork {
        layers,
        seed: file.seed,
    };
    net.validate()?;
    Ok(net)
}

pub fn save_network(net: &KanNetwork, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, network_to_string(net)?)?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<KanNetwork> {
    network_from_str(&std::fs::read_to_string(path)?)
}
