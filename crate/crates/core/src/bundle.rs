//! Model bundle file: encoder state plus both copies of the class model.
//!
//! | field              | encoding                                              |
//! |--------------------|-------------------------------------------------------|
//! | magic              | `b"MIMB"`                                             |
//! | version            | `u8`, currently `1`                                   |
//! | header length      | little-endian `u32`                                   |
//! | header             | UTF-8 JSON: encoder config, quantizer, class labels   |
//! | level HVs          | `m` hypervector containers (`MIMH`, see [`crate::hv`]) |
//! | base HVs           | `n` hypervector containers                            |
//! | quantized classes  | `k` hypervector containers                            |
//! | real classes       | `k * D` little-endian `f64`, class-major              |

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{BaseMatrix, Encoder, EncoderConfig, FeatureQuantizer, LevelTable};
use crate::error::{HdcError, Result};
use crate::hv::{Hypervector, Precision, RealHypervector};
use crate::trainer::Model;

pub const BUNDLE_MAGIC: &[u8; 4] = b"MIMB";
pub const BUNDLE_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    quantizer: FeatureQuantizer,
    labels: Vec<u32>,
    model_precision: Precision,
    dim: usize,
}

pub fn write_bundle<W: Write>(mut w: W, encoder: &Encoder, model: &Model) -> Result<()> {
    if model.dim() != encoder.config().dim {
        return Err(HdcError::ShapeMismatch {
            what: "model vs encoder dimension",
            expected: encoder.config().dim,
            got: model.dim(),
        });
    }
    let header = serde_json::to_vec(&Header {
        encoder: encoder.config().clone(),
        quantizer: encoder.quantizer().clone(),
        labels: model.labels().to_vec(),
        model_precision: model.precision(),
        dim: model.dim(),
    })?;
    w.write_all(BUNDLE_MAGIC)?;
    w.write_all(&[BUNDLE_VERSION])?;
    let len = u32::try_from(header.len()).map_err(|_| HdcError::Format("header too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&header)?;
    for hv in encoder
        .level_table()
        .rows()
        .iter()
        .chain(encoder.base_matrix().rows())
        .chain(model.quant_classes())
    {
        hv.write_to(&mut w)?;
    }
    for class in model.real_classes() {
        for v in class.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_bundle<R: Read>(mut r: R) -> Result<(Encoder, Model)> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic[..4] != BUNDLE_MAGIC {
        return Err(HdcError::Format("bad magic, expected MIMB".into()));
    }
    if magic[4] != BUNDLE_VERSION {
        return Err(HdcError::Format(format!("unsupported bundle version {}", magic[4])));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;

    let read_n = |r: &mut R, n: usize| -> Result<Vec<Hypervector>> { (0..n).map(|_| Hypervector::read_from(&mut *r)).collect() };
    let levels = LevelTable::new(read_n(&mut r, header.encoder.levels)?)?;
    let bases = BaseMatrix::new(read_n(&mut r, header.encoder.features)?)?;
    let quant = read_n(&mut r, header.labels.len())?;
    let mut real = Vec::with_capacity(header.labels.len());
    let mut buf = [0u8; 8];
    for _ in 0..header.labels.len() {
        let mut values = Vec::with_capacity(header.dim);
        for _ in 0..header.dim {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        real.push(RealHypervector::new(values)?);
    }
    let encoder = Encoder::from_parts(header.encoder, header.quantizer, levels, bases)?;
    let model = Model::from_parts(header.labels, real, quant, header.model_precision)?;
    Ok((encoder, model))
}

pub fn save_bundle(path: &Path, encoder: &Encoder, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_bundle(&mut w, encoder, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<(Encoder, Model)> {
    read_bundle(BufReader::new(fs::File::open(path)?))
}
