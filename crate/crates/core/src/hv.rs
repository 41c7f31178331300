//! Dense multi-bit hypervectors, quantization primitives and seeded randomness.
//!
//! Every generated vector in the crate is drawn from ChaCha8 (`rand_chacha`)
//! seeded through [`RngSeed`]. Components of a random P-bit hypervector are
//! the low `P` bits of successive `next_u32()` outputs, so the sequence only
//! depends on the seed and the ChaCha8 keystream.
//!
//! # Binary container
//!
//! A single hypervector serializes as:
//!
//! | bytes | content                                      |
//! |-------|----------------------------------------------|
//! | 0..4  | magic `b"MIMH"`                              |
//! | 4     | format version (currently `1`)               |
//! | 5     | precision `P` in bits                        |
//! | 6..10 | dimension `D`, little-endian `u32`           |
//! | 10..  | `ceil(D * P / 8)` bytes of packed components |
//!
//! Component `i` occupies bits `i*P .. i*P + P` of the payload, where bit `b`
//! lives in byte `b / 8` at position `b % 8` (least significant first).
//! Unused trailing bits of the last byte are zero.

use std::fmt;
use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HdcError, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"MIMH";
pub const CONTAINER_VERSION: u8 = 1;
const HEADER_LEN: usize = 10;

/// Bits per hypervector component. Only 1, 2 and 3 bits are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Precision(u8);

impl Precision {
    pub const ONE: Precision = Precision(1);
    pub const TWO: Precision = Precision(2);
    pub const THREE: Precision = Precision(3);

    pub fn new(bits: u8) -> Result<Self> {
        match bits {
            1..=3 => Ok(Precision(bits)),
            other => Err(HdcError::InvalidPrecision(other)),
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Largest representable code, `2^P - 1`.
    pub fn max_code(self) -> u8 {
        (1u8 << self.0) - 1
    }

    pub fn mask(self) -> u32 {
        u32::from(self.max_code())
    }
}

impl TryFrom<u8> for Precision {
    type Error = HdcError;
    fn try_from(bits: u8) -> Result<Self> {
        Precision::new(bits)
    }
}

impl From<Precision> for u8 {
    fn from(p: Precision) -> u8 {
        p.0
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Seed for every random draw in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent child seed for a named sub-stream (splitmix64 finalizer).
    pub fn derive(self, stream: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// A dense hypervector of `P`-bit unsigned components.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Hypervector {
    codes: Vec<u8>,
    precision: Precision,
}

impl Hypervector {
    pub fn new(codes: Vec<u8>, precision: Precision) -> Result<Self> {
        if codes.is_empty() {
            return Err(HdcError::InvalidDimension(0));
        }
        let max = precision.max_code();
        if let Some((index, &value)) = codes.iter().enumerate().find(|(_, &c)| c > max) {
            return Err(HdcError::ComponentOutOfRange { index, value, max });
        }
        Ok(Hypervector { codes, precision })
    }

    pub fn zeros(dim: usize, precision: Precision) -> Result<Self> {
        Hypervector::new(vec![0; dim], precision)
    }

    pub fn dim(&self) -> usize {
        self.codes.len()
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn into_codes(self) -> Vec<u8> {
        self.codes
    }

    /// Builds from codes already known to fit the precision.
    pub(crate) fn from_codes_unchecked(codes: Vec<u8>, precision: Precision) -> Self {
        debug_assert!(codes.iter().all(|&c| c <= precision.max_code()));
        Hypervector { codes, precision }
    }

    pub fn to_real(&self) -> RealHypervector {
        RealHypervector {
            values: self.codes.iter().map(|&c| f64::from(c)).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = u32::try_from(self.dim())
            .map_err(|_| HdcError::Format(format!("dimension {} exceeds u32", self.dim())))?;
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(CONTAINER_MAGIC);
        header[4] = CONTAINER_VERSION;
        header[5] = self.precision.bits();
        header[6..10].copy_from_slice(&dim.to_le_bytes());
        w.write_all(&header)?;
        w.write_all(&pack_codes(&self.codes, self.precision))?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[..4] != CONTAINER_MAGIC {
            return Err(HdcError::Format("bad magic, expected MIMH".into()));
        }
        if header[4] != CONTAINER_VERSION {
            return Err(HdcError::Format(format!("unsupported version {}", header[4])));
        }
        let precision = Precision::new(header[5])?;
        let dim = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
        if dim == 0 {
            return Err(HdcError::InvalidDimension(0));
        }
        let mut payload = vec![0u8; packed_len(dim, precision)];
        r.read_exact(&mut payload)?;
        Hypervector::new(unpack_codes(&payload, dim, precision), precision)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + packed_len(self.dim(), self.precision));
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let hv = Hypervector::read_from(bytes)?;
        let expected = HEADER_LEN + packed_len(hv.dim(), hv.precision);
        if bytes.len() != expected {
            return Err(HdcError::Format(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        Ok(hv)
    }
}

fn packed_len(dim: usize, precision: Precision) -> usize {
    (dim * precision.bits() as usize).div_ceil(8)
}

fn pack_codes(codes: &[u8], precision: Precision) -> Vec<u8> {
    let p = precision.bits() as usize;
    let mut out = vec![0u8; packed_len(codes.len(), precision)];
    for (i, &code) in codes.iter().enumerate() {
        for j in 0..p {
            if (code >> j) & 1 == 1 {
                let bit = i * p + j;
                out[bit / 8] |= 1 << (bit % 8);
            }
        }
    }
    out
}

fn unpack_codes(payload: &[u8], dim: usize, precision: Precision) -> Vec<u8> {
    let p = precision.bits() as usize;
    (0..dim)
        .map(|i| {
            (0..p).fold(0u8, |acc, j| {
                let bit = i * p + j;
                acc | (((payload[bit / 8] >> (bit % 8)) & 1) << j)
            })
        })
        .collect()
}

/// A dense real-valued hypervector (the non-quantized class copies).
#[derive(Debug, Clone, PartialEq)]
pub struct RealHypervector {
    values: Vec<f64>,
}

impl RealHypervector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(HdcError::InvalidDimension(0));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(HdcError::NonFinite { index });
        }
        Ok(RealHypervector { values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        RealHypervector::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `self += scale * hv`. The scale must be finite.
    pub fn add_scaled(&mut self, hv: &Hypervector, scale: f64) -> Result<()> {
        if hv.dim() != self.dim() {
            return Err(HdcError::ShapeMismatch {
                what: "real hypervector update",
                expected: self.dim(),
                got: hv.dim(),
            });
        }
        if !scale.is_finite() {
            return Err(HdcError::InvalidInput(format!("non-finite update scale {scale}")));
        }
        for (v, &c) in self.values.iter_mut().zip(hv.codes()) {
            *v += scale * f64::from(c);
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Maps one real value onto a `P`-bit code: affine `[lo, hi] -> [0, 2^P - 1]`,
/// round half up, clamp.
#[inline]
pub fn quantize_value(x: f64, precision: Precision, lo: f64, hi: f64) -> u8 {
    let max = f64::from(precision.max_code());
    let scaled = (x - lo) / (hi - lo) * max;
    (scaled + 0.5).floor().clamp(0.0, max) as u8
}

pub fn quantize_hv(v: &RealHypervector, precision: Precision, lo: f64, hi: f64) -> Result<Hypervector> {
    check_range(lo, hi)?;
    let codes = v
        .values
        .iter()
        .map(|&x| quantize_value(x, precision, lo, hi))
        .collect();
    Ok(Hypervector::from_codes_unchecked(codes, precision))
}

/// Inverse affine map of [`quantize_hv`]: code `c` becomes `lo + c / (2^P - 1) * (hi - lo)`.
pub fn dequantize_hv(hv: &Hypervector, lo: f64, hi: f64) -> Result<RealHypervector> {
    check_range(lo, hi)?;
    let max = f64::from(hv.precision.max_code());
    RealHypervector::new(
        hv.codes
            .iter()
            .map(|&c| lo + f64::from(c) / max * (hi - lo))
            .collect(),
    )
}

pub(crate) fn check_range(lo: f64, hi: f64) -> Result<()> {
    // The negated comparison also rejects NaN bounds.
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(HdcError::InvalidRange { lo, hi });
    }
    Ok(())
}

pub fn random_hv(dim: usize, precision: Precision, seed: RngSeed) -> Result<Hypervector> {
    if dim == 0 {
        return Err(HdcError::InvalidDimension(0));
    }
    let mut rng = seed.rng();
    Ok(random_hv_with(&mut rng, dim, precision))
}

pub(crate) fn random_hv_with<R: RngCore>(rng: &mut R, dim: usize, precision: Precision) -> Hypervector {
    let codes = (0..dim).map(|_| random_code(rng, precision)).collect();
    Hypervector::from_codes_unchecked(codes, precision)
}

#[inline]
pub(crate) fn random_code<R: RngCore>(rng: &mut R, precision: Precision) -> u8 {
    (rng.next_u32() & precision.mask()) as u8
}
