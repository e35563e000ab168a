//! Byte layouts for rankings and masks. See `docs/wire-format.md`.
//!
//! Ranking: `u32 BE layer count`, then per layer `u32 BE d` followed by the
//! `d` edge indices, each `index_width(d)` bits wide, packed MSB-first and
//! zero-padded to a byte boundary.
//!
//! Mask: `u32 BE layer count`, then per layer `u32 BE d` followed by
//! `ceil(d / 8)` bytes of packed bits, MSB-first, zero-padded.

use crate::error::{Error, Result};
use crate::ranking::{index_width, mask_size, BinaryMask, Ranking};

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        Self { out, acc: 0, nbits: 0 }
    }

    fn push(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.nbits += 1;
            if self.nbits == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.nbits = 0;
            }
        }
    }

    fn pad(&mut self) {
        if self.nbits > 0 {
            self.out.push((self.acc << (8 - self.nbits)) as u8);
            self.acc = 0;
            self.nbits = 0;
        }
    }

    fn into_inner(mut self) -> Vec<u8> {
        self.pad();
        self.out
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Decode(format!("truncated input at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Decode(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_bits(bytes: &[u8], bit_offset: usize, width: u32) -> u64 {
    let mut v = 0u64;
    for k in 0..width as usize {
        let bit = bit_offset + k;
        let b = (bytes[bit / 8] >> (7 - bit % 8)) & 1;
        v = (v << 1) | b as u64;
    }
    v
}

pub fn encode_ranking(ranking: &Ranking) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(ranking.num_layers() as u32).to_be_bytes());
    for layer in ranking.layers() {
        let d = layer.len();
        out.extend_from_slice(&(d as u32).to_be_bytes());
        let width = index_width(d);
        let mut w = BitWriter::new(out);
        for &e in layer {
            w.push(e as u64, width);
        }
        out = w.into_inner();
    }
    out
}

pub fn decode_ranking(bytes: &[u8]) -> Result<Ranking> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let d = r.u32()? as usize;
        let width = index_width(d);
        let nbytes = (d * width as usize).div_ceil(8);
        let body = r.take(nbytes)?;
        layers.push(
            (0..d)
                .map(|i| read_bits(body, i * width as usize, width) as u32)
                .collect(),
        );
    }
    r.finish()?;
    Ranking::new(layers)
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(mask.layers().len() as u32).to_be_bytes());
    for layer in mask.layers() {
        out.extend_from_slice(&(layer.len() as u32).to_be_bytes());
        let mut w = BitWriter::new(out);
        for &b in layer {
            w.push(b as u64, 1);
        }
        out = w.into_inner();
    }
    out
}

/// Decodes a mask; when `k_percent` is given, every layer's popcount is checked against it.
pub fn decode_mask(bytes: &[u8], k_percent: Option<f64>) -> Result<BinaryMask> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for l in 0..n_layers {
        let d = r.u32()? as usize;
        let body = r.take(d.div_ceil(8))?;
        let bits: Vec<bool> = (0..d).map(|i| read_bits(body, i, 1) == 1).collect();
        if let Some(k) = k_percent {
            let pop = bits.iter().filter(|&&b| b).count();
            if pop != mask_size(d, k) {
                return Err(Error::Decode(format!(
                    "layer {l}: popcount {pop} does not match k={k}%"
                )));
            }
        }
        layers.push(bits);
    }
    r.finish()?;
    Ok(BinaryMask::from_bits(layers))
}
