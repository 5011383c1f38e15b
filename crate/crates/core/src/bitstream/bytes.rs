//! Little-endian field IO, LEB128 varints and the bucket/mantissa integer
//! code shared by the heatmap and label-map sections.

use crate::entropy::{ArithmeticDecoder, ArithmeticEncoder, FrequencyTable, MAX_TOTAL};
use crate::error::{Error, Result};

pub(crate) fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

/// Bounds-checked reader; running out of bytes is a corruption error.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::corruption(format!(
                    "truncated {what}: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn varint(&mut self, what: &str) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8(what)?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::corruption(format!("{what}: varint longer than 64 bits")))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Bit length of `v`; 0 for 0.
pub(crate) fn bucket(v: u64) -> usize {
    (64 - v.leading_zeros()) as usize
}

/// Integers are coded as their bit length (through a data-specific table)
/// followed by the bits below the leading one (through a flat binary table).
pub(crate) struct IntCoder {
    buckets: FrequencyTable,
    bit: FrequencyTable,
}

impl IntCoder {
    /// Table fitted to `values`, which must be non-empty.
    pub fn fit(values: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut counts = vec![0u32; 65];
        for v in values {
            let c = &mut counts[bucket(v)];
            *c = c.saturating_add(1);
        }
        let used = counts.iter().rposition(|&c| c > 0).map_or(0, |i| i + 1);
        Ok(Self::with_table(FrequencyTable::from_counts(&counts[..used])?))
    }

    fn with_table(buckets: FrequencyTable) -> Self {
        Self {
            buckets,
            bit: FrequencyTable::uniform(2),
        }
    }

    /// Sparse table: entry count, then `(bucket u8, count varint)` pairs.
    pub fn write_table(&self, out: &mut Vec<u8>) {
        let counts = self.buckets.counts();
        put_varint(out, counts.iter().filter(|&&c| c > 0).count() as u64);
        for (b, &c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            out.push(b as u8);
            put_varint(out, c as u64);
        }
    }

    pub fn read_table(r: &mut ByteReader) -> Result<Self> {
        let entries = r.varint("bucket table size")?;
        if entries == 0 || entries > 65 {
            return Err(Error::corruption(format!("bucket table with {entries} entries")));
        }
        let mut counts = vec![0u32; 65];
        let mut prev: Option<u8> = None;
        let mut total = 0u64;
        for _ in 0..entries {
            let b = r.u8("bucket id")?;
            if b > 64 || prev.is_some_and(|p| b <= p) {
                return Err(Error::corruption(format!("bad bucket id {b}")));
            }
            let c = r.varint("bucket count")?;
            total += c;
            if c == 0 || total > MAX_TOTAL as u64 {
                return Err(Error::corruption("bucket counts exceed coder precision"));
            }
            counts[b as usize] = c as u32;
            prev = Some(b);
        }
        let used = prev.unwrap() as usize + 1;
        Ok(Self::with_table(FrequencyTable::from_counts(&counts[..used])?))
    }

    pub fn encode(&self, enc: &mut ArithmeticEncoder, v: u64) -> Result<()> {
        let b = bucket(v);
        enc.encode(b, &self.buckets)?;
        for i in (0..b.saturating_sub(1)).rev() {
            enc.encode(((v >> i) & 1) as usize, &self.bit)?;
        }
        Ok(())
    }

    pub fn decode(&self, dec: &mut ArithmeticDecoder) -> Result<u64> {
        let b = dec.decode(&self.buckets)?;
        if b == 0 {
            return Ok(0);
        }
        let mut v = 1u64;
        for _ in 1..b {
            v = (v << 1) | dec.decode(&self.bit)? as u64;
        }
        Ok(v)
    }
}

pub(crate) fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub(crate) fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}
