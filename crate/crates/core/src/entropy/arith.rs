//! Bit-level arithmetic coder with 32-bit registers and carry-less
//! (pending-bit) renormalisation.
//!
//! A stream of `n > 0` symbols occupies exactly `shifts + 2` bits, where
//! `shifts` is the number of renormalisation steps. The decoder mirrors the
//! encoder's interval, so it knows where a stream ends and several streams
//! can be concatenated in one bit buffer. An empty stream emits nothing.

use super::bits::{BitReader, BitWriter};
use super::FrequencyTable;
use crate::error::{Error, Result};

const TOP: u64 = (1 << 32) - 1;
const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const THREE_QUARTERS: u64 = HALF + QUARTER;

pub struct ArithmeticEncoder<'a> {
    out: &'a mut BitWriter,
    low: u64,
    high: u64,
    pending: u64,
    start: usize,
    symbols: usize,
}

impl<'a> ArithmeticEncoder<'a> {
    pub fn new(out: &'a mut BitWriter) -> Self {
        let start = out.bit_len();
        Self {
            out,
            low: 0,
            high: TOP,
            pending: 0,
            start,
            symbols: 0,
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push_bit(bit);
        for _ in 0..self.pending {
            self.out.push_bit(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, symbol: usize, table: &FrequencyTable) -> Result<()> {
        let (lo, hi) = table
            .interval(symbol)
            .ok_or_else(|| Error::usage(format!("symbol {symbol} not codable with this table")))?;
        let total = table.total() as u64;
        let range = self.high - self.low + 1;
        self.high = self.low + range * hi as u64 / total - 1;
        self.low += range * lo as u64 / total;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
        self.symbols += 1;
        Ok(())
    }

    /// Flushes the final interval; returns the number of bits this stream used.
    pub fn finish(mut self) -> usize {
        if self.symbols > 0 {
            self.pending += 1;
            self.emit(self.low >= QUARTER);
        }
        self.out.bit_len() - self.start
    }
}

pub struct ArithmeticDecoder<'r, 'a> {
    input: &'r mut BitReader<'a>,
    low: u64,
    high: u64,
    value: u64,
    start: usize,
    shifts: usize,
    symbols: usize,
}

impl<'r, 'a> ArithmeticDecoder<'r, 'a> {
    pub fn new(input: &'r mut BitReader<'a>) -> Self {
        let start = input.position();
        let value = input.read_bits(32);
        Self {
            input,
            low: 0,
            high: TOP,
            value,
            start,
            shifts: 0,
            symbols: 0,
        }
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<usize> {
        let total = table.total() as u64;
        let range = self.high - self.low + 1;
        if self.value < self.low || self.value > self.high {
            return Err(Error::corruption("arithmetic decoder left its interval"));
        }
        let scaled = ((self.value - self.low + 1) * total - 1) / range;
        let symbol = table
            .lookup(scaled as u32)
            .ok_or_else(|| Error::corruption("arithmetic code points past the table"))?;
        let (lo, hi) = table.interval(symbol).expect("lookup returns codable symbols");
        self.high = self.low + range * hi as u64 / total - 1;
        self.low += range * lo as u64 / total;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.input.read_bit() as u64;
            self.shifts += 1;
        }
        self.symbols += 1;
        Ok(symbol)
    }

    /// Positions the reader right after this stream; errors if the stream
    /// extends past the available bits.
    pub fn finish(self) -> Result<usize> {
        let used = if self.symbols == 0 { 0 } else { self.shifts + 2 };
        let end = self.start + used;
        if end > self.input.bit_len() {
            return Err(Error::corruption(format!(
                "arithmetic stream truncated: needs {end} bits, have {}",
                self.input.bit_len()
            )));
        }
        self.input.seek(end);
        Ok(used)
    }
}

/// Encodes `symbols` as one terminated stream; returns the bits emitted.
pub fn ac_encode(symbols: &[u8], table: &FrequencyTable, out: &mut BitWriter) -> Result<usize> {
    let mut enc = ArithmeticEncoder::new(out);
    for &s in symbols {
        if s as usize >= table.levels() {
            return Err(Error::usage(format!(
                "symbol {s} out of range for L={}",
                table.levels()
            )));
        }
        enc.encode(s as usize, table)?;
    }
    Ok(enc.finish())
}

/// Decodes `n` symbols and leaves `input` positioned after the stream.
pub fn ac_decode(input: &mut BitReader, n: usize, table: &FrequencyTable) -> Result<Vec<u8>> {
    let mut dec = ArithmeticDecoder::new(input);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(dec.decode(table)? as u8);
    }
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn round_trip(symbols: &[u8], table: &FrequencyTable) -> (Vec<u8>, usize) {
        let mut w = BitWriter::new();
        let bits = ac_encode(symbols, table, &mut w).unwrap();
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        let back = ac_decode(&mut r, symbols.len(), table).unwrap();
        assert_eq!(r.position(), bits);
        (back, bits)
    }

    #[test]
    fn empty_and_single_symbol_streams() {
        let t = FrequencyTable::uniform(5);
        assert_eq!(round_trip(&[], &t).1, 0);
        for s in 0..5u8 {
            let (back, bits) = round_trip(&[s], &t);
            assert_eq!(back, vec![s]);
            assert!(bits <= 32);
        }
    }

    #[test]
    fn skewed_constant_stream_is_nearly_free() {
        let t = FrequencyTable::from_counts(&[10_001, 1, 1, 1, 1]).unwrap();
        let syms = vec![0u8; 10_000];
        let (back, bits) = round_trip(&syms, &t);
        assert_eq!(back, syms);
        assert!((bits as f64) / 10_000.0 < 0.02, "{bits}");
    }

    #[test]
    fn uniform_stream_rate_near_log2_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let syms: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
        let (back, bits) = round_trip(&syms, &FrequencyTable::uniform(5));
        assert_eq!(back, syms);
        let rate = bits as f64 / 10_000.0;
        assert!((rate / 5f64.log2() - 1.0).abs() < 0.01, "{rate}");
    }

    #[test]
    fn concatenated_streams_decode_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tables = [
            FrequencyTable::from_counts(&[5, 1, 9]).unwrap(),
            FrequencyTable::uniform(7),
            FrequencyTable::from_counts(&[1, 1]).unwrap(),
        ];
        let streams: Vec<Vec<u8>> = tables
            .iter()
            .map(|t| {
                let n = rng.random_range(0..50);
                (0..n).map(|_| rng.random_range(0..t.levels() as u8)).collect()
            })
            .collect();
        let mut w = BitWriter::new();
        for (s, t) in streams.iter().zip(&tables) {
            ac_encode(s, t, &mut w).unwrap();
        }
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        for (s, t) in streams.iter().zip(&tables) {
            assert_eq!(&ac_decode(&mut r, s.len(), t).unwrap(), s);
        }
    }

    #[test]
    fn truncated_stream_is_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let syms: Vec<u8> = (0..400).map(|_| rng.random_range(0..5)).collect();
        let t = FrequencyTable::uniform(5);
        let mut w = BitWriter::new();
        ac_encode(&syms, &t, &mut w).unwrap();
        let mut bytes = w.into_bytes();
        bytes.truncate(bytes.len() / 2);
        let mut r = BitReader::new(&bytes);
        assert!(matches!(ac_decode(&mut r, syms.len(), &t), Err(Error::Corruption(_))));
    }

    #[test]
    fn out_of_range_symbol_is_usage_error() {
        let mut w = BitWriter::new();
        let err = ac_encode(&[7], &FrequencyTable::uniform(5), &mut w);
        assert!(matches!(err, Err(Error::Usage(_))));
        let zero = FrequencyTable::from_counts(&[3, 0, 2]).unwrap();
        assert!(ac_encode(&[1], &zero, &mut BitWriter::new()).is_err());
    }
}
