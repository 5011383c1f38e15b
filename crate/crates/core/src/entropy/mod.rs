//! Static arithmetic coding of latent symbols with one frequency table per
//! channel, plus the architectural bitrate bound.

mod arith;
mod bits;

pub use arith::{ac_decode, ac_encode, ArithmeticDecoder, ArithmeticEncoder};
pub use bits::{BitReader, BitWriter};

use crate::error::{Error, Result};
use crate::quantizer::CodeGrid;

/// Largest table total the coder accepts (16-bit frequency precision).
pub const MAX_TOTAL: u32 = 1 << 16;

/// Symbol counts with their cumulative sums.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u32>,
    cumulative: Vec<u32>,
}

impl FrequencyTable {
    /// Builds a table from raw counts, rescaling when the total exceeds
    /// [`MAX_TOTAL`]. Nonzero counts stay nonzero; zero-count symbols are
    /// simply not codable.
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        if counts.is_empty() || counts.len() > 256 {
            return Err(Error::usage(format!(
                "table needs 1..=256 symbols, got {}",
                counts.len()
            )));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total == 0 {
            return Err(Error::usage("frequency table with zero total"));
        }
        let counts: Vec<u32> = if total > MAX_TOTAL as u64 {
            let budget = (MAX_TOTAL as u64) - counts.len() as u64;
            counts
                .iter()
                .map(|&c| match c {
                    0 => 0,
                    c => ((c as u64 * budget / total) as u32).max(1),
                })
                .collect()
        } else {
            counts.to_vec()
        };
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        cumulative.push(0);
        for &c in &counts {
            cumulative.push(cumulative.last().unwrap() + c);
        }
        Ok(Self { counts, cumulative })
    }

    pub fn uniform(levels: usize) -> Self {
        Self::from_counts(&vec![1; levels]).expect("valid uniform table")
    }

    /// Laplace-smoothed counts (`1 + occurrences`) of `symbols` over `levels`.
    pub fn smoothed(symbols: &[u8], levels: usize) -> Self {
        let mut counts = vec![1u32; levels];
        for &s in symbols {
            counts[s as usize] += 1;
        }
        Self::from_counts(&counts).expect("smoothed counts are valid")
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        *self.cumulative.last().unwrap()
    }

    /// `[low, high)` cumulative bounds of a codable symbol.
    pub fn interval(&self, symbol: usize) -> Option<(u32, u32)> {
        let c = *self.counts.get(symbol)?;
        (c > 0).then(|| (self.cumulative[symbol], self.cumulative[symbol + 1]))
    }

    /// Symbol whose interval contains `target`.
    pub fn lookup(&self, target: u32) -> Option<usize> {
        if target >= self.total() {
            return None;
        }
        // first cumulative entry strictly above target, minus one
        Some(self.cumulative.partition_point(|&c| c <= target) - 1)
    }

    /// Ideal code length in bits of `symbols` under this table.
    pub fn cross_entropy_bits(&self, symbols: &[u8]) -> f64 {
        let total = self.total() as f64;
        symbols
            .iter()
            .map(|&s| -(self.counts[s as usize] as f64 / total).log2())
            .sum()
    }
}

/// One smoothed table per channel of `code`.
pub fn build_frequency_tables(code: &CodeGrid) -> Vec<FrequencyTable> {
    let levels = code.centers().levels();
    (0..code.channels())
        .map(|c| FrequencyTable::smoothed(code.channel(c), levels))
        .collect()
}

/// Per-pixel bitrate bound `C * log2(L) / s^2` of an `s`-times downsampled
/// latent with `C` channels over `L` levels.
pub fn bpp_upper_bound(channels: usize, levels: usize, downsample: usize) -> f64 {
    channels as f64 * (levels as f64).log2() / (downsample * downsample) as f64
}

/// Encodes each stream with its own table, concatenated into one buffer.
pub fn encode_streams(streams: &[&[u8]], tables: &[FrequencyTable]) -> Result<Vec<u8>> {
    if streams.len() != tables.len() {
        return Err(Error::usage("one table per stream required"));
    }
    let mut w = BitWriter::new();
    for (s, t) in streams.iter().zip(tables) {
        ac_encode(s, t, &mut w)?;
    }
    Ok(w.into_bytes())
}

/// Inverse of [`encode_streams`] given each stream's symbol count. The
/// buffer must end within the final byte of the last stream.
pub fn decode_streams(
    bytes: &[u8],
    counts: &[usize],
    tables: &[FrequencyTable],
) -> Result<Vec<Vec<u8>>> {
    if counts.len() != tables.len() {
        return Err(Error::usage("one table per stream required"));
    }
    let mut r = BitReader::new(bytes);
    let out = counts
        .iter()
        .zip(tables)
        .map(|(&n, t)| ac_decode(&mut r, n, t))
        .collect::<Result<Vec<_>>>()?;
    if r.position().div_ceil(8) != bytes.len() {
        return Err(Error::corruption(format!(
            "payload has {} bytes, streams end at bit {}",
            bytes.len(),
            r.position()
        )));
    }
    Ok(out)
}
