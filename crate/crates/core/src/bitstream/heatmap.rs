use super::bytes::{put_varint, ByteReader, IntCoder};
use crate::entropy::{ArithmeticDecoder, ArithmeticEncoder, BitReader, BitWriter};
use crate::error::{Error, Result};

/// Binary preservation mask at code resolution; 1 keeps a latent position,
/// 0 zeroes it and leaves the region to the generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::usage(format!(
                "{} cells for a {height}x{width} heatmap",
                cells.len()
            )));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            cells: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.cells[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.cells.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.cells.len() as f64
        }
    }

    fn runs(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut iter = self.cells.iter().peekable();
        while let Some(&v) = iter.next() {
            let mut n = 1;
            while iter.next_if(|&&c| c == v).is_some() {
                n += 1;
            }
            runs.push(n);
        }
        runs
    }
}

const RAW: u8 = 0;
const RUNS: u8 = 1;

/// Raster-order run lengths, arithmetic coded with one length table per
/// run value. Falls back to a packed bitmap when that is smaller, which
/// only happens for very fragmented masks.
pub fn encode_heatmap(m: &Heatmap) -> Result<Vec<u8>> {
    let rle = encode_runs(m)?;
    let raw_len = 1 + m.cells.len().div_ceil(8);
    if rle.len() <= raw_len {
        return Ok(rle);
    }
    let mut w = BitWriter::new();
    for &c in &m.cells {
        w.push_bit(c);
    }
    let mut out = vec![RAW];
    out.extend(w.into_bytes());
    Ok(out)
}

fn encode_runs(m: &Heatmap) -> Result<Vec<u8>> {
    let first = m.cells.first().copied().unwrap_or(false);
    let runs = m.runs();
    let mut out = vec![RUNS, first as u8];
    put_varint(&mut out, runs.len() as u64);
    if runs.len() < 2 {
        return Ok(out);
    }
    // runs alternate value, so even indices carry `first`
    let coders = [
        IntCoder::fit(runs.iter().step_by(2).copied())?,
        IntCoder::fit(runs.iter().skip(1).step_by(2).copied())?,
    ];
    for c in &coders {
        c.write_table(&mut out);
    }
    let mut w = BitWriter::new();
    let mut enc = ArithmeticEncoder::new(&mut w);
    for (i, &r) in runs.iter().enumerate() {
        coders[i % 2].encode(&mut enc, r)?;
    }
    enc.finish();
    out.extend(w.into_bytes());
    Ok(out)
}

pub fn decode_heatmap(bytes: &[u8], height: usize, width: usize) -> Result<Heatmap> {
    let n = height * width;
    let mut r = ByteReader::new(bytes);
    match r.u8("heatmap mode")? {
        RAW => {
            let packed = r.rest();
            if packed.len() != n.div_ceil(8) {
                return Err(Error::corruption(format!(
                    "raw heatmap has {} bytes, expected {}",
                    packed.len(),
                    n.div_ceil(8)
                )));
            }
            let mut br = BitReader::new(packed);
            Heatmap::new(height, width, (0..n).map(|_| br.read_bit()).collect())
        }
        RUNS => decode_runs(&mut r, height, width),
        m => Err(Error::corruption(format!("unknown heatmap mode {m}"))),
    }
}

fn decode_runs(r: &mut ByteReader, height: usize, width: usize) -> Result<Heatmap> {
    let n = (height * width) as u64;
    let first = match r.u8("heatmap first value")? {
        0 => false,
        1 => true,
        v => return Err(Error::corruption(format!("heatmap value {v}"))),
    };
    let count = r.varint("heatmap run count")?;
    if count > n || (count == 0) != (n == 0) {
        return Err(Error::corruption(format!("{count} runs for {n} cells")));
    }
    if count <= 1 {
        if !r.is_done() {
            return Err(Error::corruption("trailing bytes after heatmap"));
        }
        return Heatmap::new(height, width, vec![first; n as usize]);
    }
    let coders = [IntCoder::read_table(r)?, IntCoder::read_table(r)?];
    let stream = r.rest();
    let mut br = BitReader::new(stream);
    let mut dec = ArithmeticDecoder::new(&mut br);
    let mut cells = Vec::with_capacity(n as usize);
    let mut value = first;
    for i in 0..count {
        let run = coders[(i % 2) as usize].decode(&mut dec)?;
        if run == 0 || cells.len() as u64 + run > n {
            return Err(Error::corruption("heatmap runs overflow the grid"));
        }
        cells.resize(cells.len() + run as usize, value);
        value = !value;
    }
    dec.finish()?;
    if cells.len() as u64 != n {
        return Err(Error::corruption("heatmap runs do not cover the grid"));
    }
    if br.position().div_ceil(8) != stream.len() {
        return Err(Error::corruption("trailing bytes after heatmap"));
    }
    Heatmap::new(height, width, cells)
}
