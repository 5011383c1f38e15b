//! The `GCX1` container plus the heatmap and label-map side sections.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! "GCX1" | version u8 | mode u8 | W u16 | H u16 | C u8 | L u8 | s u8
//! | centers L x f32 | tables C x L x u32
//! | [SC: heatmap len u32 | heatmap | label map len u32 | label map]
//! | payload len u32 | payload
//! ```

mod bytes;
mod heatmap;
mod labelmap;

pub use heatmap::{decode_heatmap, encode_heatmap, Heatmap};
pub use labelmap::{
    decode_label_map, encode_label_map, rasterize_label_map, LabelGrid, Polygon, PolygonLabelMap,
};

use bytes::ByteReader;

use crate::entropy::{FrequencyTable, MAX_TOTAL};
use crate::error::{Error, Result};
use crate::quantizer::CenterSet;

pub const MAGIC: &[u8; 4] = b"GCX1";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Generative,
    Selective,
}

impl Mode {
    fn tag(self) -> u8 {
        match self {
            Mode::Generative => 0,
            Mode::Selective => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Generative => "GC",
            Mode::Selective => "SC",
        }
    }
}

/// Parsed container. `width`/`height` are the true image size; the code
/// grid covers the image padded up to a multiple of `downsample`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedImage {
    pub mode: Mode,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub downsample: usize,
    pub centers: CenterSet,
    pub tables: Vec<FrequencyTable>,
    pub heatmap: Option<Vec<u8>>,
    /// Empty in SC mode means no label map was stored.
    pub labelmap: Option<Vec<u8>>,
    pub payload: Vec<u8>,
}

/// Bit counts per container part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitBreakdown {
    pub header_bits: usize,
    pub heatmap_bits: usize,
    pub labelmap_bits: usize,
    pub payload_bits: usize,
}

impl BitBreakdown {
    pub fn total_bits(&self) -> usize {
        self.header_bits + self.heatmap_bits + self.labelmap_bits + self.payload_bits
    }
}

impl CompressedImage {
    pub fn code_height(&self) -> usize {
        self.height.div_ceil(self.downsample)
    }

    pub fn code_width(&self) -> usize {
        self.width.div_ceil(self.downsample)
    }

    pub fn bits(&self) -> BitBreakdown {
        let section = |s: &Option<Vec<u8>>| s.as_ref().map_or(0, |b| b.len() * 8);
        let heatmap_bits = section(&self.heatmap);
        let labelmap_bits = section(&self.labelmap);
        let payload_bits = self.payload.len() * 8;
        BitBreakdown {
            header_bits: self.serialized_len() * 8 - heatmap_bits - labelmap_bits - payload_bits,
            heatmap_bits,
            labelmap_bits,
            payload_bits,
        }
    }

    pub fn serialized_len(&self) -> usize {
        let levels = self.centers.levels();
        let mut n = 4 + 1 + 1 + 2 + 2 + 3 + 4 * levels + 4 * levels * self.channels;
        if self.mode == Mode::Selective {
            n += 8;
            n += self.heatmap.as_ref().map_or(0, Vec::len);
            n += self.labelmap.as_ref().map_or(0, Vec::len);
        }
        n + 4 + self.payload.len()
    }
}

fn byte_field(v: usize, what: &str) -> Result<u8> {
    u8::try_from(v).map_err(|_| Error::UnsupportedSize(format!("{what} = {v} exceeds 255")))
}

fn len_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::UnsupportedSize(format!("{what} of {v} bytes")))
}

pub fn write_container(ci: &CompressedImage) -> Result<Vec<u8>> {
    let dim = |v: usize, what: &str| {
        u16::try_from(v)
            .map_err(|_| Error::UnsupportedSize(format!("{what} {v} exceeds 65535")))
    };
    let levels = ci.centers.levels();
    if ci.tables.len() != ci.channels || ci.tables.iter().any(|t| t.levels() != levels) {
        return Err(Error::usage("need one L-symbol frequency table per channel"));
    }
    if ci.mode == Mode::Selective && ci.heatmap.as_ref().is_none_or(Vec::is_empty) {
        return Err(Error::usage("selective container without a heatmap"));
    }
    let mut out = Vec::with_capacity(ci.serialized_len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(ci.mode.tag());
    out.extend(dim(ci.width, "width")?.to_le_bytes());
    out.extend(dim(ci.height, "height")?.to_le_bytes());
    out.push(byte_field(ci.channels, "C")?);
    out.push(byte_field(levels, "L")?);
    out.push(byte_field(ci.downsample, "s")?);
    for &c in ci.centers.centers() {
        out.extend(c.to_le_bytes());
    }
    for t in &ci.tables {
        for &c in t.counts() {
            out.extend(c.to_le_bytes());
        }
    }
    if ci.mode == Mode::Selective {
        for (section, what) in [(&ci.heatmap, "heatmap"), (&ci.labelmap, "label map")] {
            let s = section.as_deref().unwrap_or(&[]);
            out.extend(len_field(s.len(), what)?.to_le_bytes());
            out.extend_from_slice(s);
        }
    }
    out.extend(len_field(ci.payload.len(), "payload")?.to_le_bytes());
    out.extend_from_slice(&ci.payload);
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<CompressedImage> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic").map_err(|_| Error::Format("file too short".into()))? != MAGIC {
        return Err(Error::Format("not a GCX1 container".into()));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mode = match r.u8("mode")? {
        0 => Mode::Generative,
        1 => Mode::Selective,
        m => return Err(Error::corruption(format!("unknown mode {m}"))),
    };
    let width = r.u16("width")? as usize;
    let height = r.u16("height")? as usize;
    let channels = r.u8("C")? as usize;
    let levels = r.u8("L")? as usize;
    let downsample = r.u8("s")? as usize;
    if width == 0 || height == 0 || channels == 0 || downsample == 0 {
        return Err(Error::corruption("zero image or code dimension"));
    }
    let centers = (0..levels)
        .map(|_| r.f32("centers"))
        .collect::<Result<Vec<_>>>()?;
    let centers = CenterSet::new(centers, 1.0)
        .map_err(|e| Error::corruption(format!("bad center set: {e}")))?;
    let mut tables = Vec::with_capacity(channels);
    for c in 0..channels {
        let counts = (0..levels)
            .map(|_| r.u32("frequency tables"))
            .collect::<Result<Vec<_>>>()?;
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if counts.contains(&0) || total > MAX_TOTAL as u64 {
            return Err(Error::corruption(format!("invalid frequency table for channel {c}")));
        }
        tables.push(FrequencyTable::from_counts(&counts)?);
    }
    let mut section = |what: &str| -> Result<Vec<u8>> {
        let n = r.u32(what)? as usize;
        Ok(r.take(n, what)?.to_vec())
    };
    let (heatmap, labelmap) = if mode == Mode::Selective {
        let h = section("heatmap")?;
        if h.is_empty() {
            return Err(Error::corruption("selective container without a heatmap"));
        }
        (Some(h), Some(section("label map")?))
    } else {
        (None, None)
    };
    let payload = section("payload")?;
    if !r.is_done() {
        return Err(Error::corruption("trailing bytes after payload"));
    }
    Ok(CompressedImage {
        mode,
        width,
        height,
        channels,
        downsample,
        centers,
        tables,
        heatmap,
        labelmap,
        payload,
    })
}
