use std::fmt::Write as _;

use super::bytes::{put_varint, unzigzag, zigzag, ByteReader, IntCoder};
use crate::entropy::{ArithmeticDecoder, ArithmeticEncoder, BitReader, BitWriter};
use crate::error::{Error, Result};

/// One labelled region: a closed polygon on the pixel-corner lattice
/// `[0, W] x [0, H]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polygon {
    pub class: u32,
    pub instance: u32,
    pub vertices: Vec<(u32, u32)>,
}

impl Polygon {
    /// Boundary steps between consecutive vertices (the closing edge is implied).
    pub fn deltas(&self) -> Vec<(i64, i64)> {
        self.vertices
            .windows(2)
            .map(|w| (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64))
            .collect()
    }

    pub fn rectangle(class: u32, instance: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self {
            class,
            instance,
            vertices: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
        }
    }
}

/// Semantic label map in vector form. Later objects paint over earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolygonLabelMap {
    pub objects: Vec<Polygon>,
}

impl PolygonLabelMap {
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        for (i, p) in self.objects.iter().enumerate() {
            if p.vertices.len() < 3 {
                return Err(Error::usage(format!(
                    "object {i} has {} vertices, need at least 3",
                    p.vertices.len()
                )));
            }
            if let Some(&(x, y)) = p.vertices.iter().find(|&&(x, y)| x > width || y > height) {
                return Err(Error::usage(format!(
                    "object {i} vertex ({x},{y}) outside {width}x{height}"
                )));
            }
        }
        Ok(())
    }

    /// Parses one object per line: `class instance x0,y0 x1,y1 ...`. Blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut objects = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("label map line {}: {what}", n + 1));
            let mut fields = line.split_whitespace();
            let mut int = |what: &str| -> Result<u32> {
                fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| bad(what))
            };
            let class = int("bad class id")?;
            let instance = int("bad instance id")?;
            let vertices = fields
                .map(|f| {
                    let (x, y) = f.split_once(',').ok_or_else(|| bad("vertex is not x,y"))?;
                    Ok((
                        x.parse().map_err(|_| bad("bad x"))?,
                        y.parse().map_err(|_| bad("bad y"))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            objects.push(Polygon {
                class,
                instance,
                vertices,
            });
        }
        Ok(Self { objects })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.objects {
            write!(s, "{} {}", p.class, p.instance).unwrap();
            for (x, y) in &p.vertices {
                write!(s, " {x},{y}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Object count, then (if non-empty) an inline integer table and one
/// arithmetic-coded stream of class, instance, vertex count, the first
/// vertex and zig-zagged deltas for the rest. Nothing depends on the image
/// size, which is only used for validation.
pub fn encode_label_map(m: &PolygonLabelMap, width: u32, height: u32) -> Result<Vec<u8>> {
    m.validate(width, height)?;
    let mut out = Vec::new();
    put_varint(&mut out, m.objects.len() as u64);
    if m.objects.is_empty() {
        return Ok(out);
    }
    let mut ints = Vec::new();
    for p in &m.objects {
        ints.extend([p.class as u64, p.instance as u64, p.vertices.len() as u64 - 3]);
        ints.extend([p.vertices[0].0 as u64, p.vertices[0].1 as u64]);
        for (dx, dy) in p.deltas() {
            ints.extend([zigzag(dx), zigzag(dy)]);
        }
    }
    let coder = IntCoder::fit(ints.iter().copied())?;
    coder.write_table(&mut out);
    let mut w = BitWriter::new();
    let mut enc = ArithmeticEncoder::new(&mut w);
    for &v in &ints {
        coder.encode(&mut enc, v)?;
    }
    enc.finish();
    out.extend(w.into_bytes());
    Ok(out)
}

pub fn decode_label_map(bytes: &[u8], width: u32, height: u32) -> Result<PolygonLabelMap> {
    let mut r = ByteReader::new(bytes);
    let count = r.varint("label map object count")?;
    if count == 0 {
        if !r.is_done() {
            return Err(Error::corruption("trailing bytes after empty label map"));
        }
        return Ok(PolygonLabelMap::default());
    }
    // every object needs several coded symbols, so the count is bounded by the byte length
    if count > bytes.len() as u64 * 8 {
        return Err(Error::corruption(format!("implausible object count {count}")));
    }
    let coder = IntCoder::read_table(&mut r)?;
    let stream = r.rest();
    let mut br = BitReader::new(stream);
    let mut dec = ArithmeticDecoder::new(&mut br);
    let coord = |v: i64, limit: u32| -> Result<u32> {
        u32::try_from(v)
            .ok()
            .filter(|&c| c <= limit)
            .ok_or_else(|| Error::corruption(format!("coordinate {v} outside 0..={limit}")))
    };
    let mut objects = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut next = || coder.decode(&mut dec);
        let class = u32::try_from(next()?).map_err(|_| Error::corruption("class id overflow"))?;
        let instance = u32::try_from(next()?).map_err(|_| Error::corruption("instance id overflow"))?;
        let extra = next()?;
        if extra > bytes.len() as u64 * 8 {
            return Err(Error::corruption("implausible vertex count"));
        }
        let mut x = coord(next()? as i64, width)?;
        let mut y = coord(next()? as i64, height)?;
        let mut vertices = vec![(x, y)];
        for _ in 0..extra + 2 {
            x = coord(x as i64 + unzigzag(next()?), width)?;
            y = coord(y as i64 + unzigzag(next()?), height)?;
            vertices.push((x, y));
        }
        objects.push(Polygon {
            class,
            instance,
            vertices,
        });
    }
    dec.finish()?;
    if br.position().div_ceil(8) != stream.len() {
        return Err(Error::corruption("trailing bytes after label map"));
    }
    Ok(PolygonLabelMap { objects })
}

/// Per-pixel class and instance ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    pub width: usize,
    pub height: usize,
    pub class: Vec<u32>,
    pub instance: Vec<u32>,
}

impl LabelGrid {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            class: vec![0; width * height],
            instance: vec![0; width * height],
        }
    }
}

/// Even-odd scanline fill sampled at pixel centres; background is class 0,
/// instance 0.
pub fn rasterize_label_map(m: &PolygonLabelMap, width: usize, height: usize) -> LabelGrid {
    let mut grid = LabelGrid::background(width, height);
    let mut xs = Vec::new();
    for p in &m.objects {
        let n = p.vertices.len();
        for y in 0..height {
            let yc = y as f64 + 0.5;
            xs.clear();
            for i in 0..n {
                let (x0, y0) = p.vertices[i];
                let (x1, y1) = p.vertices[(i + 1) % n];
                let (x0, y0, x1, y1) = (x0 as f64, y0 as f64, x1 as f64, y1 as f64);
                if (y0 <= yc) != (y1 <= yc) {
                    xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                // pixels whose centre x + 0.5 lies in [span[0], span[1])
                let start = (span[0] - 0.5).ceil().max(0.0) as usize;
                let end = ((span[1] - 0.5).ceil().max(0.0) as usize).min(width);
                for x in start..end {
                    grid.class[y * width + x] = p.class;
                    grid.instance[y * width + x] = p.instance;
                }
            }
        }
    }
    grid
}
