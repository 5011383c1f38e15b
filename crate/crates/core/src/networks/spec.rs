use std::fmt;

use crate::error::{Error, Result};

/// Output width of a layer token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    Fixed(usize),
    /// The `C` placeholder: bottleneck channels, never width-scaled.
    Bottleneck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// `cKsS-k`: K x K conv with stride S and "same" padding.
    Conv { kernel: usize, stride: usize },
    /// `dk`: 3 x 3 conv, stride 2.
    Down,
    /// `Rk`: residual unit of two 3 x 3 convs.
    Residual,
    /// `uk`: 3 x 3 transposed conv, stride 2, doubling the extent.
    Up,
    /// `q`: quantization.
    Quantize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerToken {
    pub kind: LayerKind,
    pub width: Width,
}

impl fmt::Display for LayerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = match self.width {
            Width::Fixed(k) => k.to_string(),
            Width::Bottleneck => "C".into(),
        };
        match self.kind {
            LayerKind::Conv { kernel, stride } => write!(f, "c{kernel}s{stride}-{w}"),
            LayerKind::Down => write!(f, "d{w}"),
            LayerKind::Residual => write!(f, "R{w}"),
            LayerKind::Up => write!(f, "u{w}"),
            LayerKind::Quantize => f.write_str("q"),
        }
    }
}

/// A parsed comma-separated layer list such as `c7s1-60, d120, c3s1-C, q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub tokens: Vec<LayerToken>,
}

impl LayerSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = text
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(parse_token)
            .collect::<Result<Vec<_>>>()?;
        if tokens.is_empty() {
            return Err(Error::config("empty layer spec"));
        }
        if tokens.iter().filter(|t| t.kind == LayerKind::Quantize).count() > 1 {
            return Err(Error::config(format!("more than one q in '{text}'")));
        }
        Ok(Self { tokens })
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.tokens.iter().filter(|t| t.kind == kind).count()
    }

    /// Net spatial scaling: 2^(ups - downs), as (numerator, denominator).
    pub fn stride_ratio(&self) -> (usize, usize) {
        let mut num = 1usize;
        let mut den = 1usize;
        for t in &self.tokens {
            match t.kind {
                LayerKind::Down => den *= 2,
                LayerKind::Up => num *= 2,
                LayerKind::Conv { stride, .. } => den *= stride,
                _ => {}
            }
        }
        (num, den)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

fn parse_width(s: &str, token: &str) -> Result<Width> {
    match s {
        "C" | "$C$" => Ok(Width::Bottleneck),
        _ => match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Width::Fixed(k)),
            _ => Err(Error::config(format!("bad width in layer token '{token}'"))),
        },
    }
}

fn parse_token(token: &str) -> Result<LayerToken> {
    let bad = || Error::config(format!("unknown layer token '{token}'"));
    if token == "q" {
        return Ok(LayerToken {
            kind: LayerKind::Quantize,
            width: Width::Bottleneck,
        });
    }
    let (kind, rest) = match token.as_bytes().first().ok_or_else(bad)? {
        b'd' => (LayerKind::Down, &token[1..]),
        b'R' => (LayerKind::Residual, &token[1..]),
        b'u' => (LayerKind::Up, &token[1..]),
        b'c' => {
            let (geom, width) = token[1..].split_once('-').ok_or_else(bad)?;
            let (k, s) = geom.split_once('s').ok_or_else(bad)?;
            let kernel: usize = k.parse().map_err(|_| bad())?;
            let stride: usize = s.parse().map_err(|_| bad())?;
            if kernel % 2 == 0 || stride == 0 {
                return Err(bad());
            }
            (LayerKind::Conv { kernel, stride }, width)
        }
        _ => return Err(bad()),
    };
    Ok(LayerToken {
        kind,
        width: parse_width(rest, token)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_prefix() {
        let s = LayerSpec::parse("c7s1-60, d120").unwrap();
        assert_eq!(
            s.tokens,
            vec![
                LayerToken {
                    kind: LayerKind::Conv { kernel: 7, stride: 1 },
                    width: Width::Fixed(60)
                },
                LayerToken {
                    kind: LayerKind::Down,
                    width: Width::Fixed(120)
                },
            ]
        );
    }

    #[test]
    fn full_strings() {
        let e = LayerSpec::parse("c7s1-60, d120, d240, d480, d960, c3s1-$C$, q").unwrap();
        assert_eq!(e.count(LayerKind::Down), 4);
        assert_eq!(e.tokens[5].width, Width::Bottleneck);
        assert_eq!(e.stride_ratio(), (1, 16));
        assert_eq!(e.to_string(), "c7s1-60, d120, d240, d480, d960, c3s1-C, q");

        let g = LayerSpec::parse(
            "c3s1-960, R960, R960, R960, R960, R960, R960, R960, R960, R960, \
             u480, u240, u120, u60, c7s1-3",
        )
        .unwrap();
        assert_eq!(g.count(LayerKind::Residual), 9);
        assert_eq!(g.stride_ratio(), (16, 1));
    }

    #[test]
    fn malformed_tokens() {
        for bad in ["x7s1-60", "c7s1", "d", "d-3", "c4s1-8", "R0", "q, q", ""] {
            assert!(
                matches!(LayerSpec::parse(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }
}
