//! Binary grayscale PGM (`P5`), 8 or 16 bit. Intensities map to `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussmath::{GridShape, HeatmapGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

impl Depth {
    fn maxval(self) -> u32 {
        match self {
            Depth::Eight => 255,
            Depth::Sixteen => 65535,
        }
    }
}

/// Encodes `img` (values clamped to `[0, 1]`, rounded to the nearest level).
pub fn encode(img: &HeatmapGrid, depth: Depth) -> Vec<u8> {
    let max = depth.maxval();
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, max).into_bytes();
    for &v in &img.values {
        let q = (v.clamp(0.0, 1.0) * max as f64).round() as u32;
        match depth {
            Depth::Eight => out.push(q as u8),
            Depth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

fn header_field(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<u32> {
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("PGM header: {msg}"),
    };
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(bad("truncated")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("expected a number"))
}

/// Decodes a `P5` image; `path` is only used in error messages.
pub fn decode(bytes: &[u8], spacing: f64, path: &Path) -> Result<HeatmapGrid> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg,
    };
    if !bytes.starts_with(b"P5") {
        return Err(bad("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let width = header_field(bytes, &mut pos, path)? as usize;
    let height = header_field(bytes, &mut pos, path)? as usize;
    let max = header_field(bytes, &mut pos, path)?;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval".into()));
    }
    pos += 1;
    if width == 0 || height == 0 || max == 0 || max > 65535 {
        return Err(bad(format!("unsupported geometry {width}x{height}, maxval {max}")));
    }
    let bpp = if max < 256 { 1 } else { 2 };
    let data = &bytes[pos..];
    if data.len() < width * height * bpp {
        return Err(bad(format!("expected {} bytes of pixel data, found {}", width * height * bpp, data.len())));
    }
    let values = (0..width * height)
        .map(|i| {
            let q = if bpp == 1 { data[i] as u32 } else { u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as u32 };
            q as f64 / max as f64
        })
        .collect();
    HeatmapGrid::from_values(GridShape::new(width, height, spacing)?, values)
}

pub fn read(path: &Path, spacing: f64) -> Result<HeatmapGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, spacing, path)
}

pub fn write(path: &Path, img: &HeatmapGrid, depth: Depth) -> Result<()> {
    std::fs::write(path, encode(img, depth)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_depths() {
        let values: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let img = HeatmapGrid::from_values(GridShape::new(4, 3, 0.1).unwrap(), values).unwrap();
        for (depth, tol) in [(Depth::Eight, 0.5 / 255.0), (Depth::Sixteen, 0.5 / 65535.0)] {
            let bytes = encode(&img, depth);
            let back = decode(&bytes, 0.1, Path::new("x.pgm")).unwrap();
            assert_eq!((back.width, back.height, back.spacing), (4, 3, 0.1));
            for (a, b) in img.values.iter().zip(&back.values) {
                assert!((a - b).abs() <= tol);
            }
            // Quantized values survive a second trip exactly.
            assert_eq!(encode(&back, depth), bytes);
        }
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode(&bytes, 1.0, Path::new("c.pgm")).unwrap();
        assert_eq!(img.values, vec![0.0, 1.0]);
        assert!(decode(b"P2\n1 1\n255\n0", 1.0, Path::new("a.pgm")).is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00", 1.0, Path::new("a.pgm")).is_err());
        assert!(decode(&bytes, 0.0, Path::new("c.pgm")).is_err());
    }
}
