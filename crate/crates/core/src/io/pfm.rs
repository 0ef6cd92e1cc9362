use super::header::{require_payload, HeaderReader};
use super::ImageHDR;
use crate::error::{Error, Result};

/// Parses a colour (`PF`) Portable Float Map.
///
/// A negative scale token means little-endian samples, positive means
/// big-endian. Rows are stored bottom-up and flipped here.
pub fn read_pfm(bytes: &[u8]) -> Result<ImageHDR> {
    let mut h = HeaderReader::new(bytes);
    let magic = h.token("PFM signature")?;
    match magic {
        "PF" => {}
        "Pf" => return Err(Error::Unsupported("greyscale PFM".into())),
        _ => return Err(Error::parse(0, format!("bad PFM signature {magic:?}"))),
    }
    let width = h.dimension("width")?;
    let height = h.dimension("height")?;
    let scale_at = h.pos;
    let scale_tok = h.token("scale")?;
    let scale: f64 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::parse(scale_at, format!("invalid scale {scale_tok:?}")))?;
    let little_endian = scale < 0.0;
    let start = h.end_of_header()?;

    let count = width * height * 3;
    require_payload(bytes, start, count * 4)?;
    let mut pixels = vec![0.0f32; count];
    let row = width * 3;
    for file_row in 0..height {
        let y = height - 1 - file_row;
        for i in 0..row {
            let at = start + (file_row * row + i) * 4;
            let raw: [u8; 4] = bytes[at..at + 4].try_into().expect("4 bytes");
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::parse(
                    at,
                    format!("sample {v} is not a finite nonnegative radiance"),
                ));
            }
            pixels[y * row + i] = v;
        }
    }
    ImageHDR::new(width, height, pixels)
}

/// Little-endian PFM with scale `-1.0`.
pub fn write_pfm(img: &ImageHDR) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let header = format!("PF\n{w} {h}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + w * h * 12);
    out.extend_from_slice(header.as_bytes());
    let row = w * 3;
    for y in (0..h).rev() {
        for v in &img.pixels()[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
