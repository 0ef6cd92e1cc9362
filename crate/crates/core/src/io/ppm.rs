use super::header::{require_payload, HeaderReader};
use super::ImageLDR;
use crate::error::{Error, Result};

/// Parses a binary (`P6`) PPM with maxval 255. `#` comments in the header
/// are skipped.
pub fn read_ppm(bytes: &[u8]) -> Result<ImageLDR> {
    let mut h = HeaderReader::new(bytes);
    let magic = h.token("PPM signature")?;
    if magic != "P6" {
        return Err(Error::parse(0, format!("bad PPM signature {magic:?}")));
    }
    let width = h.dimension("width")?;
    let height = h.dimension("height")?;
    let at = h.pos;
    let maxval_tok = h.token("maxval")?;
    let maxval: u32 = maxval_tok
        .parse()
        .map_err(|_| Error::parse(at, format!("invalid maxval {maxval_tok:?}")))?;
    // Netpbm allows 1..=65535; anything else is not a PPM at all.
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(at, format!("maxval {maxval} outside 1..=65535")));
    }
    if maxval != 255 {
        return Err(Error::Unsupported(format!(
            "PPM maxval {maxval} (only 255 is supported)"
        )));
    }
    let start = h.end_of_header()?;
    let len = width * height * 3;
    require_payload(bytes, start, len)?;
    ImageLDR::new(width, height, bytes[start..start + len].to_vec())
}

pub fn write_ppm(img: &ImageLDR) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.pixels());
    out
}
