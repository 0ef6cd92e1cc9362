//! Radiance RGBE (`.hdr`): four bytes per pixel, three 8-bit mantissas
//! sharing one exponent byte biased by 128.

use super::ImageHDR;
use crate::error::{Error, Result};

/// Scanline encoding used by the writer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RgbeEncoding {
    Flat,
    /// Adaptive run-length encoding, per channel. Falls back to flat for
    /// widths outside `8..32768`.
    Rle,
}

pub fn rgbe_encode_pixel([r, g, b]: [f32; 3]) -> [u8; 4] {
    let v = r.max(g).max(b) as f64;
    if v < 1e-32 {
        return [0, 0, 0, 0];
    }
    // frexp: v = m * 2^e with m in [0.5, 1)
    let mut e = v.log2().floor() as i32 + 1;
    let mut m = v / 2f64.powi(e);
    while m >= 1.0 {
        m /= 2.0;
        e += 1;
    }
    while m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    if e + 128 > 255 {
        return [255, 255, 255, 255];
    }
    // Round to nearest; the largest channel can round up to 256 and clamps.
    let scale = m * 256.0 / v;
    let q = |c: f32| ((c as f64 * scale).round() as u32).min(255) as u8;
    [q(r), q(g), q(b), (e + 128) as u8]
}

/// `c * 2^(e - 136)`, without the half-step offset some readers add, so
/// dyadic values survive a round trip exactly.
pub fn rgbe_decode_pixel([r, g, b, e]: [u8; 4]) -> [f32; 3] {
    if e == 0 {
        return [0.0; 3];
    }
    let f = 2f64.powi(e as i32 - 136);
    let d = |c: u8| (c as f64 * f) as f32;
    [d(r), d(g), d(b)]
}

pub fn write_rgbe(img: &ImageHDR) -> Vec<u8> {
    write_rgbe_with(img, RgbeEncoding::Rle)
}

pub fn write_rgbe_with(img: &ImageHDR, encoding: RgbeEncoding) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {h} +X {w}\n").into_bytes();
    let rle = encoding == RgbeEncoding::Rle && (8..32768).contains(&w);
    let mut line = vec![[0u8; 4]; w];
    for y in 0..h {
        for (x, px) in line.iter_mut().enumerate() {
            *px = rgbe_encode_pixel(img.pixel(x, y));
        }
        if rle {
            out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
            for ch in 0..4 {
                let data: Vec<u8> = line.iter().map(|p| p[ch]).collect();
                rle_encode_channel(&data, &mut out);
            }
        } else {
            line.iter().for_each(|p| out.extend_from_slice(p));
        }
    }
    out
}

/// Run-length codes: a count byte above 128 repeats the next byte
/// `count - 128` times; otherwise `count` literal bytes follow.
fn rle_encode_channel(data: &[u8], out: &mut Vec<u8>) {
    const MIN_RUN: usize = 4;
    let w = data.len();
    let mut cur = 0;
    while cur < w {
        let mut beg_run = cur;
        let mut run_count = 0;
        let mut old_run_count = 0;
        while run_count < MIN_RUN && beg_run < w {
            beg_run += run_count;
            old_run_count = run_count;
            run_count = 1;
            while beg_run + run_count < w && run_count < 127 && data[beg_run] == data[beg_run + run_count] {
                run_count += 1;
            }
        }
        // A short run directly before the long one is cheaper as a run too.
        if old_run_count > 1 && old_run_count == beg_run - cur {
            out.push(128 + old_run_count as u8);
            out.push(data[cur]);
            cur = beg_run;
        }
        while cur < beg_run {
            let n = (beg_run - cur).min(128);
            out.push(n as u8);
            out.extend_from_slice(&data[cur..cur + n]);
            cur += n;
        }
        if run_count >= MIN_RUN {
            out.push(128 + run_count as u8);
            out.push(data[beg_run]);
            cur += run_count;
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.pos, "unexpected end of pixel data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn line(&mut self) -> Result<&str> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let len = rest
            .iter()
            .take(4096)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
        self.pos += len + 1;
        std::str::from_utf8(&rest[..len]).map_err(|_| Error::parse(start, "header line is not UTF-8"))
    }
}

fn parse_resolution(line: &str, at: usize) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split_ascii_whitespace().collect();
    let bad = || Error::parse(at, format!("invalid resolution line {line:?}"));
    if parts.len() != 4 {
        return Err(bad());
    }
    if parts[0] != "-Y" || parts[2] != "+X" {
        if parts[0].len() == 2 && parts[2].len() == 2 {
            return Err(Error::Unsupported(format!(
                "RGBE orientation {} {}",
                parts[0], parts[2]
            )));
        }
        return Err(bad());
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0 && v <= 1 << 20)
            .ok_or_else(bad)
    };
    Ok((dim(parts[3])?, dim(parts[1])?))
}

pub fn read_rgbe(bytes: &[u8]) -> Result<ImageHDR> {
    let mut cur = Cursor { bytes, pos: 0 };
    let sig = cur.line()?;
    if !(sig.starts_with("#?RADIANCE") || sig.starts_with("#?RGBE")) {
        return Err(Error::parse(0, "missing #?RADIANCE signature"));
    }
    loop {
        let at = cur.pos;
        let line = cur.line()?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt.trim() != "32-bit_rle_rgbe" {
                return Err(Error::Unsupported(format!("RGBE pixel format {fmt:?} at byte {at}")));
            }
        }
    }
    let at = cur.pos;
    let (width, height) = parse_resolution(cur.line()?, at)?;

    // Each scanline needs at least 4 bytes even when fully run-length coded.
    if bytes.len() - cur.pos < height * 4 {
        return Err(Error::parse(bytes.len(), "truncated pixel data"));
    }
    let mut pixels = Vec::with_capacity(width * height * 3);
    let mut line = vec![[0u8; 4]; width];
    for _ in 0..height {
        read_scanline(&mut cur, &mut line)?;
        for px in &line {
            pixels.extend_from_slice(&rgbe_decode_pixel(*px));
        }
    }
    ImageHDR::new(width, height, pixels)
}

fn read_scanline(cur: &mut Cursor<'_>, line: &mut [[u8; 4]]) -> Result<()> {
    let w = line.len();
    let start = cur.pos;
    let head = cur.bytes.get(start..start + 4);
    let is_rle = (8..32768).contains(&w)
        && matches!(head, Some(&[2, 2, hi, lo]) if hi & 0x80 == 0 && ((hi as usize) << 8 | lo as usize) == w);
    if !is_rle {
        for px in line.iter_mut() {
            *px = [cur.byte()?, cur.byte()?, cur.byte()?, cur.byte()?];
        }
        return Ok(());
    }
    cur.pos += 4;
    for ch in 0..4 {
        let mut x = 0;
        while x < w {
            let at = cur.pos;
            let count = cur.byte()? as usize;
            if count > 128 {
                let n = count - 128;
                let v = cur.byte()?;
                if x + n > w {
                    return Err(Error::parse(at, "run overflows scanline"));
                }
                line[x..x + n].iter_mut().for_each(|p| p[ch] = v);
                x += n;
            } else {
                if count == 0 || x + count > w {
                    return Err(Error::parse(at, "bad literal run length"));
                }
                for p in &mut line[x..x + count] {
                    p[ch] = cur.byte()?;
                }
                x += count;
            }
        }
    }
    Ok(())
}
