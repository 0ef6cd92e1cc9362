//! Whitespace-separated ASCII header tokens shared by PFM and PPM.

use crate::error::{Error, Result};

pub(crate) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> HeaderReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Next token; at most 32 bytes long.
    pub fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || self.pos - start > 32 {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::parse(start, format!("expected {what}, found end of header")));
        }
        if self.pos - start > 32 {
            return Err(Error::parse(start, format!("{what} token is too long")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start, format!("{what} is not ASCII")))
    }

    pub fn dimension(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let tok = self.token(what)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 && v <= 1 << 20 => Ok(v),
            _ => Err(Error::parse(start, format!("invalid {what} {tok:?}"))),
        }
    }

    /// Consumes the single whitespace byte that ends a binary-format header.
    pub fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(self.pos)
            }
            _ => Err(Error::parse(
                self.pos,
                "expected a single whitespace byte after the header",
            )),
        }
    }
}

/// Errors out unless `bytes[offset..]` holds at least `needed` bytes.
pub(crate) fn require_payload(bytes: &[u8], offset: usize, needed: usize) -> Result<()> {
    let have = bytes.len().saturating_sub(offset);
    if have < needed {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: need {needed} bytes, found {have}"),
        ));
    }
    Ok(())
}
