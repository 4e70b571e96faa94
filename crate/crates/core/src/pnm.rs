//! Binary Netpbm (P5 / P6) codec with byte-offset error reporting.

use std::io::Write;

use crate::error::{Error, Result};

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = Vec::with_capacity(self.data.len() + 20);
        write!(out, "{}\n{} {}\n255\n", magic, self.width, self.height).unwrap();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Raster> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(Error::format(0, format!("unsupported magic {other:?}")));
            }
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval_at = cur.pos;
        let maxval = cur.number()?;
        if maxval != 255 {
            return Err(Error::format(
                maxval_at as u64,
                format!("only maxval 255 is supported, found {maxval}"),
            ));
        }
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(Error::format(cur.pos as u64, "missing header terminator"));
        }
        let start = cur.pos + 1;
        let need = width * height * channels;
        let have = bytes.len() - start;
        if have < need {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated raster: expected {need} bytes, found {have}"),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::format(3, "zero image dimension"));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data: bytes[start..start + need].to_vec(),
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::format(start as u64, format!("expected a number, found {tok:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_gray_and_rgb() {
        let mut g = Raster::new(3, 2, 1);
        g.data = vec![0, 1, 2, 253, 254, 255];
        assert_eq!(Raster::decode(&g.encode()).unwrap(), g);
        let mut c = Raster::new(2, 2, 3);
        c.data = (0..12).collect();
        assert_eq!(Raster::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x07\x09";
        let r = Raster::decode(bytes).unwrap();
        assert_eq!(r.data, vec![7, 9]);
    }

    #[test]
    fn truncated_raster_reports_offset() {
        let mut bytes = Raster::new(4, 4, 1).encode();
        bytes.truncate(bytes.len() - 3);
        match Raster::decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_its_offset() {
        match Raster::decode(b"P5\n4 x\n255\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
    }
}
