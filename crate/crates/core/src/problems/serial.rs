//! Flat instance container shared by the problem families.
//!
//! A file starts with an 8-byte magic string. In the binary variant the next
//! byte is `B` and the payload is a sequence of little-endian `u64`/`f64`
//! values; in the text variant the magic is followed by a newline and the
//! payload is whitespace-separated tokens, reals in shortest round-trip
//! scientific notation. Matrices are written as `rows cols` followed by the
//! entries in row-major order.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Text,
    Binary,
}

pub(crate) struct Encoder {
    encoding: Encoding,
    buf: Vec<u8>,
    line_started: bool,
}

impl Encoder {
    pub fn new(encoding: Encoding, magic: &[u8; 8]) -> Self {
        let mut buf = magic.to_vec();
        buf.push(match encoding {
            Encoding::Binary => b'B',
            Encoding::Text => b'\n',
        });
        Encoder {
            encoding,
            buf,
            line_started: false,
        }
    }

    fn token(&mut self, s: &str) {
        if self.line_started {
            self.buf.push(b' ');
        }
        self.buf.extend_from_slice(s.as_bytes());
        self.line_started = true;
    }

    pub fn newline(&mut self) {
        if self.encoding == Encoding::Text && self.line_started {
            self.buf.push(b'\n');
            self.line_started = false;
        }
    }

    pub fn uint(&mut self, v: usize) {
        match self.encoding {
            Encoding::Binary => self.buf.extend_from_slice(&(v as u64).to_le_bytes()),
            Encoding::Text => self.token(&v.to_string()),
        }
    }

    pub fn real(&mut self, v: f64) {
        match self.encoding {
            Encoding::Binary => self.buf.extend_from_slice(&v.to_le_bytes()),
            Encoding::Text => self.token(&format!("{v:e}")),
        }
    }

    pub fn uints(&mut self, vs: &[usize]) {
        self.uint(vs.len());
        vs.iter().for_each(|&v| self.uint(v));
        self.newline();
    }

    pub fn matrix(&mut self, m: &DMatrix<f64>) {
        self.uint(m.nrows());
        self.uint(m.ncols());
        self.newline();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.real(m[(r, c)]);
            }
            self.newline();
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.newline();
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    encoding: Encoding,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if data.len() < 9 || &data[..8] != magic {
            return Err(Error::Format(format!(
                "missing magic {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let encoding = match data[8] {
            b'B' => Encoding::Binary,
            b'\n' => Encoding::Text,
            other => {
                return Err(Error::Format(format!("unknown encoding marker {other:#x}")));
            }
        };
        Ok(Decoder {
            encoding,
            data,
            pos: 9,
        })
    }

    #[cfg(test)]
    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    fn bytes8(&mut self) -> Result<[u8; 8]> {
        let end = self.pos + 8;
        let chunk = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("unexpected end of binary payload".into()))?;
        self.pos = end;
        Ok(chunk.try_into().expect("8 bytes"))
    }

    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("unexpected end of text payload".into()));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| Error::Format("payload is not UTF-8".into()))
    }

    pub fn uint(&mut self) -> Result<usize> {
        match self.encoding {
            Encoding::Binary => Ok(u64::from_le_bytes(self.bytes8()?) as usize),
            Encoding::Text => {
                let t = self.token()?;
                t.parse()
                    .map_err(|_| Error::Format(format!("expected an integer, found `{t}`")))
            }
        }
    }

    pub fn real(&mut self) -> Result<f64> {
        match self.encoding {
            Encoding::Binary => Ok(f64::from_le_bytes(self.bytes8()?)),
            Encoding::Text => {
                let t = self.token()?;
                t.parse()
                    .map_err(|_| Error::Format(format!("expected a real, found `{t}`")))
            }
        }
    }

    /// Length-prefixed integer list, with a sanity cap on the length.
    pub fn uints(&mut self, cap: usize) -> Result<Vec<usize>> {
        let n = self.uint()?;
        if n > cap {
            return Err(Error::Format(format!("list length {n} exceeds {cap}")));
        }
        (0..n).map(|_| self.uint()).collect()
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let (r, c) = (self.uint()?, self.uint()?);
        if (r, c) != (rows, cols) {
            return Err(Error::Format(format!(
                "expected a {rows}x{cols} matrix, found {r}x{c}"
            )));
        }
        let mut m = DMatrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                m[(i, j)] = self.real()?;
            }
        }
        Ok(m)
    }

    pub fn finish(mut self) -> Result<()> {
        let trailing = match self.encoding {
            Encoding::Binary => self.pos != self.data.len(),
            Encoding::Text => self.token().is_ok(),
        };
        if trailing {
            return Err(Error::Format("trailing content after payload".into()));
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_encodings() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -0.1, 1e-300, 3.5, f64::MAX, 0.1 + 0.2]);
        for enc in [Encoding::Text, Encoding::Binary] {
            let mut e = Encoder::new(enc, b"TESTMAG1");
            e.uints(&[3, 1, 4]);
            e.real(std::f64::consts::PI);
            e.matrix(&m);
            let bytes = e.finish();
            let mut d = Decoder::new(&bytes, b"TESTMAG1").unwrap();
            assert_eq!(d.encoding(), enc);
            assert_eq!(d.uints(10).unwrap(), vec![3, 1, 4]);
            assert_eq!(d.real().unwrap(), std::f64::consts::PI);
            assert_eq!(d.matrix(2, 3).unwrap(), m);
            d.finish().unwrap();
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(Decoder::new(b"XXXXXXXX\n1", b"TESTMAG1").is_err());
        let mut e = Encoder::new(Encoding::Binary, b"TESTMAG1");
        e.uint(7);
        let bytes = e.finish();
        let mut d = Decoder::new(&bytes[..12], b"TESTMAG1").unwrap();
        assert!(d.uint().is_err());
    }
}
