//! Binary PGM (`P5`) reading and writing.
//!
//! Samples are one byte when `maxval < 256` and two bytes big-endian
//! otherwise. The writer always emits the header `P5\n<w> <h>\n<maxval>\n`;
//! the reader also accepts arbitrary whitespace and `#` comments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, LabelMap, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, each `<= maxval`.
    pub samples: Vec<u16>,
}

impl Pgm {
    pub fn new(width: usize, height: usize, maxval: u16, samples: Vec<u16>) -> Result<Self> {
        if maxval == 0 {
            return Err(Error::Format("PGM maxval must be positive".into()));
        }
        if samples.len() != width * height {
            return Err(Error::Format(format!(
                "{width}x{height} PGM needs {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        if let Some(s) = samples.iter().find(|&&s| s > maxval) {
            return Err(Error::Format(format!("sample {s} exceeds maxval {maxval}")));
        }
        Ok(Self {
            width,
            height,
            maxval,
            samples,
        })
    }

    fn wide(&self) -> bool {
        self.maxval > 255
    }

    /// 16-bit image of reals in `[0, 1]` (values are clamped and rounded).
    pub fn from_unit_reals(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let samples = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        Self::new(width, height, u16::MAX, samples)
    }

    /// Samples divided by `maxval`.
    pub fn to_unit_reals(&self) -> Vec<f64> {
        let scale = f64::from(self.maxval);
        self.samples.iter().map(|&s| f64::from(s) / scale).collect()
    }

    /// 8-bit image holding raw class indices.
    pub fn from_labels(labels: &LabelMap) -> Self {
        Self {
            width: labels.width(),
            height: labels.height(),
            maxval: 255,
            samples: labels.data().iter().map(|&c| u16::from(c)).collect(),
        }
    }

    pub fn to_labels(&self, m: usize) -> Result<LabelMap> {
        let data = self
            .samples
            .iter()
            .map(|&s| u8::try_from(s).map_err(|_| Error::Format(format!("label sample {s} does not fit in 8 bits"))))
            .collect::<Result<Vec<u8>>>()?;
        LabelMap::new(self.height, self.width, m, data)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        let mut raster = Vec::with_capacity(self.samples.len() * if self.wide() { 2 } else { 1 });
        for &s in &self.samples {
            if self.wide() {
                raster.extend_from_slice(&s.to_be_bytes());
            } else {
                raster.push(s as u8);
            }
        }
        out.write_all(&raster)?;
        out.flush()
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(input)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("reading PGM: {e}")))?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        if magic != b"P5" {
            return Err(Error::Format(format!(
                "expected binary PGM magic P5, found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("maxval {maxval} outside 1..=65535")));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(Error::Format("missing whitespace after maxval".into())),
        }
        let raster = &bytes[cursor.pos..];
        let per = if maxval > 255 { 2 } else { 1 };
        let needed = width * height * per;
        if raster.len() < needed {
            return Err(Error::Format(format!(
                "raster truncated: need {needed} bytes, found {}",
                raster.len()
            )));
        }
        let samples = if per == 2 {
            raster[..needed]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        } else {
            raster[..needed].iter().map(|&b| u16::from(b)).collect()
        };
        Self::new(width, height, maxval as u16, samples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad PGM {what}: {:?}", String::from_utf8_lossy(tok))))
    }
}
