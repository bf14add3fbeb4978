//! Dense backward maps and their `CPBM` binary encoding.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size            field
//! 0       4               magic "CPBM"
//! 4       4               u32 version (= 1)
//! 8       4               u32 width
//! 12      4               u32 height
//! 16      8 * w * h       (f32 x, f32 y) per output pixel, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Point2, Result};

pub const CPBM_MAGIC: &[u8; 4] = b"CPBM";
pub const CPBM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// For every rectified output pixel, the coordinate to sample in the distorted image.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardMap {
    width: u32,
    height: u32,
    data: Vec<Point2>,
}

impl BackwardMap {
    pub fn new(width: u32, height: u32, data: Vec<Point2>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMap(format!("empty map {width}x{height}")));
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::InvalidMap(format!(
                "{width}x{height} map needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { width, height, data })
    }

    /// Map where every pixel `(j, i)` points at itself.
    pub fn identity(width: u32, height: u32) -> Self {
        Self::from_fn(width, height, |x, y| Point2::new(x as f64, y as f64))
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> Point2) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub(crate) fn from_raw(width: u32, height: u32, data: Vec<Point2>) -> Self {
        debug_assert_eq!(data.len(), width as usize * height as usize);
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[Point2] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> Point2 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn to_cpbm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 8);
        self.write_cpbm(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_cpbm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CPBM_MAGIC)?;
        w.write_all(&CPBM_VERSION.to_le_bytes())?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.width as usize * 8);
        for row in self.data.chunks(self.width as usize) {
            buf.clear();
            for p in row {
                buf.extend_from_slice(&(p.x as f32).to_le_bytes());
                buf.extend_from_slice(&(p.y as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn from_cpbm_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::InvalidMap("truncated header".into()));
        }
        if &bytes[..4] != CPBM_MAGIC {
            return Err(Error::InvalidMap("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CPBM_VERSION {
            return Err(Error::InvalidMap(format!("unsupported version {version}")));
        }
        let (width, height) = (word(8), word(12));
        let n = width as usize * height as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != n * 8 {
            return Err(Error::InvalidMap(format!(
                "{width}x{height} map needs {} payload bytes, got {}",
                n * 8,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| {
                let x = f32::from_le_bytes(c[..4].try_into().unwrap());
                let y = f32::from_le_bytes(c[4..].try_into().unwrap());
                Point2::new(x as f64, y as f64)
            })
            .collect();
        Self::new(width, height, data)
    }

    pub fn read_cpbm<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("<reader>", e))?;
        Self::from_cpbm_bytes(&bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_cpbm_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_cpbm_bytes()).map_err(|e| Error::io(path, e))
    }
}
