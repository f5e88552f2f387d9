//! IDX files (the MNIST container): a big-endian magic word, one u32 per
//! dimension, then unsigned bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count x (rows * cols)`, row-major, scaled to [0, 1].
    pub pixels: Vec<f64>,
}

impl IdxImages {
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, pos: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            position: format!("byte {pos}"),
            detail: detail.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let word = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.pos, format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let found = self.u32("magic number")?;
        if found != magic {
            return Err(self.fail(0, format!("bad magic 0x{found:08x}, expected 0x{magic:08x}")));
        }
        Ok(())
    }

    fn body(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated: {len} data bytes declared, {available} present"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        if self.pos != self.bytes.len() {
            return Err(self.fail(self.pos, "trailing bytes after data"));
        }
        Ok(out)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.expect_magic(IMAGES_MAGIC)?;
    let count = cur.u32("image count")? as usize;
    let rows = cur.u32("row count")? as usize;
    let cols = cur.u32("column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| cur.fail(4, "dimensions overflow"))?;
    let body = cur.body(len)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.expect_magic(LABELS_MAGIC)?;
    let count = cur.u32("label count")? as usize;
    Ok(cur.body(count)?.iter().map(|&b| b as usize).collect())
}

pub fn read_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    parse_images(path, &read(path)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_labels(path, &read(path)?)
}

/// Reads a matching image/label pair.
pub fn read_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(IdxImages, Vec<usize>)> {
    let imgs = read_images(&images)?;
    let lbls = read_labels(&labels)?;
    if imgs.count != lbls.len() {
        return Err(Error::Format {
            path: labels.as_ref().to_path_buf(),
            position: "byte 4".into(),
            detail: format!("{} labels for {} images", lbls.len(), imgs.count),
        });
    }
    Ok((imgs, lbls))
}
