//! IDX file codec (big-endian header, unsigned-byte payload), optionally
//! gzip-wrapped.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{DataError, Dataset, DatasetName};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Decoded image file: `count` images of `rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).ok_or(DataError::TruncatedFile {
            needed: usize::MAX,
            available: self.bytes.len(),
        })?;
        if end > self.bytes.len() {
            return Err(DataError::TruncatedFile {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<(), DataError> {
        let found = self.u32_be()?;
        if found != expected {
            return Err(DataError::BadMagic { expected, found });
        }
        Ok(())
    }
}

/// Inflate `bytes` if they start with the gzip magic, else borrow them.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, DataError> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(DataError::Gzip)?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

pub fn decode_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let mut r = Reader::new(bytes);
    r.magic(IDX_IMAGES_MAGIC)?;
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(DataError::TruncatedFile {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    let pixels = r.take(len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let mut r = Reader::new(bytes);
    r.magic(IDX_LABELS_MAGIC)?;
    let count = r.u32_be()? as usize;
    Ok(r.take(count)?.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load an image/label IDX pair (either may be gzipped) as a 10-class
/// dataset with pixels scaled to [0, 1].
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    name: DatasetName,
) -> Result<Dataset, DataError> {
    let images = decode_idx_images(&maybe_gunzip(&read_file(images_path.as_ref())?)?)?;
    let labels = decode_idx_labels(&maybe_gunzip(&read_file(labels_path.as_ref())?)?)?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let features = images.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(name, (images.rows, images.cols), 10, features, labels)
}
