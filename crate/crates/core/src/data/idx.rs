//! Reader and writer for the IDX binary format (big-endian header, `u8` payload).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn need(path: &Path, bytes: &[u8], needed: usize) -> Result<(), IdxError> {
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            needed,
            available: bytes.len(),
        });
    }
    Ok(())
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    need(path, bytes, 4)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Loads an image/label IDX pair. Pixels are scaled by `1/255`; each image
/// is flattened row-major. The class count is `max(label) + 1`.
pub fn load_idx(features_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (fp, lp) = (features_path.as_ref(), labels_path.as_ref());

    let images = read_file(fp)?;
    check_magic(fp, &images, IMAGES_MAGIC)?;
    need(fp, &images, 16)?;
    let count = be_u32(&images, 4) as usize;
    let rows = be_u32(&images, 8) as usize;
    let cols = be_u32(&images, 12) as usize;
    let feature_dim = rows * cols;
    need(fp, &images, 16 + count * feature_dim)?;

    let labels_raw = read_file(lp)?;
    check_magic(lp, &labels_raw, LABELS_MAGIC)?;
    need(lp, &labels_raw, 8)?;
    let label_count = be_u32(&labels_raw, 4) as usize;
    if label_count != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: label_count,
        }
        .into());
    }
    need(lp, &labels_raw, 8 + count)?;

    let features: Vec<f32> = images[16..16 + count * feature_dim]
        .iter()
        .map(|&p| f32::from(p) / 255.0)
        .collect();
    let labels: Vec<usize> = labels_raw[8..8 + count].iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, feature_dim.max(1), classes)
}

/// Writes `u8` images of shape `rows x cols` in IDX format.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rows * cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::InvalidParams(format!(
            "{} pixels do not tile {rows}x{cols} images",
            pixels.len()
        )));
    }
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dir: &Path, pixels: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let (ip, lp) = (dir.join("img"), dir.join("lbl"));
        write_idx_images(&ip, 2, 2, pixels).unwrap();
        write_idx_labels(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn crafted_pair_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = pair(dir.path(), &[0, 255, 51, 0, 255, 255, 0, 0], &[3, 1]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.features(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(ds.features(1)[0], 1.0);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.classes(), 4);
    }

    #[test]
    fn header_is_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = pair(dir.path(), &[1, 2, 3, 4], &[0]);
        let raw = fs::read(&ip).unwrap();
        assert_eq!(&raw[..16], &[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2]);
        let raw = fs::read(&lp).unwrap();
        assert_eq!(&raw[..8], &[0, 0, 8, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = pair(dir.path(), &[0; 8], &[1, 2, 3]);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx(IdxError::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = pair(dir.path(), &[0; 4], &[1]);
        // Swapped files: each has the other's magic number.
        let err = load_idx(&lp, &ip).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx(IdxError::BadMagic {
                found: LABELS_MAGIC,
                ..
            })
        ));
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = pair(dir.path(), &[0; 8], &[1, 2]);
        let mut raw = fs::read(&ip).unwrap();
        raw.truncate(raw.len() - 1);
        fs::write(&ip, raw).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx(IdxError::Truncated {
                needed: 24,
                available: 23,
                ..
            })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_idx(dir.path().join("nope"), dir.path().join("nope2")).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::Io { .. })));
    }
}
