//! Big-endian IDX files (MNIST layout).

use std::path::Path;

use crate::error::IdxError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn need(path: &Path, bytes: &[u8], needed: usize) -> Result<(), IdxError> {
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            needed,
        });
    }
    Ok(())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    need(path, bytes, 4)?;
    let found = read_u32(bytes, 0);
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parses an image file into `(rows, row_width, pixels / 255)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), IdxError> {
    check_magic(path, bytes, IMAGES_MAGIC)?;
    need(path, bytes, 16)?;
    let count = read_u32(bytes, 4) as usize;
    let width = read_u32(bytes, 8) as usize * read_u32(bytes, 12) as usize;
    need(path, bytes, 16 + count * width)?;
    let pixels = bytes[16..16 + count * width]
        .iter()
        .map(|&p| p as f64 / 255.0)
        .collect();
    Ok((count, width, pixels))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    check_magic(path, bytes, LABELS_MAGIC)?;
    need(path, bytes, 8)?;
    let count = read_u32(bytes, 4) as usize;
    need(path, bytes, 8 + count)?;
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair. Returns the row-major feature matrix, its
/// width and the labels.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
) -> Result<(Vec<f64>, usize, Vec<usize>), IdxError> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| IdxError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let (count, width, pixels) = parse_idx_images(images_path, &read(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read(labels_path)?)?;
    if labels.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    Ok((pixels, width, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(count: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(fill, (count * rows * cols) as usize));
        b
    }

    fn labels(ls: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(ls.len() as u32).to_be_bytes());
        b.extend_from_slice(ls);
        b
    }

    #[test]
    fn parses_and_scales() {
        let p = Path::new("x");
        let (n, w, px) = parse_idx_images(p, &images(3, 2, 2, 255)).unwrap();
        assert_eq!((n, w), (3, 4));
        assert!(px.iter().all(|&v| v == 1.0));
        assert_eq!(parse_idx_labels(p, &labels(&[1, 9, 0])).unwrap(), vec![1, 9, 0]);
    }

    #[test]
    fn wrong_magic() {
        let mut b = labels(&[1]);
        b[3] = 0x03;
        assert!(matches!(
            parse_idx_labels(Path::new("l"), &b),
            Err(IdxError::BadMagic { found: 0x803, .. })
        ));
    }

    #[test]
    fn truncated_after_header() {
        let b = images(5, 28, 28, 0);
        assert!(matches!(
            parse_idx_images(Path::new("i"), &b[..16]),
            Err(IdxError::Truncated { len: 16, .. })
        ));
        assert!(matches!(
            parse_idx_images(Path::new("i"), &b[..10]),
            Err(IdxError::Truncated { .. })
        ));
    }

    #[test]
    fn count_mismatch_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        std::fs::write(&ip, images(3, 2, 2, 10)).unwrap();
        std::fs::write(&lp, labels(&[1, 2])).unwrap();
        assert!(matches!(
            load_mnist_idx(&ip, &lp),
            Err(IdxError::CountMismatch { images: 3, labels: 2 })
        ));
    }
}
