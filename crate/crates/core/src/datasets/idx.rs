//! IDX binary ingestion (the MNIST container format).
//!
//! Images: big-endian magic `0x00000803`, then count, rows, cols as `u32`,
//! then one unsigned byte per pixel, scaled here to `[0, 1]`.
//! Labels: magic `0x00000801`, count, then one byte per label.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Counting<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Counting<R> {
    fn new(inner: R) -> Self {
        Counting { inner, offset: 0 }
    }

    fn read_u32(&mut self, path: &Path, what: &str) -> Result<u32> {
        let at = self.offset;
        let v = self.inner.read_u32::<BigEndian>().map_err(|_| {
            Error::format(path, format!("byte {at}"), format!("truncated while reading {what}"))
        })?;
        self.offset += 4;
        Ok(v)
    }

    fn read_exact(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| {
            Error::format(
                path,
                format!("byte {at}"),
                format!("truncated: expected {} more bytes of {what}", buf.len()),
            )
        })?;
        self.offset += buf.len();
        Ok(())
    }
}

/// Loads an IDX image/label pair as a dataset with clean labels. Pixels are
/// scaled to `[0, 1]`; the class count is the largest label plus one, floored
/// at two.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut imgs = Counting::new(BufReader::new(File::open(images_path)?));
    let magic = imgs.read_u32(images_path, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            images_path,
            "byte 0",
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = imgs.read_u32(images_path, "image count")? as usize;
    let rows = imgs.read_u32(images_path, "row count")? as usize;
    let cols = imgs.read_u32(images_path, "column count")? as usize;
    let dim = rows * cols;
    if n == 0 || dim == 0 {
        return Err(Error::format(
            images_path,
            "byte 4",
            format!("degenerate dimensions {n}x{rows}x{cols}"),
        ));
    }
    let mut pixels = vec![0u8; n * dim];
    imgs.read_exact(&mut pixels, images_path, "pixel data")?;

    let mut lbls = Counting::new(BufReader::new(File::open(labels_path)?));
    let magic = lbls.read_u32(labels_path, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            labels_path,
            "byte 0",
            format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let n_labels = lbls.read_u32(labels_path, "label count")? as usize;
    if n_labels != n {
        return Err(Error::format(
            labels_path,
            "byte 4",
            format!("{n_labels} labels for {n} images"),
        ));
    }
    let mut label_bytes = vec![0u8; n];
    lbls.read_exact(&mut label_bytes, labels_path, "label data")?;

    let data: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let features = Matrix::from_vec(n, dim, data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, classes.max(2))?.with_clean_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::{BigEndian, WriteBytesExt};
    use std::io::Write as _;

    fn write_images(path: &Path, n: u32, rows: u32, cols: u32, pixels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
        f.write_u32::<BigEndian>(n).unwrap();
        f.write_u32::<BigEndian>(rows).unwrap();
        f.write_u32::<BigEndian>(cols).unwrap();
        f.write_all(pixels).unwrap();
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
        f.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn single_pixel_fixture_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        write_images(&img, 1, 1, 1, &[255]);
        write_labels(&lbl, &[1]);
        let ds = load_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.instance(0), &[1.0]);
        assert_eq!(ds.clean_labels().unwrap(), &[1]);
    }

    #[test]
    fn truncated_file_names_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        write_images(&img, 2, 2, 2, &[0; 5]); // needs 8 pixel bytes
        write_labels(&lbl, &[0, 1]);
        let err = load_idx(&img, &lbl).unwrap_err();
        match err {
            Error::Format { at, msg, .. } => {
                assert_eq!(at, "byte 16");
                assert!(msg.contains("8 more bytes"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        {
            let mut f = File::create(&img).unwrap();
            f.write_u32::<BigEndian>(0xdead_beef).unwrap();
        }
        write_labels(&lbl, &[0]);
        assert!(matches!(
            load_idx(&img, &lbl),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        write_images(&img, 2, 1, 1, &[10, 20]);
        write_labels(&lbl, &[1]);
        assert!(matches!(load_idx(&img, &lbl), Err(Error::Format { .. })));
    }
}
