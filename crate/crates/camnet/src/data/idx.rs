//! IDX image and label files, the format MNIST-style corpora ship in.
//!
//! Images use magic `0x00000803` (unsigned bytes, three dimensions) and
//! labels `0x00000801`; the header and dimension sizes are big-endian.
//! Pixels load as values in `[0, 1]` and save back byte-exactly.

use std::fs;
use std::path::Path;

use crate::tensor::{Scalar, Tensor};
use crate::util::ByteReader;
use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Standard file names inside a dataset directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Load an IDX image file as one `[1, h, w]` tensor per image.
pub fn load_images<E: Scalar>(path: &Path) -> Result<Vec<Tensor<E>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.u32_be().ok_or_else(|| Error::format(path, "truncated header"))?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            path,
            format!("magic {magic:#010x}, want {IMAGE_MAGIC:#010x} for images"),
        ));
    }
    let n = r.u32_be().ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    let h = r.u32_be().ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    let w = r.u32_be().ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format(path, format!("degenerate image size {h}x{w}")));
    }
    let want = n * h * w;
    if r.remaining() != want {
        return Err(Error::format(
            path,
            format!("{} data bytes, want {want} for {n} images of {h}x{w}", r.remaining()),
        ));
    }
    let data = r.take(want).unwrap();
    let scale = E::from_f64(1.0 / 255.0);
    data.chunks_exact(h * w)
        .map(|px| {
            let values = px.iter().map(|&b| E::from_f64(b as f64) * scale).collect();
            Tensor::new(vec![1, h, w], values)
        })
        .collect()
}

/// Load an IDX label file.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.u32_be().ok_or_else(|| Error::format(path, "truncated header"))?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            path,
            format!("magic {magic:#010x}, want {LABEL_MAGIC:#010x} for labels"),
        ));
    }
    let n = r.u32_be().ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    if r.remaining() != n {
        return Err(Error::format(
            path,
            format!("{} data bytes, want {n} labels", r.remaining()),
        ));
    }
    Ok(r.take(n).unwrap().iter().map(|&b| b as usize).collect())
}

/// Save `[1, h, w]` tensors as an IDX image file, quantising to bytes.
pub fn save_images<E: Scalar>(path: &Path, images: &[Tensor<E>]) -> Result<()> {
    let Some(first) = images.first() else {
        return Err(Error::Data("no images to save".into()));
    };
    let [c, h, w] = first.shape() else {
        return Err(Error::Shape(format!("image shape {:?}, want [1, h, w]", first.shape())));
    };
    let (c, h, w) = (*c, *h, *w);
    if c != 1 {
        return Err(Error::Shape(format!("{c} channels, IDX images are single-channel")));
    }
    let mut out = Vec::with_capacity(16 + images.len() * h * w);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "mixed image shapes {:?} and {:?}",
                first.shape(),
                img.shape()
            )));
        }
        for &v in img.values() {
            let b = (Scalar::to_f64(v) * 255.0).round().clamp(0.0, 255.0) as u8;
            out.push(b);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Save labels as an IDX label file.
pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if l > 255 {
            return Err(Error::Data(format!("label {l} does not fit in a byte")));
        }
        out.push(l as u8);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_images() -> Vec<Tensor<f32>> {
        (0..3)
            .map(|i| {
                Tensor::from_fn(vec![1, 4, 5], |p| ((p * 7 + i * 13) % 256) as f32 / 255.0)
            })
            .collect()
    }

    #[test]
    fn images_round_trip_byte_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(TRAIN_IMAGES);
        let images = sample_images();
        save_images(&path, &images).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_images::<f32>(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[0].shape(), &[1, 4, 5]);
        save_images(&path, &loaded).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(TRAIN_LABELS);
        let labels = vec![0, 1, 9, 255, 7];
        save_labels(&path, &labels).unwrap();
        assert_eq!(load_labels(&path).unwrap(), labels);
        assert!(save_labels(&path, &[300]).is_err());
    }

    #[test]
    fn header_layout_is_big_endian() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("imgs");
        save_images(&path, &sample_images()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &[0, 0, 0, 3]);
        assert_eq!(&bytes[8..12], &[0, 0, 0, 4]);
        assert_eq!(&bytes[12..16], &[0, 0, 0, 5]);
        assert_eq!(bytes.len(), 16 + 3 * 4 * 5);
    }

    #[test]
    fn wrong_magic_and_truncation_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad");
        std::fs::write(&path, [0, 0, 8, 1, 0, 0, 0, 1, 42]).unwrap();
        assert!(load_images::<f32>(&path).is_err());
        assert!(load_labels(&path).is_ok());

        std::fs::write(&path, [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3]).unwrap();
        let err = load_images::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("data bytes"), "{err}");
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_labels(Path::new("/nonexistent/labels")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/labels"));
    }
}
