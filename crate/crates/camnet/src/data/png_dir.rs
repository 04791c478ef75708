//! Datasets stored as one directory per class of PNG files.
//!
//! The tree looks like `root/<class>/<image>.png`. Class directories are
//! ordered by name and indexed from zero; files inside a class are also
//! taken in name order, so the same tree always loads in the same order.

use std::path::Path;

use crate::data::Dataset;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Load a class-per-directory PNG tree as grayscale images.
pub fn load_tree<E: Scalar>(root: &Path, name: impl Into<String>) -> Result<Dataset<E>> {
    let name = name.into();
    let mut class_dirs = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            class_dirs.push(path);
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }
    class_dirs.sort();

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        let mut files = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                files.push(path);
            }
        }
        files.sort();
        for file in files {
            let img = image::open(&file)
                .map_err(|e| Error::format(&file, format!("png decode: {e}")))?
                .to_luma8();
            let (w, h) = img.dimensions();
            let raw = img.into_raw();
            let values =
                raw.iter().map(|&b| E::from_f64(b as f64 / 255.0)).collect();
            images.push(Tensor::new(vec![1, h as usize, w as usize], values)?);
            labels.push(class);
        }
    }
    let set = Dataset { name, images, labels, classes: class_dirs.len() };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn write_png(path: &Path, w: u32, h: u32, level: u8) {
        let img = GrayImage::from_pixel(w, h, Luma([level]));
        img.save(path).unwrap();
    }

    #[test]
    fn tree_loads_in_name_order_with_class_indices() {
        let dir = tempfile::tempdir().unwrap();
        for (class, level) in [("a_first", 10u8), ("b_second", 200u8)] {
            let sub = dir.path().join(class);
            std::fs::create_dir(&sub).unwrap();
            write_png(&sub.join("z.png"), 4, 4, level);
            write_png(&sub.join("a.png"), 4, 4, level / 2);
        }
        let set = load_tree::<f32>(dir.path(), "tree").unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.classes, 2);
        assert_eq!(set.labels, vec![0, 0, 1, 1]);
        assert!((set.images[0].values()[0] - 5.0 / 255.0).abs() < 1e-6);
        assert!((set.images[2].values()[0] - 100.0 / 255.0).abs() < 1e-6);
        assert!((set.images[3].values()[0] - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn mixed_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("only");
        std::fs::create_dir(&sub).unwrap();
        write_png(&sub.join("a.png"), 4, 4, 1);
        write_png(&sub.join("b.png"), 5, 4, 1);
        assert!(load_tree::<f32>(dir.path(), "tree").is_err());
    }

    #[test]
    fn empty_root_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_tree::<f32>(dir.path(), "tree").is_err());
    }
}
