//! Datasets: file formats, synthesis, augmentation, and the mixing
//! schedule for training on several domains at once.

pub mod augment;
pub mod glyphs;
pub mod idx;
pub mod pairs;
pub mod png_dir;

pub use augment::Augment;
pub use glyphs::GlyphFamily;
pub use pairs::{PairSet, PairStyle};

use std::path::Path;

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// A labelled image collection from one domain.
#[derive(Debug, Clone)]
pub struct Dataset<E: Scalar> {
    pub name: String,
    pub images: Vec<Tensor<E>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<E: Scalar> Dataset<E> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Check internal consistency: matching lengths, uniform image
    /// shapes, labels inside the class range.
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Data(format!(
                "dataset {}: {} images but {} labels",
                self.name,
                self.images.len(),
                self.labels.len()
            )));
        }
        if self.classes == 0 {
            return Err(Error::Data(format!("dataset {}: zero classes", self.name)));
        }
        if let Some(first) = self.images.first() {
            for img in &self.images {
                if img.shape() != first.shape() {
                    return Err(Error::Data(format!(
                        "dataset {}: mixed image shapes {:?} and {:?}",
                        self.name,
                        first.shape(),
                        img.shape()
                    )));
                }
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Data(format!(
                "dataset {}: label {bad} outside {} classes",
                self.name, self.classes
            )));
        }
        Ok(())
    }

    /// The first `n` samples (or all of them if fewer).
    pub fn take(&self, n: usize) -> Dataset<E> {
        let n = n.min(self.len());
        Dataset {
            name: self.name.clone(),
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Load the train and test splits from a directory holding the four
    /// standard IDX files.
    pub fn load_dir(dir: &Path, name: impl Into<String>) -> Result<(Dataset<E>, Dataset<E>)> {
        let name = name.into();
        let load = |images: &str, labels: &str, split: &str| -> Result<Dataset<E>> {
            let images = idx::load_images(&dir.join(images))?;
            let labels = idx::load_labels(&dir.join(labels))?;
            let classes = labels.iter().max().map_or(0, |&m| m + 1);
            let set = Dataset { name: format!("{name}/{split}"), images, labels, classes };
            set.validate()?;
            Ok(set)
        };
        let mut train = load(idx::TRAIN_IMAGES, idx::TRAIN_LABELS, "train")?;
        let mut test = load(idx::TEST_IMAGES, idx::TEST_LABELS, "test")?;
        let classes = train.classes.max(test.classes);
        train.classes = classes;
        test.classes = classes;
        Ok((train, test))
    }
}

/// One-hot target vector for a label.
pub fn one_hot<E: Scalar>(label: usize, classes: usize) -> Tensor<E> {
    Tensor::from_fn(vec![classes], |i| if i == label { E::one() } else { E::zero() })
}

/// Mixing schedule over several domains: each domain is cut into chunks
/// of `ceil(len * fraction)` consecutive samples and the chunks are
/// dealt round-robin, so every stretch of training sees every domain.
/// Returns (domain, position) pairs covering every sample once.
pub fn interleave(lens: &[usize], fraction: f64) -> Result<Vec<(usize, usize)>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("mixing fraction {fraction} outside (0, 1]")));
    }
    let chunks: Vec<usize> = lens
        .iter()
        .map(|&len| (((len as f64) * fraction).ceil() as usize).max(1))
        .collect();
    let total: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(total);
    let mut cursor = vec![0usize; lens.len()];
    while out.len() < total {
        for d in 0..lens.len() {
            let end = (cursor[d] + chunks[d]).min(lens[d]);
            for i in cursor[d]..end {
                out.push((d, i));
            }
            cursor[d] = end;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_places_the_single_one() {
        let t = one_hot::<f32>(2, 4);
        assert_eq!(t.values(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn interleave_alternates_fixed_blocks() {
        let plan = interleave(&[100, 100], 0.05).unwrap();
        assert_eq!(plan.len(), 200);
        for (k, chunk) in plan.chunks(5).enumerate() {
            let domain = k % 2;
            let base = (k / 2) * 5;
            for (j, &(d, i)) in chunk.iter().enumerate() {
                assert_eq!(d, domain, "chunk {k}");
                assert_eq!(i, base + j, "chunk {k}");
            }
        }
    }

    #[test]
    fn interleave_covers_unequal_domains_exactly_once() {
        let plan = interleave(&[7, 23, 3], 0.2).unwrap();
        assert_eq!(plan.len(), 33);
        let mut seen = vec![vec![false; 7], vec![false; 23], vec![false; 3]];
        for (d, i) in plan {
            assert!(!seen[d][i], "sample ({d}, {i}) repeated");
            seen[d][i] = true;
        }
        assert!(seen.iter().flatten().all(|&s| s));
    }

    #[test]
    fn interleave_rejects_bad_fractions() {
        assert!(interleave(&[10], 0.0).is_err());
        assert!(interleave(&[10], 1.5).is_err());
    }

    #[test]
    fn validate_catches_label_range_and_shape_mix() {
        let mut set = Dataset::<f32> {
            name: "t".into(),
            images: vec![Tensor::zeros(vec![1, 2, 2]), Tensor::zeros(vec![1, 2, 2])],
            labels: vec![0, 1],
            classes: 2,
        };
        assert!(set.validate().is_ok());
        set.labels[1] = 2;
        assert!(set.validate().is_err());
        set.labels[1] = 1;
        set.images[1] = Tensor::zeros(vec![1, 3, 3]);
        assert!(set.validate().is_err());
    }
}
