//! Labeled image datasets: the striped-texture generator, PNG directory I/O,
//! stratified splitting and the LBP texture descriptor.

mod io;
mod lbp;
mod split;
mod stripes;

pub use io::{load_image_dir, write_image_dir};
pub use lbp::{lbp_features, lbp_matrix, LBP_BINS};
pub use split::{split, split_indices, SplitIndices};
pub use stripes::{gen_gaussian_stripes, gen_gaussian_stripes_with, ClassStripes, StripeSpec};

use crate::error::{Error, Result};
use crate::tensor::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    /// Provenance of each image (file path or generator tag).
    pub names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, names: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != names.len() {
            return Err(Error::Data(format!(
                "{} images, {} labels, {} names",
                images.len(),
                labels.len(),
                names.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!("label {l} but only {} classes", class_names.len())));
        }
        if let Some(img) = images.iter().find(|im| im.data.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::Data(format!("pixel outside [0, 1] in a {}x{} image", img.height, img.width)));
        }
        Ok(Self {
            images,
            labels,
            names,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_refs(&self) -> Vec<&Image> {
        self.images.iter().collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }

    /// Channel count shared by every image.
    pub fn channels(&self) -> Result<usize> {
        let c = self.images.first().ok_or_else(|| Error::Data("empty dataset".into()))?.channels;
        if self.images.iter().any(|im| im.channels != c) {
            return Err(Error::Data("images have differing channel counts".into()));
        }
        Ok(c)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}
