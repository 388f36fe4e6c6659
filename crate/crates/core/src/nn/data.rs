use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled samples stored as one `(n, ...sample_shape)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().is_empty() {
            return Err(Error::invalid(
                "dataset images need a leading sample dimension",
            ));
        }
        if labels.len() != images.rows() {
            return Err(Error::shape(
                "dataset labels",
                &[images.rows()],
                &[labels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Gather samples into a batch tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let rows: Vec<&[f32]> = indices.iter().map(|&i| self.image(i)).collect();
        let t = Tensor::stack(self.sample_shape(), &rows).expect("uniform samples");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let (images, labels) = self.batch(indices);
        Self {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Replace every image by `f(index, image)`; the shape must be preserved.
    pub fn map_images(&self, mut f: impl FnMut(usize, &[f32]) -> Vec<f32>) -> Result<Self> {
        let w = self.images.row_len();
        let mut data = Vec::with_capacity(self.images.len());
        for i in 0..self.len() {
            let out = f(i, self.image(i));
            if out.len() != w {
                return Err(Error::shape("mapped image", &[w], &[out.len()]));
            }
            data.extend(out);
        }
        Ok(Self {
            images: Tensor::new(self.images.shape().to_vec(), data)?,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }

    /// Split into consecutive chunks of at most `size` samples.
    pub fn chunks(&self, size: usize) -> Vec<Dataset> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(size.max(1)).map(|c| self.subset(c)).collect()
    }
}
