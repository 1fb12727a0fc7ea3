use super::image::ImageTensor;
use crate::error::{Error, Result};

/// Random-access image source addressed by record id.
pub trait Dataset: Send + Sync {
    fn name(&self) -> &str;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// `(height, width)` every record is delivered at.
    fn resolution(&self) -> (usize, usize);
    fn image(&self, id: usize) -> Result<ImageTensor>;
    fn label(&self, id: usize) -> Option<usize>;
    fn num_classes(&self) -> Option<usize>;

    fn images(&self, ids: &[usize]) -> Result<Vec<ImageTensor>> {
        ids.iter().map(|&id| self.image(id)).collect()
    }

    /// Labels for `ids`, failing on the first unlabeled record.
    fn labels(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter().map(|&id| self.label(id).ok_or(Error::MissingLabel(id))).collect()
    }
}

/// 8-bit RGB images held in memory at a fixed resolution.
#[derive(Clone, Debug)]
pub struct InMemoryDataset {
    name: String,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
}

impl InMemoryDataset {
    pub fn new(
        name: impl Into<String>,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let per = height * width * 3;
        if per == 0 || pixels.len() % per != 0 {
            return Err(Error::Dataset(format!("pixel buffer of {} bytes is not a multiple of {per}", pixels.len())));
        }
        let len = pixels.len() / per;
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(Error::Dataset(format!("{} labels for {len} images", l.len())));
            }
        }
        let num_classes = labels.as_ref().and_then(|l| l.iter().max().map(|m| m + 1));
        Ok(Self { name: name.into(), height, width, pixels, labels, num_classes })
    }

    /// Builds a dataset from arbitrary images, resizing each to `height x width`.
    pub fn from_images(
        name: impl Into<String>,
        images: &[ImageTensor],
        labels: Option<Vec<usize>>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(images.len() * height * width * 3);
        for img in images {
            pixels.extend(img.clone().into_rgb().resize_bilinear(height, width).to_u8());
        }
        Self::new(name, height, width, pixels, labels)
    }

    /// Concatenates two datasets with the same resolution.
    pub fn concat(name: impl Into<String>, a: Self, b: Self) -> Result<Self> {
        if (a.height, a.width) != (b.height, b.width) {
            return Err(Error::Dataset("cannot concatenate datasets of different resolution".into()));
        }
        let labels = match (a.labels, b.labels) {
            (Some(mut x), Some(y)) => {
                x.extend(y);
                Some(x)
            }
            _ => None,
        };
        let mut pixels = a.pixels;
        pixels.extend(b.pixels);
        Self::new(name, a.height, a.width, pixels, labels)
    }
}

impl Dataset for InMemoryDataset {
    fn name(&self) -> &str {
        &self.name
    }

    fn len(&self) -> usize {
        self.pixels.len() / (self.height * self.width * 3)
    }

    fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn image(&self, id: usize) -> Result<ImageTensor> {
        if id >= self.len() {
            return Err(Error::Dataset(format!("record {id} out of range for `{}` ({} records)", self.name, self.len())));
        }
        let per = self.height * self.width * 3;
        ImageTensor::from_u8(self.height, self.width, 3, &self.pixels[id * per..(id + 1) * per])
    }

    fn label(&self, id: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.get(id).copied())
    }

    fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }
}
