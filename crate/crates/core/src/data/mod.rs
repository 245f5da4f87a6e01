//! Datasets: IDX parsing, synthetic generators and batching.

mod idx;
mod synth;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use idx::{parse_idx, quantize, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};
pub use synth::{
    block_mnist, box_pattern, compose_block, stroke_templates, synth_digits, synth_spurious, BlockConfig, SpuriousConfig,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Labeled images stored row-major, one flattened `height × width` sample
/// per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Per-pixel flag marking the non-informative (null) region.
    pub masks: Option<Vec<bool>>,
    pub groups: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        height: usize,
        width: usize,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let n = height * width;
        if n == 0 || images.len() != labels.len() * n {
            return Err(Error::Shape(format!(
                "{} values for {} samples of {height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::ClassOutOfRange {
                class: bad,
                classes,
            });
        }
        Ok(Self {
            images,
            height,
            width,
            labels,
            classes,
            masks: None,
            groups: None,
        })
    }

    pub fn with_masks(mut self, masks: Vec<bool>) -> Result<Self> {
        if masks.len() != self.images.len() {
            return Err(Error::Shape(format!(
                "{} mask entries for {} pixels",
                masks.len(),
                self.images.len()
            )));
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} group ids for {} samples",
                groups.len(),
                self.len()
            )));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.features();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn mask(&self, i: usize) -> Option<&[bool]> {
        let n = self.features();
        self.masks.as_ref().map(|m| &m[i * n..(i + 1) * n])
    }

    /// `indices.len() × features` batch tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * self.features());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let x = Tensor::matrix(indices.len(), self.features(), data)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn all(&self) -> Result<(Tensor, Vec<usize>)> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n = self.features();
        let mut images = Vec::with_capacity(indices.len() * n);
        let mut masks = self.masks.as_ref().map(|_| Vec::with_capacity(indices.len() * n));
        for &i in indices {
            images.extend_from_slice(self.image(i));
            if let (Some(out), Some(m)) = (masks.as_mut(), self.mask(i)) {
                out.extend_from_slice(m);
            }
        }
        Dataset {
            images,
            height: self.height,
            width: self.width,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            masks,
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
        }
    }

    /// Writes `images.idx` and `labels.idx` (plus `masks.idx` and
    /// `groups.idx` when present) into `dir`. Pixel values are quantized
    /// to bytes.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, file: IdxFile| {
            let path = dir.join(name);
            fs::write(&path, file.to_bytes()).map_err(|e| Error::io(path, e))
        };
        let n = self.len();
        write(
            "images.idx",
            IdxFile::images(
                n,
                self.height,
                self.width,
                self.images.iter().map(|&v| quantize(v)).collect(),
            )?,
        )?;
        write("labels.idx", IdxFile::labels(to_bytes(&self.labels)?))?;
        if let Some(m) = &self.masks {
            let payload = m.iter().map(|&b| if b { 255 } else { 0 }).collect();
            write("masks.idx", IdxFile::images(n, self.height, self.width, payload)?)?;
        }
        if let Some(g) = &self.groups {
            write("groups.idx", IdxFile::labels(to_bytes(g)?))?;
        }
        Ok(())
    }

    /// Reads a dataset directory written by [`Dataset::save_dir`] or
    /// holding real MNIST-style IDX files.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Option<IdxFile>> {
            let path = dir.join(name);
            match fs::read(&path) {
                Ok(bytes) => IdxFile::parse(&bytes).map(Some),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::io(path, e)),
            }
        };
        let missing = |name: &str| {
            Error::io(
                dir.join(name),
                std::io::Error::new(std::io::ErrorKind::NotFound, "required dataset file missing"),
            )
        };
        let images = read("images.idx")?.ok_or_else(|| missing("images.idx"))?;
        let labels = read("labels.idx")?.ok_or_else(|| missing("labels.idx"))?;
        if !images.is_images() || labels.is_images() {
            return Err(Error::Malformed(
                "images.idx must hold 3-d images and labels.idx 1-d labels".into(),
            ));
        }
        let (count, height, width) = (images.dims[0], images.dims[1], images.dims[2]);
        if labels.dims[0] != count {
            return Err(Error::Malformed(format!(
                "{count} images but {} labels",
                labels.dims[0]
            )));
        }
        let label_values: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
        let classes = label_values.iter().max().map_or(1, |m| m + 1);
        let mut ds = Dataset::new(
            images.payload.iter().map(|&b| b as f64 / 255.0).collect(),
            height,
            width,
            label_values,
            classes,
        )?;
        if let Some(m) = read("masks.idx")? {
            if m.dims != images.dims {
                return Err(Error::Malformed(format!(
                    "masks dims {:?} differ from images {:?}",
                    m.dims, images.dims
                )));
            }
            ds = ds.with_masks(m.payload.iter().map(|&b| b != 0).collect())?;
        }
        if let Some(g) = read("groups.idx")? {
            ds = ds.with_groups(g.payload.iter().map(|&b| b as usize).collect())?;
        }
        Ok(ds)
    }
}

fn to_bytes(values: &[usize]) -> Result<Vec<u8>> {
    values
        .iter()
        .map(|&v| u8::try_from(v).map_err(|_| Error::Malformed(format!("value {v} exceeds a byte"))))
        .collect()
}

/// Shuffled index batches; the last batch may be short.
pub fn batches(len: usize, batch_size: usize, shuffle_seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
