//! IDX ingestion and the grouped minibatch sampler.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for 3-D `u8`
//! images, `0x00000801` for 1-D `u8` labels), one `u32` per dimension, then
//! the raw bytes. Gzip-compressed files are detected by their `1f 8b` prefix.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IdxError, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Canonical file names under a data directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte.gz";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte.gz";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte.gz";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte.gz";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Decoded images (row-major `u8`) and their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

fn gunzip_if_needed(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| IdxError::Truncated { offset: bytes.len(), needed: offset + 4 - bytes.len().min(offset + 4) })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::WrongMagic { found, expected });
    }
    Ok(())
}

/// Parse an (uncompressed) IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), IdxError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(IdxError::Dimensions { offset: 8, detail: format!("{rows}x{cols} images") });
    }
    let needed = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < needed {
        return Err(IdxError::Truncated { offset: bytes.len(), needed: needed - body.len() });
    }
    if body.len() > needed {
        return Err(IdxError::Dimensions {
            offset: 16 + needed,
            detail: format!("{} trailing bytes after {count} images", body.len() - needed),
        });
    }
    Ok((count, rows, cols, body.to_vec()))
}

/// Parse an (uncompressed) IDX label file, requiring every label `< 10`.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(IdxError::Truncated { offset: bytes.len(), needed: count - body.len() });
    }
    if body.len() > count {
        return Err(IdxError::Dimensions {
            offset: 8 + count,
            detail: format!("{} trailing bytes after {count} labels", body.len() - count),
        });
    }
    if let Some(i) = body.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(IdxError::LabelRange { label: body[i], offset: 8 + i });
    }
    Ok(body.to_vec())
}

/// Encode images as an IDX byte stream (uncompressed).
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

impl ImageSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || pixels.len() % (rows * cols) != 0 {
            return Err(Error::Shape(format!("{} pixels do not tile {rows}x{cols} images", pixels.len())));
        }
        let images = pixels.len() / (rows * cols);
        if images != labels.len() {
            return Err(IdxError::CountMismatch { images, labels: labels.len() }.into());
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(IdxError::LabelRange { label: labels[i], offset: i }.into());
        }
        Ok(Self { rows, cols, pixels, labels })
    }

    /// Read a pair of IDX files, gzip or raw.
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let img = gunzip_if_needed(fs::read(images_path)?)?;
        let lab = gunzip_if_needed(fs::read(labels_path)?)?;
        let (count, rows, cols, pixels) = parse_images(&img)?;
        let labels = parse_labels(&lab)?;
        if count != labels.len() {
            return Err(IdxError::CountMismatch { images: count, labels: labels.len() }.into());
        }
        Self::new(rows, cols, pixels, labels)
    }

    /// Load one split from a directory holding the canonical file names.
    pub fn load_split(dir: &Path, split: Split) -> Result<Self> {
        let (i, l) = match split {
            Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
            Split::Test => (TEST_IMAGES, TEST_LABELS),
        };
        Self::load(&dir.join(i), &dir.join(l))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..(index + 1) * n]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.rows * self.cols);
        for &i in indices {
            pixels.extend_from_slice(self.pixels(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self { rows: self.rows, cols: self.cols, pixels, labels }
    }

    /// A seeded random subset of `count` images (all of them if `count`
    /// is at least the set size).
    pub fn subset(&self, count: usize, seed: u64) -> Self {
        if count >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(count);
        self.select(&idx)
    }

    /// Images at `indices` scaled to `[0, 1]`, shaped `[indices.len(), rows, cols]`.
    pub fn normalized(&self, indices: &[usize]) -> Tensor<f32> {
        let n = self.rows * self.cols;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.pixels(i).iter().map(|&p| p as f32 / 255.0));
        }
        Tensor::new(vec![indices.len(), self.rows, self.cols], data).expect("consistent image size")
    }

    /// Pixel batch `[B, K, rows, cols]` and labels `[B][K]` for grouped indices.
    pub fn grouped(&self, groups: &[Vec<usize>]) -> Result<(Tensor<f32>, Vec<Vec<usize>>)> {
        let k = groups.first().map_or(0, Vec::len);
        if k == 0 || groups.iter().any(|g| g.len() != k) {
            return Err(Error::Input("groups must be non-empty and of equal size".into()));
        }
        let flat: Vec<usize> = groups.iter().flatten().copied().collect();
        let images = self.normalized(&flat).reshape(&[groups.len(), k, self.rows, self.cols])?;
        let labels = groups.iter().map(|g| g.iter().map(|&i| self.label(i)).collect()).collect();
        Ok((images, labels))
    }

    /// Consecutive, non-overlapping groups of `k` in index order; trailing
    /// images that do not fill a group are left out.
    pub fn sequential_groups(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        if k == 0 {
            return Err(Error::Config("group size K must be at least 1".into()));
        }
        Ok((0..self.len() / k).map(|g| (g * k..(g + 1) * k).collect()).collect())
    }
}

/// One epoch of grouped minibatches over a set of `set_len` images.
///
/// The indices are shuffled with `seed`, cut into disjoint groups of `k` and
/// the groups into batches of `batch_size`. Images that do not fill a final
/// group are dropped; a final short batch is kept, so a set smaller than one
/// full batch yields a single batch.
pub fn sample_epoch(set_len: usize, k: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<Vec<usize>>>> {
    if k == 0 {
        return Err(Error::Config("group size K must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if k > set_len {
        return Err(Error::Config(format!("a group of {k} images needs more than the {set_len} available")));
    }
    let mut idx: Vec<usize> = (0..set_len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let groups: Vec<Vec<usize>> = idx.chunks_exact(k).map(<[usize]>::to_vec).collect();
    Ok(groups.chunks(batch_size).map(<[Vec<usize>]>::to_vec).collect())
}
