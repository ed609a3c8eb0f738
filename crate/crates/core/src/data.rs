//! MNIST ingestion, normalization, class encoding and the group split.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PlmError, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 75;
pub const NUM_GROUPS: usize = 3;
pub const GROUP_SIZE: usize = NUM_CLASSES / NUM_GROUPS;

pub const IDX3_MAGIC: u32 = 2051;
pub const IDX3_HEADER_LEN: usize = 16;

/// File name of the MNIST training images inside an MNIST directory.
pub const TRAIN_IMAGES_FILE: &str = "train-images-idx3-ubyte";

/// One digit's pixels, row-major, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector(Vec<f64>);

impl ImageVector {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_LEN {
            return Err(PlmError::shape(format!(
                "image vector must have {IMAGE_LEN} entries, got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(PlmError::Numeric("image contains non-finite pixels".into()));
        }
        Ok(Self(pixels))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ImageVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn read_be_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// Reads the first `count` 28x28 images from an IDX3 file, in file order.
pub fn load_idx_images(path: impl AsRef<Path>, count: usize) -> Result<Vec<Vec<u8>>> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let magic = read_be_u32(&mut r)?;
    if magic != IDX3_MAGIC {
        return Err(PlmError::format(format!(
            "bad IDX3 magic {magic}, expected {IDX3_MAGIC}"
        )));
    }
    let available = read_be_u32(&mut r)? as usize;
    let rows = read_be_u32(&mut r)? as usize;
    let cols = read_be_u32(&mut r)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(PlmError::format(format!(
            "expected {IMAGE_SIDE}x{IMAGE_SIDE} images, file has {rows}x{cols}"
        )));
    }
    if count == 0 || count > available {
        return Err(PlmError::range(format!(
            "requested {count} images, file holds {available}"
        )));
    }
    let mut payload = vec![0u8; count * IMAGE_LEN];
    r.read_exact(&mut payload)?;
    Ok(payload.chunks_exact(IMAGE_LEN).map(<[u8]>::to_vec).collect())
}

/// Row-major flattening with each byte scaled into `[0, 1]`.
pub fn vectorize(raw: &[u8]) -> Result<ImageVector> {
    if raw.len() != IMAGE_LEN {
        return Err(PlmError::shape(format!(
            "raw image must have {IMAGE_LEN} bytes, got {}",
            raw.len()
        )));
    }
    ImageVector::new(raw.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Subtracts the vector's own mean from every element.
pub fn zero_mean(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

pub fn one_hot(class: usize, width: usize) -> Result<Vec<f64>> {
    if class >= width {
        return Err(PlmError::range(format!("class {class} outside 0..{width}")));
    }
    let mut v = vec![0.0; width];
    v[class] = 1.0;
    Ok(v)
}

/// The first 75 training digits; class `i` is image `i`.
///
/// Every image access goes through [`Dataset75::image`], which counts reads.
/// The counter lets callers verify that perpetual training never touches
/// the original images.
#[derive(Debug)]
pub struct Dataset75 {
    images: Vec<ImageVector>,
    reads: AtomicU64,
}

impl Clone for Dataset75 {
    fn clone(&self) -> Self {
        Self {
            images: self.images.clone(),
            reads: AtomicU64::new(self.reads()),
        }
    }
}

impl Dataset75 {
    pub fn new(images: Vec<ImageVector>) -> Result<Self> {
        if images.len() != NUM_CLASSES {
            return Err(PlmError::shape(format!(
                "dataset needs exactly {NUM_CLASSES} images, got {}",
                images.len()
            )));
        }
        Ok(Self {
            images,
            reads: AtomicU64::new(0),
        })
    }

    pub fn from_idx(path: impl AsRef<Path>) -> Result<Self> {
        let raw = load_idx_images(path, NUM_CLASSES)?;
        Self::new(raw.iter().map(|r| vectorize(r)).collect::<Result<_>>()?)
    }

    /// Loads `train-images-idx3-ubyte` from an MNIST directory.
    pub fn from_mnist_dir(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_idx(dir.as_ref().join(TRAIN_IMAGES_FILE))
    }

    pub fn image(&self, class: usize) -> &ImageVector {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.images[class]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Number of image reads so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

/// Random partition of the 75 classes into three groups of 25.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    group_of: Vec<u8>,
    members: [Vec<usize>; NUM_GROUPS],
    seed: u64,
}

/// Seeded shuffle of `0..75`: first 25 form group 1, next 25 group 2, last 25 group 3.
pub fn split_groups(seed: u64) -> GroupAssignment {
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut group_of = vec![0u8; NUM_CLASSES];
    let mut members: [Vec<usize>; NUM_GROUPS] = Default::default();
    for (pos, &class) in order.iter().enumerate() {
        let g = pos / GROUP_SIZE;
        group_of[class] = g as u8 + 1;
        members[g].push(class);
    }
    for m in &mut members {
        m.sort_unstable();
    }
    GroupAssignment {
        group_of,
        members,
        seed,
    }
}

impl GroupAssignment {
    /// Group id (1..=3) of a class.
    pub fn group_of(&self, class: usize) -> usize {
        self.group_of[class] as usize
    }

    /// Sorted class ids of group `group` (1..=3).
    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group - 1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Writes a binary PGM (P5), 28x28, maxval 255. Values are clamped to
/// `[0, 1]`, scaled by 255 and rounded.
pub fn export_image_pgm(v: &[f64], path: impl AsRef<Path>) -> Result<()> {
    if v.len() != IMAGE_LEN {
        return Err(PlmError::shape("PGM export needs a 784-entry image"));
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(w, "P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n")?;
    let bytes: Vec<u8> = v
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads back a 28x28 binary PGM written by [`export_image_pgm`], returning raw bytes.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut buf)?;
    let header = format!("P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n");
    let payload = buf
        .strip_prefix(header.as_bytes())
        .ok_or_else(|| PlmError::format("not a 28x28 P5 PGM with maxval 255"))?;
    if payload.len() != IMAGE_LEN {
        return Err(PlmError::format(format!(
            "PGM payload has {} bytes, expected {IMAGE_LEN}",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectorize_examples() {
        assert!(vectorize(&[0u8; IMAGE_LEN])
            .unwrap()
            .as_slice()
            .iter()
            .all(|&p| p == 0.0));
        let mut raw = vec![0u8; IMAGE_LEN];
        raw[0] = 255;
        raw[1] = 51;
        raw[28 * 3 + 5] = 17;
        let v = vectorize(&raw).unwrap();
        assert_eq!(v.as_slice()[0], 1.0);
        assert_eq!(v.as_slice()[1], 0.2);
        assert_eq!(v.as_slice()[28 * 3 + 5], 17.0 / 255.0);
        assert!(vectorize(&[0u8; 10]).is_err());
    }

    #[test]
    fn zero_mean_examples() {
        assert_eq!(zero_mean(&[0.0, 1.0]), vec![-0.5, 0.5]);
        assert!(zero_mean(&[0.7; 784]).iter().all(|x| x.abs() < 1e-12));
        assert!(zero_mean(&[0.5; 784]).iter().all(|&x| x == 0.0));
        let v: Vec<f64> = (0..784).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let once = zero_mean(&v);
        let twice = zero_mean(&once);
        assert!(once.iter().sum::<f64>().abs() / 784.0 < 1e-12);
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn one_hot_examples() {
        let v = one_hot(0, 75).unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert_eq!(one_hot(74, 75).unwrap()[74], 1.0);
        assert!(matches!(one_hot(75, 75), Err(PlmError::Range(_))));
    }

    #[test]
    fn split_is_a_partition() {
        for seed in 0..50 {
            let g = split_groups(seed);
            let mut seen = vec![false; NUM_CLASSES];
            for group in 1..=3 {
                assert_eq!(g.members(group).len(), GROUP_SIZE);
                for &c in g.members(group) {
                    assert!(!seen[c]);
                    seen[c] = true;
                    assert_eq!(g.group_of(c), group);
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
        assert_eq!(split_groups(3), split_groups(3));
        assert_ne!(split_groups(3).members(1), split_groups(4).members(1));
    }

    #[test]
    fn dataset_counts_reads() {
        let images = (0..NUM_CLASSES)
            .map(|_| ImageVector::new(vec![0.0; IMAGE_LEN]).unwrap())
            .collect();
        let d = Dataset75::new(images).unwrap();
        assert_eq!(d.reads(), 0);
        let _ = d.image(3);
        let _ = d.image(4);
        assert_eq!(d.reads(), 2);
        assert!(Dataset75::new(Vec::new()).is_err());
    }

    #[test]
    fn pgm_clamps_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let mut v = vec![0.0; IMAGE_LEN];
        v[0] = 1.0;
        v[1] = -0.2;
        v[2] = 0.5;
        v[3] = 1.7;
        export_image_pgm(&v, &path).unwrap();
        let raw = read_pgm(&path).unwrap();
        assert_eq!(&raw[..4], &[255, 0, 128, 255]);
        assert!(raw[4..].iter().all(|&b| b == 0));
    }
}
