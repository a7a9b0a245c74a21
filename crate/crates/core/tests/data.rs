//! IDX fixtures and sampler properties.

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;

use lcc_core::data::{encode_images, encode_labels, parse_images, parse_labels, sample_epoch, ImageSet};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Pixel `j` of image `i` in the fixtures.
fn expected_pixel(i: usize, j: usize) -> u8 {
    ((i * 31 + j * 7) % 256) as u8
}

#[test]
fn fixture_parses_to_known_contents() {
    let bytes = fs::read(fixture("tiny-images-idx3-ubyte")).unwrap();
    let (n, rows, cols, pixels) = parse_images(&bytes).unwrap();
    assert_eq!((n, rows, cols), (5, 4, 3));
    for i in 0..n {
        for j in 0..rows * cols {
            assert_eq!(pixels[i * 12 + j], expected_pixel(i, j));
        }
    }
    let labels = parse_labels(&fs::read(fixture("tiny-labels-idx1-ubyte")).unwrap()).unwrap();
    assert_eq!(labels, vec![3, 0, 9, 9, 1]);
}

#[test]
fn fixture_round_trip_is_byte_exact() {
    let images = fs::read(fixture("tiny-images-idx3-ubyte")).unwrap();
    let (_, rows, cols, pixels) = parse_images(&images).unwrap();
    assert_eq!(encode_images(rows, cols, &pixels), images);
    let labels = fs::read(fixture("tiny-labels-idx1-ubyte")).unwrap();
    assert_eq!(encode_labels(&parse_labels(&labels).unwrap()), labels);
}

#[test]
fn gzip_and_raw_fixtures_load_identically() {
    let raw = ImageSet::load(&fixture("tiny-images-idx3-ubyte"), &fixture("tiny-labels-idx1-ubyte")).unwrap();
    let gz = ImageSet::load(&fixture("tiny-images-idx3-ubyte.gz"), &fixture("tiny-labels-idx1-ubyte.gz")).unwrap();
    assert_eq!(raw, gz);
    assert_eq!((raw.len(), raw.rows(), raw.cols()), (5, 4, 3));
    assert_eq!(raw.label(2), 9);
    assert_eq!(raw.pixels(1)[0], expected_pixel(1, 0));
}

#[test]
fn normalized_pixels_are_bytes_over_255() {
    let set = ImageSet::load(&fixture("tiny-images-idx3-ubyte"), &fixture("tiny-labels-idx1-ubyte")).unwrap();
    let t = set.normalized(&[4, 0]);
    assert_eq!(t.shape(), &[2, 4, 3]);
    assert_eq!(t.data()[0], expected_pixel(4, 0) as f32 / 255.0);
    assert_eq!(t.data()[12 + 5], expected_pixel(0, 5) as f32 / 255.0);
    let (grouped, labels) = set.grouped(&[vec![1, 2], vec![3, 4]]).unwrap();
    assert_eq!(grouped.shape(), &[2, 2, 4, 3]);
    assert_eq!(labels, vec![vec![0, 9], vec![9, 1]]);
}

fn random_set(n: usize, seed: u64) -> ImageSet {
    let pixels: Vec<u8> = (0..n * 4).map(|i| (i as u64).wrapping_mul(seed | 1).to_le_bytes()[1]).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    ImageSet::new(2, 2, pixels, labels).unwrap()
}

proptest! {
    #[test]
    fn epochs_never_repeat_an_image(len in 1usize..300, k in 1usize..5, batch in 1usize..40, seed in any::<u64>()) {
        prop_assume!(k <= len);
        let epoch = sample_epoch(len, k, batch, seed).unwrap();
        let flat: Vec<usize> = epoch.iter().flatten().flatten().copied().collect();
        let unique: HashSet<usize> = flat.iter().copied().collect();
        prop_assert_eq!(unique.len(), flat.len());
        prop_assert_eq!(flat.len(), len / k * k);
        prop_assert!(flat.iter().all(|&i| i < len));
        prop_assert!(epoch.iter().flatten().all(|g| g.len() == k));
        prop_assert!(epoch.iter().all(|b| !b.is_empty() && b.len() <= batch));
    }

    #[test]
    fn epochs_are_seed_deterministic(len in 2usize..200, seed in any::<u64>()) {
        prop_assert_eq!(sample_epoch(len, 2, 7, seed).unwrap(), sample_epoch(len, 2, 7, seed).unwrap());
    }

    #[test]
    fn normalized_values_stay_in_unit_interval(n in 1usize..50, seed in any::<u64>()) {
        let set = random_set(n, seed);
        let all: Vec<usize> = (0..n).collect();
        prop_assert!(set.normalized(&all).data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn subsets_are_seeded_and_without_replacement(n in 1usize..100, count in 0usize..120, seed in any::<u64>()) {
        let set = random_set(n, seed);
        let a = set.subset(count, seed);
        prop_assert_eq!(&a, &set.subset(count, seed));
        prop_assert_eq!(a.len(), count.min(n));
    }
}
