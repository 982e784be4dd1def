use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchplan_core::geometry::{iou, joint_mask, mask_difference, RasterMask};

fn from_word(word: u32, w: u32, h: u32) -> RasterMask {
    RasterMask::from_fn(w, h, |x, y| word >> (y * w + x) & 1 == 1).unwrap()
}

fn brute(a: &[bool], b: &[bool]) -> (Vec<bool>, Vec<bool>, f64) {
    let union: Vec<bool> = a.iter().zip(b).map(|(x, y)| *x || *y).collect();
    let diff: Vec<bool> = a.iter().zip(b).map(|(x, y)| *x && !*y).collect();
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let uni = union.iter().filter(|x| **x).count();
    let score = if uni == 0 { 0.0 } else { inter as f64 / uni as f64 };
    (union, diff, score)
}

fn check(a: &RasterMask, b: &RasterMask) {
    let (union, diff, score) = brute(a.bits(), b.bits());
    assert_eq!(joint_mask(a, b).unwrap().bits(), union.as_slice());
    assert_eq!(mask_difference(a, b).unwrap().bits(), diff.as_slice());
    assert_eq!(iou(a, b).unwrap(), score);
}

pub fn exhaustive_three_by_three() {
    let start = Instant::now();
    let masks: Vec<RasterMask> = (0..512).map(|w| from_word(w, 3, 3)).collect();
    for a in &masks {
        for b in &masks {
            check(a, b);
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());
}

pub fn random_thirty_two_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..200 {
        let density_a: f64 = rng.random_range(0.0..1.0);
        let density_b: f64 = rng.random_range(0.0..1.0);
        let a = RasterMask::from_bits(32, 32, (0..1024).map(|_| rng.random_bool(density_a)).collect()).unwrap();
        let b = RasterMask::from_bits(32, 32, (0..1024).map(|_| rng.random_bool(density_b)).collect()).unwrap();
        check(&a, &b);
    }
}

pub fn mismatched_sizes_are_rejected() {
    let a = RasterMask::new(3, 3).unwrap();
    let b = RasterMask::new(4, 3).unwrap();
    assert!(iou(&a, &b).is_err());
    assert!(joint_mask(&a, &b).is_err());
    assert!(mask_difference(&a, &b).is_err());
}
