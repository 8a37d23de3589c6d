//! Synthetic classification data for the toy network.
//!
//! Two families: concentric `rings` (class `c` lives near radius `c` in
//! the first two input dimensions, remaining dimensions are pure noise)
//! and Gaussian `blobs` (one random centre per class). Both are seeded
//! and fully deterministic.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ToynetError;
use crate::io::{IoError, LabelVector};

/// A labelled sample set: one input row per sample, 1-based class targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Vec<u32>,
    pub classes: u32,
}

impl Batch {
    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn label_vector(&self) -> Result<LabelVector, IoError> {
        LabelVector::new(self.targets.clone())
    }

    /// New batch holding the given rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let inputs = self.inputs.select(ndarray::Axis(0), indices);
        let targets = indices.iter().map(|&i| self.targets[i]).collect();
        Batch {
            inputs,
            targets,
            classes: self.classes,
        }
    }
}

/// Which synthetic family to draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Rings,
    Blobs,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataKind::Rings => write!(f, "rings"),
            DataKind::Blobs => write!(f, "blobs"),
        }
    }
}

impl FromStr for DataKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rings" => Ok(DataKind::Rings),
            "blobs" => Ok(DataKind::Blobs),
            other => Err(format!("unknown data kind {other:?}, expected rings or blobs")),
        }
    }
}

/// Draws `n` labelled samples. Classes share the budget as evenly as
/// possible (the first `n % classes` classes get one extra sample) and
/// the rows come back shuffled.
pub fn gen_synthetic(
    kind: DataKind,
    n: usize,
    classes: u32,
    input_dim: usize,
    noise: f64,
    seed: u64,
) -> Result<Batch, ToynetError> {
    let fail = |detail: String| Err(ToynetError::InvalidConfig { detail });
    if classes < 2 {
        return fail(format!("need at least 2 classes, got {classes}"));
    }
    if n < classes as usize {
        return fail(format!("{n} samples cannot cover {classes} classes"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return fail(format!("noise must be finite and non-negative, got {noise}"));
    }
    let min_dim = match kind {
        DataKind::Rings => 2,
        DataKind::Blobs => 1,
    };
    if input_dim < min_dim {
        return fail(format!("{kind} data needs input_dim >= {min_dim}, got {input_dim}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = classes as usize;
    let base = n / p;
    let extra = n % p;

    let centers: Vec<Vec<f64>> = match kind {
        DataKind::Blobs => (0..p)
            .map(|_| (0..input_dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect(),
        DataKind::Rings => Vec::new(),
    };

    let mut rows: Vec<f64> = Vec::with_capacity(n * input_dim);
    let mut targets: Vec<u32> = Vec::with_capacity(n);
    // c is a class id, not just an index: it sets the label and the ring
    // radius, and `centers` is empty for rings.
    #[allow(clippy::needless_range_loop)]
    for c in 0..p {
        let count = base + usize::from(c < extra);
        for _ in 0..count {
            match kind {
                DataKind::Rings => {
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    let eps: f64 = rng.sample(StandardNormal);
                    let r = (c + 1) as f64 + noise * eps;
                    rows.push(r * theta.cos());
                    rows.push(r * theta.sin());
                    for _ in 2..input_dim {
                        let z: f64 = rng.sample(StandardNormal);
                        rows.push(noise * z);
                    }
                }
                DataKind::Blobs => {
                    for &center in &centers[c] {
                        let z: f64 = rng.sample(StandardNormal);
                        rows.push(center + noise * z);
                    }
                }
            }
            targets.push(c as u32 + 1);
        }
    }
    let inputs = Array2::from_shape_vec((n, input_dim), rows).expect("row count matches n");

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let batch = Batch {
        inputs,
        targets,
        classes,
    };
    Ok(batch.select(&order))
}

/// Splits a batch into train/probe/test parts, stratified by class so
/// every part sees every class. `f_train` and `f_probe` are fractions of
/// each class; the remainder goes to test.
pub fn stratified_split(
    batch: &Batch,
    f_train: f64,
    f_probe: f64,
    seed: u64,
) -> Result<(Batch, Batch, Batch), ToynetError> {
    let fail = |detail: String| Err(ToynetError::InvalidConfig { detail });
    if !(f_train > 0.0 && f_probe > 0.0 && f_train + f_probe < 1.0) {
        return fail(format!(
            "split fractions must be positive with train + probe < 1, got {f_train} and {f_probe}"
        ));
    }
    let labels = batch.label_vector()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut probe_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 1..=labels.alphabet_size() {
        let mut idx = labels.class_indices(c);
        let n_c = idx.len();
        let n_train = (f_train * n_c as f64).floor() as usize;
        let n_probe = (f_probe * n_c as f64).floor() as usize;
        if n_train == 0 || n_probe == 0 || n_train + n_probe >= n_c {
            return fail(format!(
                "class {c} with {n_c} samples cannot be split {f_train}/{f_probe}/rest"
            ));
        }
        idx.shuffle(&mut rng);
        train_idx.extend_from_slice(&idx[..n_train]);
        probe_idx.extend_from_slice(&idx[n_train..n_train + n_probe]);
        test_idx.extend_from_slice(&idx[n_train + n_probe..]);
    }
    train_idx.sort_unstable();
    probe_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        batch.select(&train_idx),
        batch.select(&probe_idx),
        batch.select(&test_idx),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rings_have_expected_radii() {
        let b = gen_synthetic(DataKind::Rings, 300, 3, 2, 0.0, 7).unwrap();
        assert_eq!(b.n(), 300);
        for (i, &t) in b.targets.iter().enumerate() {
            let x = b.inputs[[i, 0]];
            let y = b.inputs[[i, 1]];
            let r = (x * x + y * y).sqrt();
            assert!((r - t as f64).abs() < 1e-9, "class {t} at radius {r}");
        }
    }

    #[test]
    fn class_budget_is_even_with_remainder_up_front() {
        let b = gen_synthetic(DataKind::Blobs, 10, 3, 1, 0.1, 0).unwrap();
        let y = b.label_vector().unwrap();
        assert_eq!(y.class_counts(), vec![4, 3, 3]);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = gen_synthetic(DataKind::Rings, 50, 2, 3, 0.2, 9).unwrap();
        let b = gen_synthetic(DataKind::Rings, 50, 2, 3, 0.2, 9).unwrap();
        let c = gen_synthetic(DataKind::Rings, 50, 2, 3, 0.2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn extra_dimensions_are_noise_scaled() {
        let b = gen_synthetic(DataKind::Rings, 40, 2, 5, 0.0, 3).unwrap();
        for i in 0..b.n() {
            for dim in 2..5 {
                assert_eq!(b.inputs[[i, dim]], 0.0);
            }
        }
    }

    #[test]
    fn invalid_requests_are_rejected() {
        assert!(gen_synthetic(DataKind::Rings, 10, 1, 2, 0.1, 0).is_err());
        assert!(gen_synthetic(DataKind::Rings, 2, 3, 2, 0.1, 0).is_err());
        assert!(gen_synthetic(DataKind::Rings, 10, 2, 1, 0.1, 0).is_err());
        assert!(gen_synthetic(DataKind::Blobs, 10, 2, 0, 0.1, 0).is_err());
        assert!(gen_synthetic(DataKind::Rings, 10, 2, 2, f64::NAN, 0).is_err());
    }

    #[test]
    fn split_is_stratified_and_partitions_the_batch() {
        let b = gen_synthetic(DataKind::Rings, 200, 2, 2, 0.1, 1).unwrap();
        let (train, probe, test) = stratified_split(&b, 0.7, 0.15, 5).unwrap();
        assert_eq!(train.n() + probe.n() + test.n(), 200);
        assert_eq!(train.n(), 140);
        assert_eq!(probe.n(), 30);
        assert_eq!(test.n(), 30);
        for part in [&train, &probe, &test] {
            let y = part.label_vector().unwrap();
            assert_eq!(y.alphabet_size(), 2);
            assert!(y.class_counts().iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn split_rejects_fractions_that_empty_a_part() {
        let b = gen_synthetic(DataKind::Rings, 20, 2, 2, 0.1, 1).unwrap();
        assert!(stratified_split(&b, 0.9, 0.09, 0).is_err());
        assert!(stratified_split(&b, 0.5, 0.5, 0).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let b = gen_synthetic(DataKind::Rings, 100, 2, 2, 0.1, 2).unwrap();
        let (t1, p1, s1) = stratified_split(&b, 0.6, 0.2, 11).unwrap();
        let (t2, p2, s2) = stratified_split(&b, 0.6, 0.2, 11).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }
}
