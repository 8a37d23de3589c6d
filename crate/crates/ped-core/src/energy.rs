//! Energy-statistics estimators: two-sample energy distance and the
//! label-dependence score built from it.
//!
//! For samples `X = {x_1..x_n1}` and `Y = {y_1..y_n2}` in `R^d`, the
//! energy distance estimate is
//!
//! ```text
//! E(X, Y) = 2 * mean ||x_i - y_j|| - mean ||x_i - x_i'|| - mean ||y_j - y_j'||
//! ```
//!
//! The default V-statistic divides each mean by `n^2` (self-pairs with
//! distance zero included), which keeps the estimate non-negative. The
//! U-statistic variant divides the within terms by `n (n - 1)` with the
//! diagonal excluded; it is closer to unbiased but may go negative and
//! needs at least two samples per group.
//!
//! The dependence of features `T` on labels `Y` with alphabet `1..=p` is
//! the maximum energy distance over all class pairs `i < j` between the
//! class-conditional sample groups. It is zero in distribution exactly
//! when `T` carries no information about `Y`, which makes permutation
//! nulls a meaningful calibration.
//!
//! Determinism contract: every estimator accumulates in a fixed order that
//! does not depend on argument order or row order. Operands of
//! [`energy_distance`] are put into a canonical order first, so swapping
//! arguments returns bitwise-identical values; class groups are sorted
//! into a canonical row order, so permuting the samples (rows and labels
//! together) changes nothing, bit for bit.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{FeatureMatrix, IoError, LabelVector};

/// Pairwise-distance sums are accumulated per block of this many rows,
/// then combined in a fixed order, so results do not depend on how
/// callers batch their data.
pub const DISTANCE_BLOCK: usize = 256;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("operands have different column counts: {left_d} vs {right_d}")]
    DimensionMismatch { left_d: usize, right_d: usize },
    #[error("{group} has {n} samples; the u-statistic estimator needs at least 2")]
    TooFewSamples { group: String, n: usize },
    #[error("labels contain {found} class(es); dependence needs at least 2")]
    NeedTwoClasses { found: u32 },
    #[error("unit {unit}: feature matrix has {features_n} rows but label vector has {labels_n}")]
    UnitLengthMismatch {
        unit: usize,
        features_n: usize,
        labels_n: usize,
    },
    #[error("unit list is empty")]
    EmptyUnitList,
    #[error("subsample cap {cap} is below the class count {classes}; every class needs one sample")]
    SubsampleCapTooSmall { cap: usize, classes: u32 },
    #[error("permutation count must be at least 1")]
    InvalidPermutationCount,
    #[error("quantile must lie strictly between 0 and 1, got {0}")]
    InvalidQuantile(f64),
}

/// Which estimator the energy-distance terms use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorVariant {
    /// Divisor `n^2`, zero diagonal included. Non-negative.
    #[serde(rename = "v")]
    V,
    /// Divisor `n (n - 1)`, diagonal excluded. May be negative.
    #[serde(rename = "u")]
    U,
}

impl fmt::Display for EstimatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorVariant::V => write!(f, "v"),
            EstimatorVariant::U => write!(f, "u"),
        }
    }
}

impl FromStr for EstimatorVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "v" | "V" => Ok(EstimatorVariant::V),
            "u" | "U" => Ok(EstimatorVariant::U),
            other => Err(format!("unknown estimator variant {other:?}, expected v or u")),
        }
    }
}

/// A two-sample energy distance estimate. `n1` and `n2` report the
/// argument sizes in call order; the value itself is independent of that
/// order.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyDistanceValue {
    pub value: f64,
    pub n1: usize,
    pub n2: usize,
    pub variant: EstimatorVariant,
}

/// A dependence score with the class pair attaining it (1-based ids,
/// smaller id first).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyDependence {
    pub value: f64,
    pub arg_pair: (u32, u32),
    pub variant: EstimatorVariant,
}

/// Dependence score of one unit inside a profile. `index` is the 0-based
/// position of the unit in the profiled list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitDependence {
    pub index: usize,
    pub dependence: f64,
    pub arg_pair: (u32, u32),
}

/// Dependence scores for a list of units, all measured on the same
/// (possibly subsampled) samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceProfile {
    pub units: Vec<UnitDependence>,
    pub variant: EstimatorVariant,
    /// Number of samples the scores were computed on.
    pub n_used: usize,
    /// Seed that drove the subsample draw; echoed even when unused.
    pub seed: u64,
}

impl DependenceProfile {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Dependence values in unit order.
    pub fn values(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.dependence).collect()
    }
}

#[inline]
fn row_distance(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let mut s = 0.0;
    match (x.as_slice(), y.as_slice()) {
        (Some(xs), Some(ys)) => {
            for k in 0..xs.len() {
                let d = xs[k] - ys[k];
                s += d * d;
            }
        }
        _ => {
            for (xv, yv) in x.iter().zip(y.iter()) {
                let d = xv - yv;
                s += d * d;
            }
        }
    }
    s.sqrt()
}

/// Sum of `||a_i - b_j||` over all row pairs, accumulated blockwise in a
/// fixed order. With `skip_diagonal` the pairs `i == j` are left out,
/// which only makes sense when `a` and `b` hold the same rows.
fn sum_pairwise(a: &FeatureMatrix, b: &FeatureMatrix, skip_diagonal: bool) -> f64 {
    let (n1, n2) = (a.n(), b.n());
    let mut total = 0.0;
    let mut bi = 0;
    while bi < n1 {
        let ei = (bi + DISTANCE_BLOCK).min(n1);
        let mut bj = 0;
        while bj < n2 {
            let ej = (bj + DISTANCE_BLOCK).min(n2);
            let mut block = 0.0;
            for i in bi..ei {
                let row_i = a.row(i);
                for j in bj..ej {
                    if skip_diagonal && i == j {
                        continue;
                    }
                    block += row_distance(row_i, b.row(j));
                }
            }
            total += block;
            bj = ej;
        }
        bi = ei;
    }
    total
}

fn check_dims(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<(), EnergyError> {
    if a.d() != b.d() {
        return Err(EnergyError::DimensionMismatch {
            left_d: a.d(),
            right_d: b.d(),
        });
    }
    Ok(())
}

/// Mean Euclidean distance over all `n1 * n2` row pairs. When both
/// arguments hold the same rows this is the V-statistic within-group term,
/// zero diagonal included.
pub fn mean_pairwise_distance(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64, EnergyError> {
    check_dims(a, b)?;
    Ok(sum_pairwise(a, b, false) / (a.n() as f64 * b.n() as f64))
}

fn within_mean(g: &FeatureMatrix, variant: EstimatorVariant, name: &str) -> Result<f64, EnergyError> {
    let n = g.n();
    match variant {
        EstimatorVariant::V => Ok(sum_pairwise(g, g, false) / (n as f64 * n as f64)),
        EstimatorVariant::U => {
            if n < 2 {
                return Err(EnergyError::TooFewSamples {
                    group: name.to_string(),
                    n,
                });
            }
            Ok(sum_pairwise(g, g, true) / (n as f64 * (n - 1) as f64))
        }
    }
}

/// True when `(a, b)` already is the canonical operand order: fewer rows
/// first, ties broken by lexicographic comparison of the flat data.
fn canonically_ordered(a: &FeatureMatrix, b: &FeatureMatrix) -> bool {
    match a.n().cmp(&b.n()) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                match x.total_cmp(y) {
                    Ordering::Less => return true,
                    Ordering::Greater => return false,
                    Ordering::Equal => {}
                }
            }
            true
        }
    }
}

/// Two-sample energy distance between the rows of `a` and `b`.
///
/// The operands are brought into a canonical order internally, so
/// `energy_distance(a, b, v)` and `energy_distance(b, a, v)` return
/// bitwise-identical values.
pub fn energy_distance(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    variant: EstimatorVariant,
) -> Result<EnergyDistanceValue, EnergyError> {
    check_dims(a, b)?;
    let (x, y) = if canonically_ordered(a, b) { (a, b) } else { (b, a) };
    let cross = sum_pairwise(x, y, false) / (x.n() as f64 * y.n() as f64);
    let wx = within_mean(x, variant, "first group")?;
    let wy = within_mean(y, variant, "second group")?;
    Ok(EnergyDistanceValue {
        value: 2.0 * cross - wx - wy,
        n1: a.n(),
        n2: b.n(),
        variant,
    })
}

fn lex_cmp_rows(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            other => return other,
        }
    }
    Ordering::Equal
}

/// Splits the samples into per-class groups, classes `1..=p` in order.
/// Rows inside each group are sorted into a canonical lexicographic order,
/// so the groups, and everything computed from them, are invariant to a
/// joint permutation of samples and labels.
pub fn class_groups(
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> Result<Vec<FeatureMatrix>, EnergyError> {
    crate::io::validate_pair(features, labels)?;
    let mut groups = Vec::with_capacity(labels.alphabet_size() as usize);
    for c in 1..=labels.alphabet_size() {
        let mut idx = labels.class_indices(c);
        idx.sort_by(|&i, &j| lex_cmp_rows(features.row(i), features.row(j)).then(i.cmp(&j)));
        groups.push(features.select_rows(&idx)?);
    }
    Ok(groups)
}

/// Dependence of the features on the labels: the maximum two-sample
/// energy distance over all class pairs `i < j`. Ties resolve to the
/// lexicographically smallest pair.
pub fn energy_dependence(
    features: &FeatureMatrix,
    labels: &LabelVector,
    variant: EstimatorVariant,
) -> Result<EnergyDependence, EnergyError> {
    let p = labels.alphabet_size();
    if p < 2 {
        return Err(EnergyError::NeedTwoClasses { found: p });
    }
    let groups = class_groups(features, labels)?;
    if variant == EstimatorVariant::U {
        for (c, g) in groups.iter().enumerate() {
            if g.n() < 2 {
                return Err(EnergyError::TooFewSamples {
                    group: format!("class {}", c + 1),
                    n: g.n(),
                });
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_pair = (1u32, 2u32);
    for i in 0..groups.len() {
        for j in (i + 1)..groups.len() {
            let ed = energy_distance(&groups[i], &groups[j], variant)?;
            if ed.value > best {
                best = ed.value;
                best_pair = (i as u32 + 1, j as u32 + 1);
            }
        }
    }
    Ok(EnergyDependence {
        value: best,
        arg_pair: best_pair,
        variant,
    })
}

/// Draws a label-stratified subsample of size `cap` and returns its sample
/// indices in ascending order. Requires `cap >= p`; every class keeps at
/// least one sample, the rest of the budget is shared in proportion to the
/// class sizes by largest remainder (ties toward smaller class ids).
pub fn stratified_subsample(
    labels: &LabelVector,
    cap: usize,
    seed: u64,
) -> Result<Vec<usize>, EnergyError> {
    let n = labels.n();
    let p = labels.alphabet_size() as usize;
    if cap < p {
        return Err(EnergyError::SubsampleCapTooSmall {
            cap,
            classes: labels.alphabet_size(),
        });
    }
    if cap >= n {
        return Ok((0..n).collect());
    }
    let counts = labels.class_counts();
    // One guaranteed sample per class; the remaining budget is shared in
    // proportion to count - 1 over n - p. cap < n implies p < n here, so
    // the denominator is positive.
    let budget = cap - p;
    let denom = (n - p) as f64;
    let mut quotas = vec![1usize; p];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(p);
    let mut assigned = 0usize;
    for c in 0..p {
        let raw = budget as f64 * (counts[c] - 1) as f64 / denom;
        let base = raw.floor() as usize;
        quotas[c] += base;
        assigned += base;
        remainders.push((c, raw - base as f64));
    }
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(c, _) in remainders.iter().take(budget - assigned) {
        quotas[c] += 1;
    }
    debug_assert_eq!(quotas.iter().sum::<usize>(), cap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(cap);
    for c in 0..p {
        let mut class_idx = labels.class_indices(c as u32 + 1);
        debug_assert!(quotas[c] <= class_idx.len());
        class_idx.shuffle(&mut rng);
        picked.extend_from_slice(&class_idx[..quotas[c]]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Scores every unit's dependence on the labels, optionally on a shared
/// stratified subsample of at most `subsample_cap` samples.
pub fn dependence_profile(
    units: &[FeatureMatrix],
    labels: &LabelVector,
    variant: EstimatorVariant,
    subsample_cap: Option<usize>,
    seed: u64,
) -> Result<DependenceProfile, EnergyError> {
    if units.is_empty() {
        return Err(EnergyError::EmptyUnitList);
    }
    for (unit, f) in units.iter().enumerate() {
        if f.n() != labels.n() {
            return Err(EnergyError::UnitLengthMismatch {
                unit,
                features_n: f.n(),
                labels_n: labels.n(),
            });
        }
    }
    let selection = match subsample_cap {
        Some(cap) if cap < labels.n() => Some(stratified_subsample(labels, cap, seed)?),
        _ => None,
    };
    let (sub_labels, n_used);
    match &selection {
        Some(idx) => {
            let picked: Vec<u32> = idx.iter().map(|&i| labels.labels()[i]).collect();
            // Stratification keeps every class populated.
            sub_labels = LabelVector::from_validated_parts(picked, labels.alphabet_size());
            n_used = idx.len();
        }
        None => {
            sub_labels = labels.clone();
            n_used = labels.n();
        }
    }
    let mut scored = Vec::with_capacity(units.len());
    for (index, f) in units.iter().enumerate() {
        let sub_f;
        let f_ref = match &selection {
            Some(idx) => {
                sub_f = f.select_rows(idx)?;
                &sub_f
            }
            None => f,
        };
        let dep = energy_dependence(f_ref, &sub_labels, variant)?;
        scored.push(UnitDependence {
            index,
            dependence: dep.value,
            arg_pair: dep.arg_pair,
        });
    }
    Ok(DependenceProfile {
        units: scored,
        variant,
        n_used,
        seed,
    })
}

/// Dependence scores under `n_perm` label shuffles, summarised by the
/// given upper quantile (empirical, index `ceil(q * n_perm)` of the sorted
/// scores). Scores exceeding the returned threshold are implausible under
/// independence.
pub fn permutation_threshold(
    features: &FeatureMatrix,
    labels: &LabelVector,
    variant: EstimatorVariant,
    n_perm: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64, EnergyError> {
    if n_perm == 0 {
        return Err(EnergyError::InvalidPermutationCount);
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(EnergyError::InvalidQuantile(quantile));
    }
    crate::io::validate_pair(features, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.labels().to_vec();
    let mut scores = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        shuffled.shuffle(&mut rng);
        let y = LabelVector::from_validated_parts(shuffled.clone(), labels.alphabet_size());
        scores.push(energy_dependence(features, &y, variant)?.value);
    }
    scores.sort_by(f64::total_cmp);
    let rank = (quantile * n_perm as f64).ceil() as usize;
    Ok(scores[rank.clamp(1, n_perm) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    fn scalar_fm(values: &[f64]) -> FeatureMatrix {
        fm(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>())
    }

    #[test]
    fn mean_pairwise_hand_values() {
        // {1,2} vs {1,2}: distances 0,1,1,0 -> mean 0.5.
        let a = scalar_fm(&[1.0, 2.0]);
        assert_eq!(mean_pairwise_distance(&a, &a).unwrap(), 0.5);
        // {0,2} vs {1}: distances 1,1 -> mean 1.
        let b = scalar_fm(&[0.0, 2.0]);
        let c = scalar_fm(&[1.0]);
        assert_eq!(mean_pairwise_distance(&b, &c).unwrap(), 1.0);
    }

    #[test]
    fn energy_distance_hand_values_v() {
        // Singletons {0}, {1}: within terms 0, cross 1 -> 2.
        let e = energy_distance(&scalar_fm(&[0.0]), &scalar_fm(&[1.0]), EstimatorVariant::V)
            .unwrap();
        assert!((e.value - 2.0).abs() < 1e-12);
        // {0,2} vs {1}: cross 1, within_a = (0+2+2+0)/4 = 1, within_b = 0 -> 1.
        let e = energy_distance(
            &scalar_fm(&[0.0, 2.0]),
            &scalar_fm(&[1.0]),
            EstimatorVariant::V,
        )
        .unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_distance_zero_on_identical_samples() {
        let a = fm(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 0.0]]);
        let e = energy_distance(&a, &a.clone(), EstimatorVariant::V).unwrap();
        assert!(e.value.abs() <= 1e-12);
    }

    #[test]
    fn u_statistic_can_be_negative() {
        // {1,2} vs {1,2}: cross mean 0.5, within means (0+1+1+0)/2 = 1 each
        // -> 2*0.5 - 1 - 1 = -1.
        let a = scalar_fm(&[1.0, 2.0]);
        let e = energy_distance(&a, &a.clone(), EstimatorVariant::U).unwrap();
        assert!((e.value - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn u_statistic_rejects_singletons() {
        let res = energy_distance(&scalar_fm(&[0.0]), &scalar_fm(&[1.0]), EstimatorVariant::U);
        assert!(matches!(res, Err(EnergyError::TooFewSamples { n: 1, .. })));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = fm(&[vec![1.0, 2.0]]);
        let b = fm(&[vec![1.0]]);
        assert!(matches!(
            energy_distance(&a, &b, EstimatorVariant::V),
            Err(EnergyError::DimensionMismatch {
                left_d: 2,
                right_d: 1
            })
        ));
    }

    #[test]
    fn dependence_hand_value() {
        // Classes at 0, 1, 3: pairwise energy distances 2, 6, 4; max 6 at (1, 3).
        let f = scalar_fm(&[0.0, 1.0, 3.0]);
        let y = LabelVector::new(vec![1, 2, 3]).unwrap();
        let dep = energy_dependence(&f, &y, EstimatorVariant::V).unwrap();
        assert!((dep.value - 6.0).abs() < 1e-12);
        assert_eq!(dep.arg_pair, (1, 3));
    }

    #[test]
    fn dependence_needs_two_classes() {
        let f = scalar_fm(&[0.0, 1.0]);
        let y = LabelVector::new(vec![1, 1]).unwrap();
        assert!(matches!(
            energy_dependence(&f, &y, EstimatorVariant::V),
            Err(EnergyError::NeedTwoClasses { found: 1 })
        ));
    }

    #[test]
    fn profile_hand_values() {
        let y = LabelVector::new(vec![1, 2]).unwrap();
        let units = vec![
            scalar_fm(&[0.0, 1.0]),
            scalar_fm(&[0.0, 3.0]),
            scalar_fm(&[5.0, 5.0]),
        ];
        let p = dependence_profile(&units, &y, EstimatorVariant::V, None, 7).unwrap();
        let vals = p.values();
        assert!((vals[0] - 2.0).abs() < 1e-12);
        assert!((vals[1] - 6.0).abs() < 1e-12);
        assert!(vals[2].abs() <= 1e-12);
        assert_eq!(p.n_used, 2);
        assert_eq!(p.seed, 7);
        assert_eq!(p.units[1].index, 1);
    }

    #[test]
    fn profile_rejects_mismatched_unit() {
        let y = LabelVector::new(vec![1, 2]).unwrap();
        let units = vec![scalar_fm(&[0.0, 1.0]), scalar_fm(&[0.0, 1.0, 2.0])];
        assert!(matches!(
            dependence_profile(&units, &y, EstimatorVariant::V, None, 0),
            Err(EnergyError::UnitLengthMismatch { unit: 1, .. })
        ));
    }

    #[test]
    fn profile_rejects_empty_unit_list() {
        let y = LabelVector::new(vec![1, 2]).unwrap();
        assert!(matches!(
            dependence_profile(&[], &y, EstimatorVariant::V, None, 0),
            Err(EnergyError::EmptyUnitList)
        ));
    }

    #[test]
    fn subsample_respects_quotas_and_is_deterministic() {
        // 12 samples: 6 of class 1, 4 of class 2, 2 of class 3; cap 6
        // -> quotas 3 / 2 / 1.
        let mut labels = Vec::new();
        labels.extend(std::iter::repeat_n(1u32, 6));
        labels.extend(std::iter::repeat_n(2u32, 4));
        labels.extend(std::iter::repeat_n(3u32, 2));
        let y = LabelVector::new(labels).unwrap();
        let a = stratified_subsample(&y, 6, 42).unwrap();
        let b = stratified_subsample(&y, 6, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        let picked: Vec<u32> = a.iter().map(|&i| y.labels()[i]).collect();
        assert_eq!(picked.iter().filter(|&&c| c == 1).count(), 3);
        assert_eq!(picked.iter().filter(|&&c| c == 2).count(), 2);
        assert_eq!(picked.iter().filter(|&&c| c == 3).count(), 1);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subsample_cap_below_class_count_fails() {
        let y = LabelVector::new(vec![1, 2, 3]).unwrap();
        assert!(matches!(
            stratified_subsample(&y, 2, 0),
            Err(EnergyError::SubsampleCapTooSmall { cap: 2, classes: 3 })
        ));
    }

    #[test]
    fn subsample_cap_at_or_above_n_is_identity() {
        let y = LabelVector::new(vec![1, 2, 1]).unwrap();
        assert_eq!(stratified_subsample(&y, 3, 0).unwrap(), vec![0, 1, 2]);
        assert_eq!(stratified_subsample(&y, 10, 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn permutation_threshold_is_deterministic_and_positive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_fn((40, 2), |_| rng.gen_range(-1.0..1.0));
        let f = FeatureMatrix::new(data).unwrap();
        let labels: Vec<u32> = (0..40).map(|i| (i % 2) as u32 + 1).collect();
        let y = LabelVector::new(labels).unwrap();
        let t1 = permutation_threshold(&f, &y, EstimatorVariant::V, 50, 0.95, 9).unwrap();
        let t2 = permutation_threshold(&f, &y, EstimatorVariant::V, 50, 0.95, 9).unwrap();
        assert_eq!(t1.to_bits(), t2.to_bits());
        assert!(t1 > 0.0);
    }

    #[test]
    fn permutation_threshold_validates_inputs() {
        let f = scalar_fm(&[0.0, 1.0]);
        let y = LabelVector::new(vec![1, 2]).unwrap();
        assert!(matches!(
            permutation_threshold(&f, &y, EstimatorVariant::V, 0, 0.95, 0),
            Err(EnergyError::InvalidPermutationCount)
        ));
        assert!(matches!(
            permutation_threshold(&f, &y, EstimatorVariant::V, 10, 1.0, 0),
            Err(EnergyError::InvalidQuantile(_))
        ));
    }

    #[test]
    fn blockwise_sum_matches_naive_order_for_small_inputs() {
        // Below one block the fixed-order accumulation is the naive loop.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = FeatureMatrix::new(Array2::from_shape_fn((7, 3), |_| rng.gen_range(-2.0..2.0)))
            .unwrap();
        let b = FeatureMatrix::new(Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0)))
            .unwrap();
        let mut naive = 0.0;
        for i in 0..a.n() {
            for j in 0..b.n() {
                naive += row_distance(a.row(i), b.row(j));
            }
        }
        let blocked = sum_pairwise(&a, &b, false);
        assert_eq!(naive.to_bits(), blocked.to_bits());
    }

    #[test]
    fn blockwise_sum_is_stable_across_block_boundaries() {
        // Spans two blocks; compare against plain accumulation loosely.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = DISTANCE_BLOCK + 37;
        let a = FeatureMatrix::new(Array2::from_shape_fn((n, 1), |_| rng.gen_range(-2.0..2.0)))
            .unwrap();
        let mut naive = 0.0;
        for i in 0..n {
            for j in 0..n {
                naive += row_distance(a.row(i), a.row(j));
            }
        }
        let blocked = sum_pairwise(&a, &a, false);
        assert!((naive - blocked).abs() / naive.max(1.0) < 1e-12);
    }

    proptest! {
        #[test]
        fn prop_symmetry_is_exact(seed in 0u64..500, n1 in 1usize..9, n2 in 1usize..9, d in 1usize..4) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = FeatureMatrix::new(Array2::from_shape_fn((n1, d), |_| rng.gen_range(-5.0..5.0))).unwrap();
            let b = FeatureMatrix::new(Array2::from_shape_fn((n2, d), |_| rng.gen_range(-5.0..5.0))).unwrap();
            let ab = energy_distance(&a, &b, EstimatorVariant::V).unwrap().value;
            let ba = energy_distance(&b, &a, EstimatorVariant::V).unwrap().value;
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
        }

        #[test]
        fn prop_v_statistic_is_nonnegative(seed in 0u64..500, n1 in 1usize..9, n2 in 1usize..9) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = FeatureMatrix::new(Array2::from_shape_fn((n1, 2), |_| rng.gen_range(-5.0..5.0))).unwrap();
            let b = FeatureMatrix::new(Array2::from_shape_fn((n2, 2), |_| rng.gen_range(-5.0..5.0))).unwrap();
            let e = energy_distance(&a, &b, EstimatorVariant::V).unwrap().value;
            prop_assert!(e >= -1e-12);
        }

        #[test]
        fn prop_dependence_is_permutation_invariant_bitwise(seed in 0u64..300, n in 4usize..20) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-3.0..3.0));
            let f = FeatureMatrix::new(data.clone()).unwrap();
            let mut labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32 + 1).collect();
            labels.shuffle(&mut rng);
            let y = LabelVector::new(labels.clone()).unwrap();
            let base = energy_dependence(&f, &y, EstimatorVariant::V).unwrap().value;

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let pdata = Array2::from_shape_fn((n, 2), |(i, j)| data[[perm[i], j]]);
            let pf = FeatureMatrix::new(pdata).unwrap();
            let plabels: Vec<u32> = perm.iter().map(|&i| labels[i]).collect();
            let py = LabelVector::new(plabels).unwrap();
            let permuted = energy_dependence(&pf, &py, EstimatorVariant::V).unwrap().value;
            prop_assert_eq!(base.to_bits(), permuted.to_bits());
        }

        #[test]
        fn prop_profile_json_round_trip(seed in 0u64..200) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y = LabelVector::new(vec![1, 2, 1, 2, 1, 2]).unwrap();
            let units: Vec<FeatureMatrix> = (0..3)
                .map(|_| {
                    FeatureMatrix::new(Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0)))
                        .unwrap()
                })
                .collect();
            let p = dependence_profile(&units, &y, EstimatorVariant::V, None, seed).unwrap();
            let json = serde_json::to_string(&p).unwrap();
            let back: DependenceProfile = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(p, back);
        }
    }
}
