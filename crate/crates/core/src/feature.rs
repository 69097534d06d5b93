//! Feature-vector value types and the numerical primitives they support:
//! norms, relative errors, fixed-stride finite differences, and polynomial
//! extrapolation over timestep histories.
//!
//! All arithmetic is `f64`. Timesteps are integer denoising indices that
//! count down from `T`; histories therefore store strictly decreasing
//! timesteps, most recent (smallest `t`) last.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// A flat real-valued feature tensor with shape metadata.
///
/// The unit of all caching and prediction. Invariants: `data.len()` equals
/// the product of `shape`, and every element is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl FeatureVec {
    /// Builds a feature vector, validating shape consistency and finiteness.
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { data, shape })
    }

    /// Builds a rank-1 feature vector from a flat slice.
    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(data, vec![n])
    }

    /// Internal constructor for values produced by trusted arithmetic.
    pub(crate) fn unchecked(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data, shape }
    }

    /// Zero vector with the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::unchecked(vec![0.0; n], shape)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of absolute values over all elements.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Direction of `self`: `self / ||self||_2`. The zero vector maps to
    /// itself so that magnitude-rescaling formulas degrade to a constant
    /// prediction instead of erroring.
    pub fn normalized_l2(&self) -> FeatureVec {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return FeatureVec::zeros(self.shape.clone());
        }
        let data = self.data.iter().map(|v| v / norm).collect();
        FeatureVec::unchecked(data, self.shape.clone())
    }

    /// Element-wise difference `self - other`.
    pub fn sub(&self, other: &FeatureVec) -> Result<FeatureVec> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(FeatureVec::unchecked(data, self.shape.clone()))
    }

    /// Element-wise sum `self + other`.
    pub fn add(&self, other: &FeatureVec) -> Result<FeatureVec> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(FeatureVec::unchecked(data, self.shape.clone()))
    }

    /// Element-wise scaling by a finite factor.
    pub fn scale(&self, factor: f64) -> FeatureVec {
        debug_assert!(factor.is_finite());
        let data = self.data.iter().map(|v| v * factor).collect();
        FeatureVec::unchecked(data, self.shape.clone())
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureVec) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Relative L1 error of a prediction against the actual value:
/// `||actual - predicted||_1 / ||actual||_1`.
///
/// Returns [`Error::ZeroReference`] when the actual value has zero L1 norm;
/// callers must treat the error as undefined rather than zero.
pub fn rel_l1_error(actual: &FeatureVec, predicted: &FeatureVec) -> Result<f64> {
    actual.check_same_shape(predicted)?;
    let denom = actual.l1_norm();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(actual.sub(predicted)?.l1_norm() / denom)
}

/// One full-compute sample: a feature value tagged with its denoising
/// timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub t: i64,
    pub value: FeatureVec,
}

/// The most recent full-compute samples for one stream of one module,
/// newest last, bounded by `capacity`.
///
/// Timesteps are strictly decreasing in insertion order (denoising runs
/// from large `t` to small `t`) and every stored value shares one shape.
#[derive(Debug, Clone)]
pub struct SampleHistory {
    capacity: usize,
    points: VecDeque<SamplePoint>,
}

impl SampleHistory {
    /// Creates an empty history that retains at most `capacity` samples.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history capacity must be positive");
        Self {
            capacity,
            points: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Pushes a new sample, evicting the oldest when over capacity.
    ///
    /// Panics if `t` does not decrease or the shape changes; both indicate
    /// a sequencing bug in the owner, not a recoverable condition.
    pub fn push(&mut self, t: i64, value: FeatureVec) {
        if let Some(last) = self.points.back() {
            assert!(
                t < last.t,
                "timesteps must strictly decrease: got {} after {}",
                t,
                last.t
            );
            assert_eq!(
                last.value.shape(),
                value.shape(),
                "history values must share one shape"
            );
        }
        self.points.push_back(SamplePoint { t, value });
        while self.points.len() > self.capacity {
            self.points.pop_front();
        }
    }

    /// Most recent sample, if any.
    pub fn latest(&self) -> Option<&SamplePoint> {
        self.points.back()
    }

    /// Samples ordered oldest to newest.
    pub fn points(&self) -> impl Iterator<Item = &SamplePoint> {
        self.points.iter()
    }

    /// The `n` most recent samples, newest first.
    fn recent(&self, n: usize) -> Vec<&SamplePoint> {
        self.points.iter().rev().take(n).collect()
    }

    /// Gap between the two most recent timesteps, when two samples exist.
    pub fn latest_interval(&self) -> Option<i64> {
        let n = self.points.len();
        if n < 2 {
            return None;
        }
        Some(self.points[n - 2].t - self.points[n - 1].t)
    }
}

/// Fixed-stride finite difference of the given order, evaluated at the most
/// recent sample.
///
/// Uses the `order + 1` newest samples, which must be uniformly spaced; the
/// stride is their common spacing. Order 1 is the plain difference between
/// the two newest samples.
pub fn finite_difference(history: &SampleHistory, order: usize) -> Result<FeatureVec> {
    assert!(order >= 1, "difference order must be positive");
    let needed = order + 1;
    if history.len() < needed {
        return Err(Error::InsufficientHistory {
            needed,
            have: history.len(),
        });
    }
    let recent = history.recent(needed);
    let stride = recent[1].t - recent[0].t;
    for pair in recent.windows(2) {
        let gap = pair[1].t - pair[0].t;
        if gap != stride {
            return Err(Error::NonUniformSpacing {
                expected: stride,
                found: gap,
            });
        }
    }
    // levels[j] starts as the value at offset j strides back; each pass
    // replaces it with the next-order difference anchored at the newest
    // sample.
    let mut levels: Vec<Vec<f64>> = recent.iter().map(|p| p.value.data().to_vec()).collect();
    for level in 0..order {
        for j in 0..(order - level) {
            let (head, tail) = levels.split_at_mut(j + 1);
            for (a, b) in head[j].iter_mut().zip(&tail[0]) {
                *a -= b;
            }
        }
    }
    Ok(FeatureVec::unchecked(
        std::mem::take(&mut levels[0]),
        recent[0].value.shape().to_vec(),
    ))
}

/// Extrapolates the history to `target_t` with the interpolating polynomial
/// through all stored samples, in Newton divided-difference form.
///
/// The polynomial is anchored at the newest sample, so spacing may be
/// arbitrary; a single stored sample yields a constant prediction. Exactly
/// reconstructs per-element polynomials of degree up to `len - 1`.
pub fn newton_predict(history: &SampleHistory, target_t: i64) -> Result<FeatureVec> {
    newton_predict_recent(history, history.len().max(1), target_t)
}

/// Same as [`newton_predict`] but restricted to the `max_points` newest
/// samples, which bounds the polynomial degree.
pub fn newton_predict_recent(
    history: &SampleHistory,
    max_points: usize,
    target_t: i64,
) -> Result<FeatureVec> {
    if history.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, have: 0 });
    }
    let pts = history.recent(max_points.max(1));
    let n = pts.len();
    let ts: Vec<f64> = pts.iter().map(|p| p.t as f64).collect();

    // Divided-difference table over points ordered newest first; coeffs[j]
    // holds the j-th coefficient for every element after the sweep.
    let mut coeffs: Vec<Vec<f64>> = pts.iter().map(|p| p.value.data().to_vec()).collect();
    for j in 1..n {
        for i in (j..n).rev() {
            let dt = ts[i] - ts[i - j];
            let (head, tail) = coeffs.split_at_mut(i);
            for (c, p) in tail[0].iter_mut().zip(&head[i - 1]) {
                *c = (*c - p) / dt;
            }
        }
    }

    // Horner evaluation anchored at the newest timestep.
    let x = target_t as f64;
    let mut out = coeffs[n - 1].clone();
    for j in (0..n - 1).rev() {
        let dx = x - ts[j];
        for (o, c) in out.iter_mut().zip(&coeffs[j]) {
            *o = c + dx * *o;
        }
    }
    Ok(FeatureVec::unchecked(out, pts[0].value.shape().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(data: &[f64]) -> FeatureVec {
        FeatureVec::from_flat(data.to_vec()).unwrap()
    }

    fn history_from(pairs: &[(i64, &[f64])], capacity: usize) -> SampleHistory {
        let mut h = SampleHistory::new(capacity);
        for (t, v) in pairs {
            h.push(*t, fv(v));
        }
        h
    }

    #[test]
    fn construction_validates_shape_and_finiteness() {
        assert!(FeatureVec::new(vec![1.0, 2.0], vec![2]).is_ok());
        assert!(matches!(
            FeatureVec::new(vec![1.0, 2.0], vec![3]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            FeatureVec::new(vec![1.0, f64::NAN], vec![2]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(
            FeatureVec::new(vec![f64::INFINITY], vec![1]),
            Err(Error::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn l2_norm_pythagorean_and_zero() {
        assert_eq!(fv(&[3.0, 4.0]).l2_norm(), 5.0);
        assert_eq!(fv(&[0.0, 0.0, 0.0]).l2_norm(), 0.0);
    }

    #[test]
    fn l2_norm_matches_elementwise_oracle_on_seeded_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..128).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // independent accumulation oracle
        let mut acc = 0.0f64;
        for v in &data {
            acc += v * v;
        }
        let oracle = acc.sqrt();
        let got = fv(&data).l2_norm();
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn l1_norm_folds_signs() {
        assert_eq!(fv(&[3.0, -4.0]).l1_norm(), 7.0);
        assert_eq!(fv(&[0.0]).l1_norm(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let oracle: f64 = data.iter().map(|v| v.abs()).sum();
        assert!((fv(&data).l1_norm() - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn rel_l1_error_cases() {
        assert_eq!(
            rel_l1_error(&fv(&[2.0, 2.0]), &fv(&[2.0, 2.0])).unwrap(),
            0.0
        );
        assert_eq!(
            rel_l1_error(&fv(&[4.0, 0.0]), &fv(&[3.0, 0.0])).unwrap(),
            0.25
        );
        assert!(matches!(
            rel_l1_error(&fv(&[0.0, 0.0]), &fv(&[1.0, 0.0])),
            Err(Error::ZeroReference)
        ));
        assert!(matches!(
            rel_l1_error(&fv(&[1.0]), &fv(&[1.0, 2.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn normalize_l2_unit_and_zero_conventions() {
        let n = fv(&[3.0, 4.0]).normalized_l2();
        assert_eq!(n.data(), &[0.6, 0.8]);
        let z = fv(&[0.0, 0.0]).normalized_l2();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn normalize_l2_is_idempotent_on_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let data: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = fv(&data);
            if v.l2_norm() == 0.0 {
                continue;
            }
            let once = v.normalized_l2();
            let twice = once.normalized_l2();
            assert!((once.l2_norm() - 1.0).abs() <= 1e-12);
            for (a, b) in once.data().iter().zip(twice.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn history_capacity_and_ordering() {
        let mut h = SampleHistory::new(2);
        h.push(50, fv(&[1.0]));
        h.push(46, fv(&[2.0]));
        h.push(42, fv(&[3.0]));
        assert_eq!(h.len(), 2);
        assert_eq!(h.latest().unwrap().t, 42);
        assert_eq!(h.latest_interval(), Some(4));
    }

    #[test]
    #[should_panic(expected = "strictly decrease")]
    fn history_rejects_non_decreasing_timesteps() {
        let mut h = SampleHistory::new(3);
        h.push(10, fv(&[1.0]));
        h.push(10, fv(&[2.0]));
    }

    #[test]
    fn finite_difference_first_order_is_pairwise_subtraction() {
        let h = history_from(&[(14, &[1.0, 2.0]), (10, &[3.0, 5.0])], 4);
        let d = finite_difference(&h, 1).unwrap();
        assert_eq!(d.data(), &[2.0, 3.0]);
    }

    #[test]
    fn finite_difference_second_order() {
        let h = history_from(&[(20, &[0.0]), (15, &[1.0]), (10, &[4.0])], 4);
        let d = finite_difference(&h, 2).unwrap();
        assert_eq!(d.data(), &[2.0]); // (4-1) - (1-0)
    }

    #[test]
    fn finite_difference_of_constant_trajectory_vanishes() {
        let h = history_from(
            &[(30, &[5.0, -1.0]), (20, &[5.0, -1.0]), (10, &[5.0, -1.0])],
            4,
        );
        for order in 1..=2 {
            let d = finite_difference(&h, order).unwrap();
            assert!(d.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn finite_difference_errors() {
        let h = history_from(&[(10, &[1.0])], 4);
        assert!(matches!(
            finite_difference(&h, 1),
            Err(Error::InsufficientHistory { needed: 2, have: 1 })
        ));
        let h = history_from(&[(20, &[1.0]), (15, &[2.0]), (11, &[3.0])], 4);
        assert!(matches!(
            finite_difference(&h, 2),
            Err(Error::NonUniformSpacing { .. })
        ));
    }

    #[test]
    fn newton_predict_linear_case_matches_hand_evaluation() {
        // stride 4, latest at t with [3,5], previous difference [2,3]
        let h = history_from(&[(14, &[1.0, 2.0]), (10, &[3.0, 5.0])], 4);
        let p = newton_predict(&h, 8).unwrap();
        assert_eq!(p.data(), &[4.0, 6.5]);
    }

    #[test]
    fn newton_predict_single_point_is_constant() {
        let h = history_from(&[(10, &[7.0, -2.0])], 4);
        for target in [9, 5, 0] {
            let p = newton_predict(&h, target).unwrap();
            assert_eq!(p.data(), &[7.0, -2.0]);
        }
        let empty = SampleHistory::new(2);
        assert!(matches!(
            newton_predict(&empty, 0),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn newton_predict_reconstructs_polynomials_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for degree in 1..=3usize {
            let dim = 5;
            let coeffs: Vec<Vec<f64>> = (0..dim)
                .map(|_| (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let eval = |t: i64| -> Vec<f64> {
                coeffs
                    .iter()
                    .map(|c| {
                        let x = t as f64 / 10.0;
                        c.iter().rev().fold(0.0, |acc, k| acc * x + k)
                    })
                    .collect()
            };
            let mut h = SampleHistory::new(degree + 1);
            // non-uniform spacing on purpose
            let ts = [40, 33, 29, 26];
            for &t in ts.iter().take(degree + 1) {
                h.push(t, fv(&eval(t)));
            }
            for target in [25, 20, 13, 2] {
                let got = newton_predict(&h, target).unwrap();
                let want = eval(target);
                for (g, w) in got.data().iter().zip(&want) {
                    assert!(
                        (g - w).abs() <= 1e-9 * w.abs().max(1.0),
                        "degree {}: {} vs {}",
                        degree,
                        g,
                        w
                    );
                }
            }
        }
    }

    /// Explicit stride-N forecast oracle: latest value plus the sum of
    /// (k^i / i!) * diff_i / N^i over difference orders i = 1..=m.
    fn stride_forecast_oracle(h: &SampleHistory, m: usize, target_t: i64) -> FeatureVec {
        let latest = h.latest().unwrap();
        let stride = h.latest_interval().unwrap();
        let k = (latest.t - target_t) as f64;
        let mut out = latest.value.data().to_vec();
        let mut factorial = 1.0;
        for i in 1..=m {
            factorial *= i as f64;
            let diff = finite_difference(h, i).unwrap();
            let scale = k.powi(i as i32) / (factorial * (stride as f64).powi(i as i32));
            for (o, d) in out.iter_mut().zip(diff.data()) {
                *o += scale * d;
            }
        }
        FeatureVec::unchecked(out, latest.value.shape().to_vec())
    }

    #[test]
    fn newton_matches_stride_forecast_at_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.gen_range(2..6i64);
            let t0 = rng.gen_range(20..40i64);
            let vals: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let mut h = SampleHistory::new(2);
            h.push(t0 + n, fv(&vals[0]));
            h.push(t0, fv(&vals[1]));
            for k in 1..=n {
                let target = t0 - k;
                let newton = newton_predict_recent(&h, 2, target).unwrap();
                let oracle = stride_forecast_oracle(&h, 1, target);
                for (a, b) in newton.data().iter().zip(oracle.data()) {
                    let tol = 1e-12 * b.abs().max(1.0);
                    assert!((a - b).abs() <= tol, "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn stride_forecast_is_not_exact_on_curved_trajectories() {
        // The k^i/i! stride series is a derivative approximation, not an
        // interpolant: on a quadratic it misses by k*N*diff2/(2*N^2) while
        // the divided-difference form reconstructs the value exactly.
        let f = |t: i64| vec![0.5 * (t * t) as f64];
        let mut h = SampleHistory::new(3);
        for t in [18i64, 14, 10] {
            h.push(t, fv(&f(t)));
        }
        for k in 1..=3i64 {
            let target = 10 - k;
            let truth = f(target)[0];
            let newton = newton_predict(&h, target).unwrap().data()[0];
            assert!((newton - truth).abs() <= 1e-9 * truth.abs());

            let series = stride_forecast_oracle(&h, 2, target).data()[0];
            let diff2 = finite_difference(&h, 2).unwrap().data()[0];
            let expected_gap = (k * 4) as f64 * diff2 / (2.0 * 16.0);
            assert!(
                ((truth - series) - expected_gap).abs() <= 1e-9 * truth.abs(),
                "k {}: series {} truth {} gap {}",
                k,
                series,
                truth,
                truth - series
            );
        }
    }

    #[test]
    fn newton_matches_stride_forecast_on_linear_data_at_higher_orders() {
        // On trajectories whose higher-order differences vanish, the
        // interpolating polynomial and the stride forecast coincide at
        // every order; on generic data they agree only at first order.
        for m in 2..=3usize {
            let mut h = SampleHistory::new(m + 1);
            let slope = [0.5, -1.25];
            let base = [2.0, 3.0];
            let ts: Vec<i64> = (0..=m as i64).map(|j| 30 + 4 * (m as i64 - j)).collect();
            for &t in &ts {
                let v: Vec<f64> = base
                    .iter()
                    .zip(&slope)
                    .map(|(b, s)| b + s * t as f64)
                    .collect();
                h.push(t, fv(&v));
            }
            for target in [29, 27, 24] {
                let newton = newton_predict_recent(&h, m + 1, target).unwrap();
                let oracle = stride_forecast_oracle(&h, m, target);
                for (a, b) in newton.data().iter().zip(oracle.data()) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }
}
