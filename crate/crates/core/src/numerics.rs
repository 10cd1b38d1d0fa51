//! Dense vector arithmetic, the angle between two vectors, and seeded
//! randomness shared by the rest of the crate.

use std::f64::consts::PI;
use std::ops::Deref;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("length mismatch: left has {left} elements, right has {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("negative denominator {value} at index {index}")]
    NegativeDenominator { index: usize, value: f64 },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// Binary elementwise operation applied by [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl ElementOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementOp::Add => a + b,
            ElementOp::Sub => a - b,
            ElementOp::Mul => a * b,
            ElementOp::Max => a.max(b),
        }
    }
}

/// Flat vector of parameters or per-parameter optimizer state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, NumericsError> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    /// Wraps values without the finiteness check. Used internally where the
    /// inputs are already known to be finite.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }

    /// Checks that every element is finite.
    pub fn validate(&self) -> Result<(), NumericsError> {
        check_finite(&self.0)
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = NumericsError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl<const N: usize> From<[f64; N]> for ParamVector {
    /// Panics if any element is not finite.
    fn from(values: [f64; N]) -> Self {
        Self::new(values.to_vec()).expect("array literal must be finite")
    }
}

fn check_finite(values: &[f64]) -> Result<(), NumericsError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(NumericsError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_len(a: &[f64], b: &[f64]) -> Result<(), NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn elementwise(
    a: &ParamVector,
    b: &ParamVector,
    op: ElementOp,
) -> Result<ParamVector, NumericsError> {
    check_len(a, b)?;
    let out: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| op.apply(x, y))
        .collect();
    check_finite(&out)?;
    Ok(ParamVector(out))
}

/// Computes `num[i] / (sqrt(den[i]) + delta)`.
///
/// A zero numerator over a zero denominator yields 0. Any other non-finite
/// quotient is an error.
pub fn scale_sqrt_div(
    num: &ParamVector,
    den: &ParamVector,
    delta: f64,
) -> Result<ParamVector, NumericsError> {
    check_len(num, den)?;
    let mut out = Vec::with_capacity(num.len());
    for (index, (&n, &d)) in num.iter().zip(den.iter()).enumerate() {
        if d < 0.0 {
            return Err(NumericsError::NegativeDenominator { index, value: d });
        }
        out.push(sqrt_ratio(n, d, delta));
    }
    check_finite(&out)?;
    Ok(ParamVector(out))
}

#[inline]
pub(crate) fn sqrt_ratio(num: f64, den: f64, delta: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / (den.sqrt() + delta)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle in `[0, pi]` between `a` and `b`. Zero if either vector is zero.
///
/// Evaluated as `2 atan2(| |a| b - |b| a |, | |a| b + |b| a |)`, which agrees
/// with `acos(<a, b> / (|a| |b|))` but keeps full precision near 0 and pi.
pub fn angle_between(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_len(a, b)?;
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let u = na * y;
        let v = nb * x;
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let theta = 2.0 * diff.sqrt().atan2(sum.sqrt());
    Ok(theta.clamp(0.0, PI))
}

/// Seeded generator with a platform-independent stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from this generator's seed and a tag.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw from `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn index(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn uniform_vector(&mut self, len: usize, low: f64, high: f64) -> ParamVector {
        ParamVector((0..len).map(|_| self.uniform(low, high)).collect())
    }

    pub fn normal_vector(&mut self, len: usize, scale: f64) -> ParamVector {
        ParamVector((0..len).map(|_| scale * self.normal()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assume, proptest, Strategy};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn elementwise_examples() {
        let max = elementwise(&[1.0, 5.0].into(), &[3.0, 2.0].into(), ElementOp::Max).unwrap();
        assert_eq!(max.as_slice(), &[3.0, 5.0]);

        let g: ParamVector = [-8.0, -8.0].into();
        let sq = elementwise(&g, &g, ElementOp::Mul).unwrap();
        assert_eq!(sq.as_slice(), &[64.0, 64.0]);

        let x: ParamVector = [1.5, -2.0, 3.25].into();
        let sum = elementwise(&x, &ParamVector::zeros(3), ElementOp::Add).unwrap();
        assert_eq!(sum, x);
    }

    #[test]
    fn elementwise_length_mismatch_names_both_lengths() {
        let err = elementwise(&[1.0].into(), &[1.0, 2.0].into(), ElementOp::Sub).unwrap_err();
        assert_eq!(err, NumericsError::LengthMismatch { left: 1, right: 2 });
        let msg = err.to_string();
        assert!(msg.contains('1') && msg.contains('2'));
    }

    #[test]
    fn elementwise_overflow_is_rejected() {
        let big: ParamVector = [f64::MAX].into();
        let err = elementwise(&big, &big, ElementOp::Mul).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { index: 0, .. }));
    }

    #[test]
    fn scale_sqrt_div_examples() {
        let r = scale_sqrt_div(&[2.0].into(), &[4.0].into(), 0.0).unwrap();
        assert_eq!(r.as_slice(), &[1.0]);

        let r = scale_sqrt_div(&[0.0].into(), &[0.0].into(), 1e-8).unwrap();
        assert_eq!(r.as_slice(), &[0.0]);

        // -0.008 / sqrt(0.064) = -0.0316227766...
        let r = scale_sqrt_div(&[-0.008].into(), &[0.064].into(), 0.0).unwrap();
        assert!((r[0] + 0.031_622_776_601_683_79).abs() < 1e-15);
    }

    #[test]
    fn scale_sqrt_div_rejects_negative_and_unguarded_zero() {
        let err = scale_sqrt_div(&[1.0, 1.0].into(), &[1.0, -1.0].into(), 0.0).unwrap_err();
        assert_eq!(
            err,
            NumericsError::NegativeDenominator {
                index: 1,
                value: -1.0
            }
        );

        let err = scale_sqrt_div(&[1.0].into(), &[0.0].into(), 0.0).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { index: 0, .. }));
    }

    #[test]
    fn angle_examples() {
        assert!((angle_between(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((angle_between(&[1.0, 1.0], &[-1.0, -1.0]).unwrap() - PI).abs() < 1e-15);
        assert_eq!(angle_between(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(angle_between(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[0.0; 4]), 0.0);
        assert!((l2_norm(&[-8.0, -8.0]) - 8.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rng_streams_repeat() {
        let draw = |seed| {
            let mut rng = Rng::new(seed);
            (0..64)
                .flat_map(|_| {
                    let mut bytes = rng.next_u64().to_le_bytes().to_vec();
                    bytes.extend(rng.normal().to_le_bytes());
                    bytes
                })
                .collect::<Vec<u8>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn rng_stream_is_pinned() {
        // Frozen first draws; a change here means the stream is no longer
        // reproducible across builds.
        const PINNED: [u64; 3] = [
            2910824217569608635,
            3098856782162503994,
            12991601491111613745,
        ];
        let mut rng = Rng::new(7);
        let first: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(first, PINNED);
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = Rng::derive(5, 0);
        let mut b = Rng::derive(5, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3..1e3f64, len)
    }

    proptest! {
        #[test]
        fn angle_is_symmetric(a in finite_vec(6), b in finite_vec(6)) {
            let ab = angle_between(&a, &b).unwrap();
            let ba = angle_between(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&ab));
        }

        #[test]
        fn angle_with_scaled_self(a in finite_vec(5), c in 1e-3..1e3f64, flip in any::<bool>()) {
            prop_assume!(l2_norm(&a) > 1e-6);
            let c = if flip { -c } else { c };
            let b: Vec<f64> = a.iter().map(|x| c * x).collect();
            let theta = angle_between(&a, &b).unwrap();
            prop_assert!(!theta.is_nan());
            let expected = if c > 0.0 { 0.0 } else { PI };
            prop_assert!((theta - expected).abs() < 1e-6, "theta={theta}");
        }
    }

    #[test]
    fn angle_never_nan_when_cosine_overshoots() {
        // These vectors produce an unclamped cosine slightly above 1.
        let a = [0.1, 0.2, 0.3];
        let b = [0.1 * 3.0, 0.2 * 3.0, 0.3 * 3.0];
        let theta = angle_between(&a, &b).unwrap();
        assert!(theta.is_finite());
        for k in 1..500 {
            let s = k as f64 * 0.37;
            let b: Vec<f64> = a.iter().map(|x| x * s).collect();
            assert!(angle_between(&a, &b).unwrap().is_finite());
            let b: Vec<f64> = a.iter().map(|x| -x * s).collect();
            assert!(angle_between(&a, &b).unwrap().is_finite());
        }
    }
}
