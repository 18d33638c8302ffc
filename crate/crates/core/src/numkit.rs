//! Dense vector primitives, box projection and the seeded random source
//! shared by every other module.
//!
//! All randomness flows through [`SimRng`], a ChaCha8 stream cipher
//! generator. Sub-streams for a particular (trial, round, client) are derived
//! with [`SimRng::stream`], so adding or removing a consumer never perturbs
//! the draws seen by the others.

use std::ops::Index;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Flat model-parameter vector. Every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vectors are never empty");
        ParamVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim > 0 && value.is_finite());
        ParamVector(vec![value; dim])
    }

    /// Wraps values produced by arithmetic on already valid vectors.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite parameter");
        ParamVector(values)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(ParamVector::from_raw(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + other`.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(ParamVector::from_raw(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector::from_raw(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &ParamVector) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Axis-aligned feasible region for model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::Empty("box domain"));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(Error::InvalidArgument(format!(
                    "box bound {i}: lo {l} exceeds hi {h}"
                )));
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    /// `[-bound, bound]` on every coordinate.
    pub fn symmetric(dim: usize, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box bound must be nonnegative, got {bound}"
            )));
        }
        BoxDomain::new(vec![-bound; dim], vec![bound; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, v: &ParamVector) -> bool {
        v.dim() == self.dim()
            && v
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| l <= x && x <= h)
    }
}

/// Euclidean distance `‖a − b‖₂`.
pub fn euclidean_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(distance_unchecked(a.as_slice(), b.as_slice()))
}

#[inline]
pub(crate) fn distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Coordinate-wise clamp into `dom`.
pub fn project_box(v: &ParamVector, dom: &BoxDomain) -> Result<ParamVector> {
    let mut out = v.clone();
    project_box_in_place(&mut out, dom)?;
    Ok(out)
}

pub fn project_box_in_place(v: &mut ParamVector, dom: &BoxDomain) -> Result<()> {
    check_dim(dom.dim(), v.dim())?;
    for ((x, l), h) in v.as_mut_slice().iter_mut().zip(&dom.lo).zip(&dom.hi) {
        *x = x.clamp(*l, *h);
    }
    Ok(())
}

/// A vector of norm exactly `eps` pointing in a direction drawn from an
/// isotropic Gaussian with standard deviation `sigma`.
pub fn clipped_gaussian_direction(
    dim: usize,
    sigma: f64,
    eps: f64,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) || !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma ({sigma}) and eps ({eps}) must be positive and finite"
        )));
    }
    loop {
        let noise: Vec<f64> = (0..dim).map(|_| sigma * rng.normal()).collect();
        let norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            return Ok(ParamVector::from_raw(
                noise.into_iter().map(|v| (v / norm) * eps).collect(),
            ));
        }
    }
}

/// Deterministic random source (ChaCha8, 64-bit seed).
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn seed_from(seed: u64) -> Self {
        SimRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent sub-stream keyed by `seed` and a path such as
    /// `[trial, round, client]`.
    pub fn stream(seed: u64, path: &[u64]) -> Self {
        let mut key = splitmix64(seed);
        for &p in path {
            key = splitmix64(key ^ splitmix64(p.wrapping_add(0x5851_f42d_4c95_7f2d)));
        }
        SimRng::seed_from(key)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.inner.gen_range(0..n)
    }

    pub fn next_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
