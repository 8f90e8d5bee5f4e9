//! Unit feature vectors and order-independent accumulation.
//!
//! Sums of f32 features are accumulated in 2^-40 fixed point so a mean over a
//! set does not depend on the order the members are visited in.

/// Fixed-point scale used by [`FixedSum`].
const FIXED_SCALE: f64 = (1u64 << 40) as f64;

/// Order-independent accumulator for a set of feature vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedSum {
    acc: Vec<i64>,
    count: usize,
}

impl FixedSum {
    pub fn new(dim: usize) -> Self {
        Self { acc: vec![0; dim], count: 0 }
    }

    #[inline]
    pub fn add(&mut self, feature: &[f32]) {
        debug_assert_eq!(feature.len(), self.acc.len());
        for (a, &x) in self.acc.iter_mut().zip(feature) {
            *a += (x as f64 * FIXED_SCALE).round() as i64;
        }
        self.count += 1;
    }

    /// Exact inverse of [`FixedSum::add`] for a previously added feature.
    #[inline]
    pub fn sub(&mut self, feature: &[f32]) {
        debug_assert_eq!(feature.len(), self.acc.len());
        for (a, &x) in self.acc.iter_mut().zip(feature) {
            *a -= (x as f64 * FIXED_SCALE).round() as i64;
        }
        self.count -= 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// The L2-normalized sum (equivalently, mean). `None` when the sum vanishes.
    pub fn normalized(&self) -> Option<Vec<f32>> {
        let v: Vec<f64> = self.acc.iter().map(|&a| a as f64 / FIXED_SCALE).collect();
        normalize_f64(&v).map(|n| n.into_iter().map(|x| x as f32).collect())
    }
}

/// L2-normalized arithmetic mean of `features`; `None` for an empty set or a zero mean.
pub fn normalized_mean<'a, I>(dim: usize, features: I) -> Option<Vec<f32>>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut sum = FixedSum::new(dim);
    for f in features {
        sum.add(f);
    }
    if sum.count() == 0 {
        return None;
    }
    sum.normalized()
}

pub fn norm_f32(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity of two f32 vectors; 0 when either is zero.
pub fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    let n = norm_f32(a) * norm_f32(b);
    if n == 0.0 {
        0.0
    } else {
        dot_f32(a, b) / n
    }
}

pub fn normalize_f64(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

/// Normalizes an f32 vector through f64; `None` on zero or non-finite norm.
pub fn normalize_f32(v: &[f32]) -> Option<Vec<f32>> {
    let n = norm_f32(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}
