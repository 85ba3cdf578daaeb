//! Count Sketch over real-valued vectors.
//!
//! A sketch is a `t x k` table of signed counters. Encoding adds
//! `sign_j(i) * g_i` into bin `h_j(i)` of every row `j`; a point query returns
//! the median over rows of `sign_j(i) * S[j][h_j(i)]`. Encoding is linear, so
//! sketches built with the same dimensions and master seed can be summed and
//! scaled without decoding.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::hashing::{derive_row_seeds, RowSeed};
use crate::scalar::Scalar;

/// A length-`n` real vector: a gradient, a model delta or model weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector<T>(Vec<T>);

impl<T: Scalar> DenseVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_squared(&self) -> T {
        self.0.iter().map(|&v| v * v).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: T, other: &[T]) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        for (x, &y) in self.0.iter_mut().zip(other) {
            *x += c * y;
        }
        Ok(())
    }
}

impl<T> Deref for DenseVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for DenseVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for DenseVector<T> {
    fn from(values: Vec<T>) -> Self {
        Self(values)
    }
}

/// Table shape `t x k` together with the input dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SketchDims {
    pub t: usize,
    pub k: usize,
    pub n: usize,
}

impl SketchDims {
    pub fn new(t: usize, k: usize, n: usize) -> Result<Self> {
        let dims = Self { t, k, n };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.k == 0 || self.n == 0 {
            return Err(Error::invalid(format!(
                "sketch dimensions must be positive, got t={} k={} n={}",
                self.t, self.k, self.n
            )));
        }
        if self.t > u32::MAX as usize || self.k > u32::MAX as usize {
            return Err(Error::invalid("t and k must fit in 32 bits"));
        }
        if self.t.checked_mul(self.k).is_none() {
            return Err(Error::invalid("t * k overflows"));
        }
        Ok(())
    }

    pub fn table_len(&self) -> usize {
        self.t * self.k
    }

    /// `n / (t * k)`.
    pub fn compression_ratio(&self) -> f64 {
        self.n as f64 / self.table_len() as f64
    }
}

/// `n / (t * k)` for validated dimensions.
pub fn compression_ratio(dims: &SketchDims) -> Result<f64> {
    dims.validate()?;
    Ok(dims.compression_ratio())
}

/// Table shape meeting a target relative error `mu` with failure
/// probability `delta`: `t = ceil(ln(1/delta))` rounded up to odd and
/// `k = ceil(e / mu^2)`. Returns `(t, k)`.
pub fn dims_for_error(mu: f64, delta: f64) -> Result<(usize, usize)> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::invalid(format!("mu must be in (0, 1), got {mu}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let mut t = (1.0 / delta).ln().ceil().max(1.0) as usize;
    if t.is_multiple_of(2) {
        t += 1;
    }
    let k = (std::f64::consts::E / (mu * mu)).ceil() as usize;
    Ok((t, k))
}

/// Median with the even-length convention: mean of the two middle values.
///
/// Reorders `values`. Inputs must be finite.
pub(crate) fn median_in_place<T: Scalar>(values: &mut [T]) -> T {
    debug_assert!(!values.is_empty());
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite sketch reads"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / T::of(2.0)
    }
}

/// The `t x k` signed counter table plus the seed that fixes its hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSketch<T> {
    dims: SketchDims,
    master_seed: u64,
    index_seeds: Vec<RowSeed>,
    sign_seeds: Vec<RowSeed>,
    counters: Vec<T>,
}

impl<T: Scalar> CountSketch<T> {
    /// An all-zero sketch.
    pub fn new(dims: SketchDims, master_seed: u64) -> Result<Self> {
        dims.validate()?;
        let (index_seeds, sign_seeds) = (0..dims.t)
            .map(|j| derive_row_seeds(master_seed, j))
            .unzip();
        Ok(Self {
            dims,
            master_seed,
            index_seeds,
            sign_seeds,
            counters: vec![T::zero(); dims.table_len()],
        })
    }

    /// Rebuilds a sketch around existing counters (row-major, `t * k` long).
    pub fn from_counters(dims: SketchDims, master_seed: u64, counters: Vec<T>) -> Result<Self> {
        let mut sketch = Self::new(dims, master_seed)?;
        if counters.len() != dims.table_len() {
            return Err(Error::DimensionMismatch {
                expected: dims.table_len(),
                found: counters.len(),
            });
        }
        sketch.counters = counters;
        Ok(sketch)
    }

    pub fn dims(&self) -> SketchDims {
        self.dims
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Row-major counters.
    pub fn counters(&self) -> &[T] {
        &self.counters
    }

    pub(crate) fn counters_mut(&mut self) -> &mut [T] {
        &mut self.counters
    }

    pub fn row(&self, j: usize) -> &[T] {
        let k = self.dims.k;
        &self.counters[j * k..(j + 1) * k]
    }

    pub fn index_seed(&self, row: usize) -> &RowSeed {
        &self.index_seeds[row]
    }

    pub fn sign_seed(&self, row: usize) -> &RowSeed {
        &self.sign_seeds[row]
    }

    pub fn compression_ratio(&self) -> f64 {
        self.dims.compression_ratio()
    }

    /// Adds `g` into the table.
    pub fn encode(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.dims.n {
            return Err(Error::DimensionMismatch {
                expected: self.dims.n,
                found: g.len(),
            });
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite input at coordinate {i}"
            )));
        }
        let k = self.dims.k;
        // Hot loop: row-outer so each row's counters stay in cache.
        for (j, row) in self.counters.chunks_exact_mut(k).enumerate() {
            let ix = &self.index_seeds[j];
            let sg = &self.sign_seeds[j];
            for (i, &v) in g.iter().enumerate() {
                let bin = ix.bin_unchecked(i as u64, k as u64);
                if sg.sign_positive(i as u64) {
                    row[bin] += v;
                } else {
                    row[bin] -= v;
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn signed_read(&self, j: usize, i: usize) -> T {
        let k = self.dims.k;
        let bin = self.index_seeds[j].bin_unchecked(i as u64, k as u64);
        let c = self.counters[j * k + bin];
        if self.sign_seeds[j].sign_positive(i as u64) {
            c
        } else {
            -c
        }
    }

    /// Single-row estimate `sign_j(i) * S[j][h_j(i)]`.
    pub fn row_estimate(&self, j: usize, i: usize) -> Result<T> {
        if j >= self.dims.t {
            return Err(Error::IndexOutOfBounds {
                index: j,
                len: self.dims.t,
            });
        }
        if i >= self.dims.n {
            return Err(Error::IndexOutOfBounds {
                index: i,
                len: self.dims.n,
            });
        }
        Ok(self.signed_read(j, i))
    }

    /// Median-of-rows estimate of coordinate `i`.
    pub fn query(&self, i: usize) -> Result<T> {
        if i >= self.dims.n {
            return Err(Error::IndexOutOfBounds {
                index: i,
                len: self.dims.n,
            });
        }
        let mut reads: Vec<T> = (0..self.dims.t).map(|j| self.signed_read(j, i)).collect();
        Ok(median_in_place(&mut reads))
    }

    /// Estimates of all `n` coordinates.
    pub fn query_all(&self) -> DenseVector<T> {
        self.query_prefix(self.dims.n)
    }

    /// Estimates of the first `len` coordinates (`len` clamped to `n`).
    ///
    /// Used to drop padding coordinates without querying them.
    pub fn query_prefix(&self, len: usize) -> DenseVector<T> {
        let len = len.min(self.dims.n);
        let t = self.dims.t;
        if t == 1 {
            return DenseVector((0..len).map(|i| self.signed_read(0, i)).collect());
        }
        let mut reads = vec![T::zero(); t];
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            for (j, r) in reads.iter_mut().enumerate() {
                *r = self.signed_read(j, i);
            }
            out.push(median_in_place(&mut reads));
        }
        DenseVector(out)
    }

    /// Fails unless `other` has equal dims and master seed.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        let pairs: [(&'static str, u64, u64); 4] = [
            ("t", self.dims.t as u64, other.dims.t as u64),
            ("k", self.dims.k as u64, other.dims.k as u64),
            ("n", self.dims.n as u64, other.dims.n as u64),
            ("master_seed", self.master_seed, other.master_seed),
        ];
        for (field, left, right) in pairs {
            if left != right {
                return Err(Error::MergeIncompatible { field, left, right });
            }
        }
        Ok(())
    }

    /// Element-wise `self += other`.
    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, &b) in self.counters.iter_mut().zip(&other.counters) {
            *a += b;
        }
        Ok(())
    }

    /// Multiplies every counter by `c`.
    pub fn scale_by(&mut self, c: T) -> Result<()> {
        if !c.is_finite() {
            return Err(Error::invalid("scale factor must be finite"));
        }
        for v in &mut self.counters {
            *v *= c;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.counters.iter().all(|v| v.is_zero())
    }
}

/// Sum of two compatible sketches.
pub fn merge<T: Scalar>(a: &CountSketch<T>, b: &CountSketch<T>) -> Result<CountSketch<T>> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}

/// `c * sketch`.
pub fn scale<T: Scalar>(sketch: &CountSketch<T>, c: T) -> Result<CountSketch<T>> {
    let mut out = sketch.clone();
    out.scale_by(c)?;
    Ok(out)
}

/// Fresh sketch of `g`.
pub fn sketch_of<T: Scalar>(dims: SketchDims, master_seed: u64, g: &[T]) -> Result<CountSketch<T>> {
    let mut s = CountSketch::new(dims, master_seed)?;
    s.encode(g)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{index_hash, sign_hash};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| f64::sample_standard_normal(&mut rng))
            .collect()
    }

    /// Direct transcription of the two loops of the algorithm, using the
    /// public hash functions rather than the sketch internals.
    fn brute_force_query(dims: SketchDims, seed: u64, g: &[f64], i: usize) -> f64 {
        let mut table = vec![vec![0.0; dims.k]; dims.t];
        let seeds: Vec<_> = (0..dims.t).map(|j| derive_row_seeds(seed, j)).collect();
        for (idx, &v) in g.iter().enumerate() {
            for (j, (ix, sg)) in seeds.iter().enumerate() {
                let b = index_hash(ix, idx as u64, dims.k).unwrap();
                table[j][b] += f64::from(sign_hash(sg, idx as u64)) * v;
            }
        }
        let mut reads: Vec<f64> = seeds
            .iter()
            .enumerate()
            .map(|(j, (ix, sg))| {
                f64::from(sign_hash(sg, i as u64))
                    * table[j][index_hash(ix, i as u64, dims.k).unwrap()]
            })
            .collect();
        reads.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = reads.len() / 2;
        if reads.len() % 2 == 1 {
            reads[m]
        } else {
            0.5 * (reads[m - 1] + reads[m])
        }
    }

    #[test]
    fn new_sketch_is_zero() {
        let s = CountSketch::<f64>::new(SketchDims::new(2, 3, 10).unwrap(), 1).unwrap();
        assert_eq!(s.counters().len(), 6);
        assert!(s.is_zero());
        let wide = CountSketch::<f64>::new(SketchDims::new(7, 22, 7850).unwrap(), 1).unwrap();
        assert_eq!(wide.counters().len(), 154);
    }

    #[test]
    fn invalid_dims() {
        assert!(SketchDims::new(0, 3, 10).is_err());
        assert!(SketchDims::new(3, 0, 10).is_err());
        assert!(SketchDims::new(3, 3, 0).is_err());
        let bad = SketchDims { t: 0, k: 3, n: 10 };
        assert!(matches!(
            CountSketch::<f64>::new(bad, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn encode_errors() {
        let mut s = CountSketch::<f64>::new(SketchDims::new(2, 3, 4).unwrap(), 0).unwrap();
        assert_eq!(
            s.encode(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 2
            })
        );
        assert!(matches!(
            s.encode(&[1.0, f64::NAN, 0.0, 0.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            s.encode(&[1.0, f64::INFINITY, 0.0, 0.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(s.is_zero());
    }

    #[test]
    fn encode_zero_is_noop() {
        let mut s = CountSketch::<f64>::new(SketchDims::new(3, 5, 20).unwrap(), 9).unwrap();
        s.encode(&[0.0; 20]).unwrap();
        assert!(s.is_zero());
    }

    #[test]
    fn single_cell() {
        let mut s = CountSketch::<f64>::new(SketchDims::new(1, 1, 1).unwrap(), 5).unwrap();
        s.encode(&[3.5]).unwrap();
        assert_eq!(s.counters()[0].abs(), 3.5);
        assert_eq!(s.query(0).unwrap(), 3.5);
    }

    #[test]
    fn one_sparse_is_exact() {
        for t in 1..6 {
            let dims = SketchDims::new(t, 4, 50).unwrap();
            let mut g = vec![0.0; 50];
            g[17] = -2.25;
            let s = sketch_of(dims, 77, &g).unwrap();
            assert_eq!(s.query(17).unwrap(), -2.25);
            let mut e = vec![0.0; 50];
            e[3] = 1.0;
            assert_eq!(sketch_of(dims, 78, &e).unwrap().query(3).unwrap(), 1.0);
        }
    }

    #[test]
    fn query_out_of_range() {
        let s = CountSketch::<f64>::new(SketchDims::new(2, 3, 4).unwrap(), 0).unwrap();
        assert_eq!(
            s.query(4),
            Err(Error::IndexOutOfBounds { index: 4, len: 4 })
        );
        assert_eq!(s.query(0).unwrap(), 0.0);
        assert!(s.query_all().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn query_matches_brute_force() {
        for (t, seed) in [(3usize, 1u64), (4, 2), (5, 3)] {
            let dims = SketchDims::new(t, 4, 8).unwrap();
            let g = gaussian(8, seed);
            let s = sketch_of(dims, seed * 31, &g).unwrap();
            let all = s.query_all();
            for i in 0..8 {
                let expect = brute_force_query(dims, seed * 31, &g, i);
                assert!((s.query(i).unwrap() - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                assert_eq!(all[i], s.query(i).unwrap());
            }
        }
    }

    #[test]
    fn merge_identity_and_inverse() {
        let dims = SketchDims::new(5, 50, 200).unwrap();
        let g = gaussian(200, 4);
        let a = sketch_of(dims, 3, &g).unwrap();
        let zero = CountSketch::new(dims, 3).unwrap();
        assert_eq!(merge(&a, &zero).unwrap(), a);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let b = sketch_of(dims, 3, &neg).unwrap();
        assert!(merge(&a, &b)
            .unwrap()
            .counters()
            .iter()
            .all(|c| c.abs() <= 1e-12));
    }

    #[test]
    fn merge_names_differing_field() {
        let a = CountSketch::<f64>::new(SketchDims::new(2, 3, 10).unwrap(), 1).unwrap();
        let b = CountSketch::<f64>::new(SketchDims::new(2, 3, 10).unwrap(), 2).unwrap();
        let c = CountSketch::<f64>::new(SketchDims::new(2, 4, 10).unwrap(), 1).unwrap();
        assert!(matches!(
            merge(&a, &b),
            Err(Error::MergeIncompatible {
                field: "master_seed",
                ..
            })
        ));
        assert!(matches!(
            merge(&a, &c),
            Err(Error::MergeIncompatible { field: "k", .. })
        ));
    }

    #[test]
    fn scale_cases() {
        let dims = SketchDims::new(3, 8, 30).unwrap();
        let s = sketch_of(dims, 12, &gaussian(30, 12)).unwrap();
        assert_eq!(scale(&s, 1.0).unwrap(), s);
        assert!(scale(&s, 0.0).unwrap().is_zero());
        let half = scale(&s, 0.5).unwrap().query_all();
        for (h, q) in half.iter().zip(s.query_all().iter()) {
            assert_eq!(*h, 0.5 * q);
        }
        assert!(matches!(
            scale(&s, f64::NAN),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            scale(&s, f64::INFINITY),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn even_rows_use_middle_mean() {
        let mut v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median_in_place(&mut v), 2.5);
        let mut v = [5.0, -1.0, 2.0];
        assert_eq!(median_in_place(&mut v), 2.0);
    }

    #[test]
    fn dims_for_error_examples() {
        assert_eq!(dims_for_error(0.25, 0.01).unwrap(), (5, 44));
        assert_eq!(dims_for_error(0.999_999, 0.5).unwrap(), (1, 3));
        // ceil(ln 10) = 3 is odd; ceil(ln 20) = 3; ceil(ln 1000) = 7; ceil(ln 50) = 4 -> 5
        assert_eq!(dims_for_error(0.5, 0.1).unwrap().0, 3);
        assert_eq!(dims_for_error(0.5, 0.02).unwrap().0, 5);
        for (mu, delta) in [
            (0.0, 0.5),
            (1.0, 0.5),
            (0.5, 0.0),
            (0.5, 1.0),
            (f64::NAN, 0.5),
        ] {
            assert!(dims_for_error(mu, delta).is_err());
        }
    }

    #[test]
    fn compression_ratio_examples() {
        let r50 = compression_ratio(&SketchDims::new(7, 22, 7850).unwrap()).unwrap();
        let r75 = compression_ratio(&SketchDims::new(7, 15, 7850).unwrap()).unwrap();
        assert!((r50 - 50.974).abs() < 1e-3);
        assert!((r75 - 74.762).abs() < 1e-3);
        assert_eq!(
            compression_ratio(&SketchDims::new(1, 100, 100).unwrap()).unwrap(),
            1.0
        );
    }

    #[test]
    fn f32_sketch_works() {
        let dims = SketchDims::new(3, 16, 40).unwrap();
        let mut g = vec![0.0f32; 40];
        g[7] = 1.5;
        let s = sketch_of(dims, 1, &g).unwrap();
        assert_eq!(s.query(7).unwrap(), 1.5f32);
    }
}
