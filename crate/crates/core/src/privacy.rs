//! Privacy accounting for sketched vectors.
//!
//! For an input of length `n` whose entries are roughly `N(0, sigma^2)` and
//! bounded by `alpha`, a `t x k` Count Sketch is `eps`-differentially private
//! (with high probability) for
//!
//! ```text
//! X   = alpha^2 k (k - 1) (1 + ln(n - k)) / (sigma^2 (n - 2))
//! eps = t ln(1 + beta X),   subject to X <= 1/2 - 1/beta
//! ```
//!
//! We take the smallest admissible `beta = 1 / (1/2 - X)`, which collapses
//! the bound to `eps = -t ln(1 - 2X)`. No `beta` exists once `X >= 1/2`, and
//! the accountant then reports no guarantee.
//!
//! The guarantee only holds on the high-probability event that every bin is
//! occupied and every entry is within `alpha`; we report it unconditionally.
//! Accounting is per worker and per round, with no composition across rounds.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sketch::{CountSketch, DenseVector, SketchDims};

/// Floor substituted for a zero `alpha` or `sigma^2`.
pub const STATS_FLOOR: f64 = 1e-12;

/// Default quantile of `|g_i|` used as the bound `alpha`.
pub const DEFAULT_ALPHA_PERCENTILE: f64 = 0.9;

/// Estimated input distribution of one worker's vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStats<T> {
    pub alpha: T,
    pub sigma2: T,
    /// Effective length, padding included.
    pub n: usize,
    /// Set when `alpha` or `sigma2` had to be floored.
    pub degenerate: bool,
}

impl<T: Scalar> GradientStats<T> {
    pub fn new(alpha: T, sigma2: T, n: usize) -> Result<Self> {
        if !(alpha > T::zero() && alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(sigma2 > T::zero() && sigma2.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        Ok(Self {
            alpha,
            sigma2,
            n,
            degenerate: false,
        })
    }

    /// Same distribution, `m_pad` more entries.
    pub fn with_padding(self, m_pad: usize) -> Self {
        Self {
            n: self.n + m_pad,
            ..self
        }
    }
}

/// `alpha` is the nearest-rank `percentile` of `|g_i|`; `sigma^2` is the
/// unbiased sample variance.
pub fn estimate_stats<T: Scalar>(g: &[T], percentile: T) -> Result<GradientStats<T>> {
    if g.is_empty() {
        return Err(Error::invalid(
            "cannot estimate statistics of an empty vector",
        ));
    }
    if !(percentile > T::zero() && percentile <= T::one()) {
        return Err(Error::invalid(format!(
            "percentile must be in (0, 1], got {percentile}"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite entry"));
    }
    let n = g.len();
    let mut mags: Vec<T> = g.iter().map(|v| v.abs()).collect();
    let rank = (percentile.as_f64() * n as f64).ceil().clamp(1.0, n as f64) as usize;
    let (_, alpha, _) =
        mags.select_nth_unstable_by(rank - 1, |a, b| a.partial_cmp(b).expect("finite"));
    let alpha = *alpha;

    let sigma2 = if n >= 2 {
        let nf = T::of(n as f64);
        let mean = g.iter().copied().sum::<T>() / nf;
        g.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (nf - T::one())
    } else {
        T::zero()
    };

    let floor = T::of(STATS_FLOOR);
    let degenerate = !(alpha > floor) || !(sigma2 > floor);
    Ok(GradientStats {
        alpha: alpha.max(floor),
        sigma2: sigma2.max(floor),
        n,
        degenerate,
    })
}

/// The collision term `X`. Errors name the violated precondition.
pub fn collision_term<T: Scalar>(stats: &GradientStats<T>, dims: &SketchDims) -> Result<T> {
    let (n, k) = (stats.n, dims.k);
    if k < 2 {
        return Err(Error::invalid(format!(
            "accountant requires k >= 2, got k={k}"
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!(
            "accountant requires n >= 3, got n={n}"
        )));
    }
    if n <= k {
        return Err(Error::invalid(format!(
            "accountant requires n > k, got n={n} k={k}"
        )));
    }
    if dims.t == 0 {
        return Err(Error::invalid("accountant requires t >= 1"));
    }
    if !(stats.alpha > T::zero() && stats.sigma2 > T::zero()) {
        return Err(Error::invalid(
            "accountant requires alpha > 0 and sigma2 > 0",
        ));
    }
    let kf = T::of(k as f64);
    let collisions = kf * (kf - T::one());
    let log_term = T::one() + T::of((n - k) as f64).ln();
    let ratio = stats.alpha * stats.alpha / stats.sigma2;
    Ok(ratio * collisions * log_term / T::of((n - 2) as f64))
}

/// Per-round `eps` of a plain sketch, or `None` when no admissible `beta`
/// exists (`X >= 1/2`).
pub fn sketch_epsilon<T: Scalar>(stats: &GradientStats<T>, dims: &SketchDims) -> Result<Option<T>> {
    let x = collision_term(stats, dims)?;
    let two_x = x + x;
    if !(two_x < T::one()) {
        return Ok(None);
    }
    Ok(Some(-T::of(dims.t as f64) * (-two_x).ln_1p()))
}

/// `t ln(1 + beta X)` with `beta = 1/(1/2 - X)`. Same value as
/// [`sketch_epsilon`]; kept as a cross-check of the simplification.
pub fn sketch_epsilon_beta_form<T: Scalar>(
    stats: &GradientStats<T>,
    dims: &SketchDims,
) -> Result<Option<T>> {
    let x = collision_term(stats, dims)?;
    let half = T::of(0.5);
    if !(x < half) {
        return Ok(None);
    }
    let beta = T::one() / (half - x);
    Ok(Some(T::of(dims.t as f64) * (beta * x).ln_1p()))
}

/// Outcome of the per-round validation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyReport<T> {
    /// `eps` of the sketch alone; `None` when undefined.
    pub eps_sketch: Option<T>,
    pub eps_target: T,
    pub noise_added: bool,
    /// Laplace scale in counter units, zero when no noise was added.
    pub laplace_scale: T,
    pub eps_attained: T,
}

impl<T: Scalar> PrivacyReport<T> {
    /// Checks the report invariants.
    pub fn is_consistent(&self) -> bool {
        if self.noise_added {
            self.eps_attained == self.eps_target && self.laplace_scale > T::zero()
        } else if self.eps_target.is_infinite() {
            self.laplace_scale.is_zero()
        } else {
            matches!(self.eps_sketch, Some(e) if e <= self.eps_target && self.eps_attained == e)
                && self.laplace_scale.is_zero()
        }
    }
}

/// One Laplace(0, `scale`) draw by inverse CDF.
pub fn laplace_sample<T: Scalar, R: Rng + ?Sized>(scale: T, rng: &mut R) -> Result<T> {
    if !(scale > T::zero() && scale.is_finite()) {
        return Err(Error::invalid(format!(
            "laplace scale must be positive, got {scale}"
        )));
    }
    Ok(laplace_unchecked(scale, rng))
}

fn laplace_unchecked<T: Scalar, R: Rng + ?Sized>(scale: T, rng: &mut R) -> T {
    let half = T::of(0.5);
    loop {
        let u = T::sample_unit(rng) - half;
        let tail = T::one() - (u.abs() + u.abs());
        if tail > T::zero() {
            let mag = -scale * tail.ln();
            return if u < T::zero() { -mag } else { mag };
        }
    }
}

/// Laplace scale calibrated to `eps_target` alone: replacing one bounded
/// entry moves one counter per row by at most `2 alpha`, so the table has L1
/// sensitivity `2 alpha t`.
pub fn laplace_scale_for<T: Scalar>(alpha: T, t: usize, eps_target: T) -> T {
    T::of(2.0) * alpha * T::of(t as f64) / eps_target
}

/// Checks the sketch's own guarantee against `eps_target` and adds Laplace
/// noise to every counter when it falls short.
///
/// An infinite target disables validation. When the accountant's
/// preconditions fail (e.g. `n <= k`) the sketch is treated as having no
/// guarantee and is noised.
pub fn validate_and_noise<T: Scalar, R: Rng + ?Sized>(
    mut sketch: CountSketch<T>,
    stats: &GradientStats<T>,
    eps_target: T,
    rng: &mut R,
) -> Result<(CountSketch<T>, PrivacyReport<T>)> {
    if !(eps_target > T::zero()) {
        return Err(Error::invalid(format!(
            "eps_target must be positive, got {eps_target}"
        )));
    }
    let dims = sketch.dims();
    if stats.n < dims.n {
        return Err(Error::invalid(format!(
            "stats describe {} entries but the sketch encodes {}",
            stats.n, dims.n
        )));
    }
    let eps_sketch = sketch_epsilon(stats, &dims).unwrap_or(None);

    if eps_target.is_infinite() {
        let report = PrivacyReport {
            eps_sketch,
            eps_target,
            noise_added: false,
            laplace_scale: T::zero(),
            eps_attained: eps_sketch.unwrap_or(T::infinity()),
        };
        return Ok((sketch, report));
    }
    if let Some(eps) = eps_sketch {
        if eps <= eps_target {
            let report = PrivacyReport {
                eps_sketch,
                eps_target,
                noise_added: false,
                laplace_scale: T::zero(),
                eps_attained: eps,
            };
            return Ok((sketch, report));
        }
    }

    let scale = laplace_scale_for(stats.alpha, dims.t, eps_target);
    for c in sketch.counters_mut() {
        *c += laplace_unchecked(scale, rng);
    }
    let report = PrivacyReport {
        eps_sketch,
        eps_target,
        noise_added: true,
        laplace_scale: scale,
        eps_attained: eps_target,
    };
    Ok((sketch, report))
}

/// Appends `m_pad` draws from `N(0, stats.sigma2)` to `g`.
pub fn pad_with_noise<T: Scalar, R: Rng + ?Sized>(
    g: &[T],
    m_pad: usize,
    stats: &GradientStats<T>,
    rng: &mut R,
) -> DenseVector<T> {
    let sd = stats.sigma2.sqrt();
    let mut out = Vec::with_capacity(g.len() + m_pad);
    out.extend_from_slice(g);
    out.extend((0..m_pad).map(|_| sd * T::sample_standard_normal(rng)));
    DenseVector::from_vec(out)
}

/// Small-instance Monte-Carlo check of the accountant.
///
/// Builds `g` with `N(0, 1)` entries clipped to `alpha` and `g[0] = alpha`,
/// and its neighbour with `g[0] = 0`. For each of `draws` single-row sketch
/// seeds it records counter 0 of both, bins the two samples into `cells`
/// equal-width cells over their pooled range, and compares the histograms in
/// every cell where both counts reach `min_count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioTest {
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub draws: usize,
    pub cells: usize,
    pub min_count: u64,
    pub slack: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioOutcome {
    /// Accountant's `eps` for the instance, `None` when undefined.
    pub eps: Option<f64>,
    /// `exp(eps) * slack`, infinite when `eps` is undefined.
    pub bound: f64,
    pub max_ratio: f64,
    pub cells_checked: usize,
}

impl RatioOutcome {
    pub fn passes(&self) -> bool {
        self.max_ratio <= self.bound
    }

    /// True when the accountant gives no finite bound to test against.
    pub fn is_vacuous(&self) -> bool {
        self.eps.is_none()
    }
}

pub fn histogram_ratio_test(rt: &RatioTest) -> Result<RatioOutcome> {
    use rand::SeedableRng;
    use rayon::prelude::*;

    use crate::hashing::{derive_row_seeds, index_hash, sign_hash, splitmix_word};

    if rt.draws == 0 || rt.cells == 0 {
        return Err(Error::invalid("draws and cells must be positive"));
    }
    if !(rt.alpha > 0.0 && rt.slack >= 1.0) {
        return Err(Error::invalid(
            "alpha must be positive and slack at least 1",
        ));
    }
    let dims = SketchDims::new(1, rt.k, rt.n)?;
    let stats = GradientStats::new(rt.alpha, 1.0, rt.n)?;
    let eps = sketch_epsilon(&stats, &dims)?;

    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(rt.seed);
    let mut g: Vec<f64> = (0..rt.n)
        .map(|_| f64::sample_standard_normal(&mut rng).clamp(-rt.alpha, rt.alpha))
        .collect();
    g[0] = rt.alpha;
    let diff = rt.alpha;

    let k = rt.k;
    let pairs: Vec<(f64, f64)> = (0..rt.draws as u64)
        .into_par_iter()
        .map(|d| -> Result<(f64, f64)> {
            let (idx, sgn) = derive_row_seeds(splitmix_word(rt.seed, d), 0);
            let mut c = 0.0;
            for (i, &v) in g.iter().enumerate() {
                if index_hash(&idx, i as u64, k)? == 0 {
                    c += f64::from(sign_hash(&sgn, i as u64)) * v;
                }
            }
            let shift = if index_hash(&idx, 0, k)? == 0 {
                f64::from(sign_hash(&sgn, 0)) * diff
            } else {
                0.0
            };
            Ok((c, c - shift))
        })
        .collect::<Result<_>>()?;

    let (lo, hi) = pairs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(a, b)| {
            (lo.min(a).min(b), hi.max(a).max(b))
        });
    let width = (hi - lo) / rt.cells as f64;
    let cell = |v: f64| {
        if width > 0.0 {
            (((v - lo) / width) as usize).min(rt.cells - 1)
        } else {
            0
        }
    };
    let mut p = vec![0u64; rt.cells];
    let mut q = vec![0u64; rt.cells];
    for &(a, b) in &pairs {
        p[cell(a)] += 1;
        q[cell(b)] += 1;
    }
    let mut max_ratio = 1.0f64;
    let mut cells_checked = 0;
    for (&a, &b) in p.iter().zip(&q) {
        if a >= rt.min_count && b >= rt.min_count {
            cells_checked += 1;
            let r = a as f64 / b as f64;
            max_ratio = max_ratio.max(r).max(1.0 / r);
        }
    }
    Ok(RatioOutcome {
        eps,
        bound: eps.map_or(f64::INFINITY, |e: f64| e.exp() * rt.slack),
        max_ratio,
        cells_checked,
    })
}
