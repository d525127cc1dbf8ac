//! Negative Hypergeometric law of the number of unseen test items ranked
//! below a calibration item with known relative rank.
//!
//! With `N = n + m` items split uniformly into `n` calibration and `m` test
//! items, the calibration item with relative rank `r` has
//!
//! ```text
//! P(k test items below) = C(r+k-1, k) * C(N-r-k, m-k) / C(N, m),  k = 0..=m
//! ```
//!
//! and its absolute rank is `r + k`.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution};

use crate::error::{Error, Result};

/// Totals up to this size use exact 128-bit binomials.
const EXACT_LIMIT: usize = 64;

/// `NegHypergeom(N, m, r)` with precomputed PMF and CDF tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NegHypergeom {
    total: usize,
    test_count: usize,
    rel_rank: usize,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl NegHypergeom {
    pub fn new(total: usize, test_count: usize, rel_rank: usize) -> Result<Self> {
        check_params(total, test_count, rel_rank)?;
        let pmf = if total <= EXACT_LIMIT {
            exact_pmf_f64(total, test_count, rel_rank)
        } else {
            ratio_pmf(total, test_count, rel_rank)
        };
        let cdf = normalized_cdf(&pmf);
        Ok(NegHypergeom {
            total,
            test_count,
            rel_rank,
            pmf,
            cdf,
        })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn test_count(&self) -> usize {
        self.test_count
    }

    pub fn rel_rank(&self) -> usize {
        self.rel_rank
    }

    pub fn calibration_count(&self) -> usize {
        self.total - self.test_count
    }

    pub fn pmf(&self, k: usize) -> Result<f64> {
        self.pmf.get(k).copied().ok_or(Error::OutsideSupport {
            k: k as i64,
            max: self.test_count,
        })
    }

    /// Masses for `k = 0..=m`.
    pub fn pmf_table(&self) -> &[f64] {
        &self.pmf
    }

    /// `P(K <= k)`, clamped to 0 below the support and 1 above it.
    pub fn cdf(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else if k as usize >= self.test_count {
            1.0
        } else {
            self.cdf[k as usize]
        }
    }

    pub fn cdf_table(&self) -> &[f64] {
        &self.cdf
    }

    /// Inverse-CDF draw from the tabulated law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.test_count)
    }

    /// `r * m / (n + 1)`.
    pub fn mean(&self) -> f64 {
        self.rel_rank as f64 * self.test_count as f64 / (self.calibration_count() + 1) as f64
    }

    /// Law of the absolute rank `r + k`.
    pub fn absolute_rank_dist(&self) -> ShiftedPmf {
        ShiftedPmf {
            offset: self.rel_rank,
            masses: self.pmf.clone(),
        }
    }

    /// The PMF as an exact rational.
    pub fn pmf_exact(&self, k: usize) -> Result<BigRational> {
        if k > self.test_count {
            return Err(Error::OutsideSupport {
                k: k as i64,
                max: self.test_count,
            });
        }
        let (num, den) = pmf_counts(self.total, self.test_count, self.rel_rank, k);
        Ok(BigRational::new(num.into(), den.into()))
    }
}

/// A distribution over the integers `offset, offset + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedPmf {
    pub offset: usize,
    pub masses: Vec<f64>,
}

impl ShiftedPmf {
    pub fn support(&self) -> std::ops::RangeInclusive<usize> {
        self.offset..=self.offset + self.masses.len() - 1
    }

    pub fn mass(&self, x: usize) -> f64 {
        x.checked_sub(self.offset)
            .and_then(|k| self.masses.get(k))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Draws from `NegHypergeom(n + m, m, r)` in O(1) through its beta-binomial
/// representation: the r-th of `n` calibration uniforms is `Beta(r, n + 1 - r)`
/// and each test uniform falls below it independently.
pub fn sample_fast<R: Rng + ?Sized>(n: usize, m: usize, r: usize, rng: &mut R) -> usize {
    debug_assert!(r >= 1 && r <= n);
    if m == 0 {
        return 0;
    }
    let beta = Beta::new(r as f64, (n + 1 - r) as f64).expect("positive shape parameters");
    let p = beta.sample(rng);
    let binomial = Binomial::new(m as u64, p).expect("p in [0, 1]");
    binomial.sample(rng) as usize
}

/// Distributions for every relative rank `1..=n` at fixed `(n, m)`.
#[derive(Debug, Clone)]
pub struct NegHypergeomFamily {
    dists: Vec<NegHypergeom>,
}

impl NegHypergeomFamily {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "calibration count must be positive"));
        }
        let dists = (1..=n)
            .map(|r| NegHypergeom::new(n + m, m, r))
            .collect::<Result<_>>()?;
        Ok(NegHypergeomFamily { dists })
    }

    /// Distribution for relative rank `r` (1-indexed).
    pub fn get(&self, r: usize) -> &NegHypergeom {
        &self.dists[r - 1]
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }
}

fn check_params(total: usize, test_count: usize, rel_rank: usize) -> Result<()> {
    if test_count >= total {
        return Err(Error::invalid(
            "test_count",
            format!("m={test_count} must be below N={total}"),
        ));
    }
    if rel_rank == 0 || rel_rank > total - test_count {
        return Err(Error::invalid(
            "rel_rank",
            format!("r={rel_rank} outside [1, {}]", total - test_count),
        ));
    }
    Ok(())
}

fn binomial_u128(top: usize, bottom: usize) -> u128 {
    if bottom > top {
        return 0;
    }
    let bottom = bottom.min(top - bottom);
    let mut acc: u128 = 1;
    for i in 0..bottom {
        acc = acc * (top - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn binomial_big(top: usize, bottom: usize) -> BigUint {
    if bottom > top {
        return BigUint::zero();
    }
    let bottom = bottom.min(top - bottom);
    let mut acc = BigUint::one();
    for i in 0..bottom {
        acc *= top - i;
        acc /= i + 1;
    }
    acc
}

/// Favorable and total arrangement counts for `P(K = k)`.
fn pmf_counts(total: usize, m: usize, r: usize, k: usize) -> (BigUint, BigUint) {
    let num = binomial_big(r + k - 1, k) * binomial_big(total - r - k, m - k);
    (num, binomial_big(total, m))
}

fn exact_pmf_f64(total: usize, m: usize, r: usize) -> Vec<f64> {
    let den = binomial_u128(total, m) as f64;
    (0..=m)
        .map(|k| {
            let num = binomial_u128(r + k - 1, k) * binomial_u128(total - r - k, m - k);
            num as f64 / den
        })
        .collect()
}

/// Unnormalized masses from the successive ratio
/// `p(k+1) / p(k) = (r+k)(m-k) / ((k+1)(N-r-k))`, anchored at the mode,
/// then normalized. Each mass carries O(m) ulps of relative error.
fn ratio_pmf(total: usize, m: usize, r: usize) -> Vec<f64> {
    if m == 0 {
        return vec![1.0];
    }
    let ratio = |k: usize| -> f64 {
        ((r + k) as f64 * (m - k) as f64) / ((k + 1) as f64 * (total - r - k) as f64)
    };
    let ratios: Vec<f64> = (0..m).map(ratio).collect();
    let mode = ratios.iter().position(|&q| q <= 1.0).unwrap_or(m);

    let mut w = vec![0.0; m + 1];
    w[mode] = 1.0;
    for k in mode..m {
        w[k + 1] = w[k] * ratios[k];
    }
    for k in (0..mode).rev() {
        w[k] = w[k + 1] / ratios[k];
    }
    let total_mass = neumaier_sum(&w);
    w.iter_mut().for_each(|x| *x /= total_mass);
    w
}

fn normalized_cdf(pmf: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut cdf: Vec<f64> = pmf
        .iter()
        .map(|&p| {
            neumaier_add(&mut sum, &mut comp, p);
            sum + comp
        })
        .collect();
    let last = *cdf.last().expect("non-empty support");
    cdf.iter_mut().for_each(|c| *c = (*c / last).min(1.0));
    *cdf.last_mut().expect("non-empty support") = 1.0;
    cdf
}

#[inline]
pub(crate) fn neumaier_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

pub(crate) fn neumaier_sum(xs: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0, 0.0);
    for &x in xs {
        neumaier_add(&mut sum, &mut comp, x);
    }
    sum + comp
}
