//! Exhaustive checks on small populations.
//!
//! Every calibration/test partition of `N` items is equally likely, so exact
//! probabilities follow from enumerating all `C(N, n)` subsets.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dcr::{dcr_mixture_with, dcr_threshold, prediction_sets, Threshold};
use crate::error::{Error, Result};
use crate::neghyper::{NegHypergeom, NegHypergeomFamily};
use crate::population::{has_ties, rank_view, Population, Split};
use crate::scores::Predictions;
use crate::tcpr::{oracle_threshold, true_scores};

pub const RANK_PMF_LIMIT: usize = 14;
pub const COVERAGE_LIMIT: usize = 12;

/// A distribution on `support` with exact rational masses.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPmf {
    pub support: Vec<usize>,
    pub probs: Vec<BigRational>,
}

impl ExactPmf {
    pub fn total(&self) -> BigRational {
        self.probs.iter().fold(BigRational::zero(), |acc, p| acc + p)
    }
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Bitmasks over `total` positions with exactly `size` bits set, ascending.
fn subsets(total: usize, size: usize) -> impl Iterator<Item = u32> {
    (0u32..(1u32 << total)).filter(move |mask| mask.count_ones() as usize == size)
}

/// Law of the number of test items ranked below the `rel_rank`-th calibration
/// item, by counting subsets.
pub fn enumerate_rank_pmf(total: usize, n: usize, rel_rank: usize) -> Result<ExactPmf> {
    if total > RANK_PMF_LIMIT {
        return Err(Error::EnumerationTooLarge {
            total,
            limit: RANK_PMF_LIMIT,
        });
    }
    if n == 0 || n >= total || rel_rank == 0 || rel_rank > n {
        return Err(Error::invalid(
            "n, rel_rank",
            format!("need 1 <= r <= n < N, got N={total}, n={n}, r={rel_rank}"),
        ));
    }
    let m = total - n;
    let mut counts = vec![0usize; m + 1];
    let mut subsets_seen = 0;
    for mask in subsets(total, n) {
        subsets_seen += 1;
        let position = (0..total)
            .filter(|&p| mask & (1 << p) != 0)
            .nth(rel_rank - 1)
            .expect("mask has n >= r bits");
        counts[position - (rel_rank - 1)] += 1;
    }
    Ok(ExactPmf {
        support: (0..=m).collect(),
        probs: counts.into_iter().map(|c| ratio(c, subsets_seen)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExactMethod {
    Dcr,
    Oracle,
}

/// Probability that a test item's true absolute rank lies in its prediction
/// set, averaged over all partitions with `n` calibration items and over
/// the test items, for fixed values and predictions.
pub fn exact_marginal_coverage(
    values: &[f64],
    preds: &Predictions,
    n: usize,
    method: ExactMethod,
    alpha: f64,
) -> Result<BigRational> {
    let total = values.len();
    if total > COVERAGE_LIMIT {
        return Err(Error::EnumerationTooLarge {
            total,
            limit: COVERAGE_LIMIT,
        });
    }
    if has_ties(values) {
        return Err(Error::TiesDetected);
    }
    if n == 0 || n >= total {
        return Err(Error::invalid("n", format!("need 1 <= n < N={total}, got {n}")));
    }
    if preds.len() != total {
        return Err(Error::invalid("preds", format!("{} predictions for N={total}", preds.len())));
    }
    let m = total - n;
    let family = NegHypergeomFamily::new(n, m)?;
    let mut covered = 0usize;
    let mut partitions = 0usize;
    for mask in subsets(total, n) {
        partitions += 1;
        let assignment = (0..total)
            .map(|i| if mask & (1 << i) != 0 { Split::Calibration } else { Split::Test })
            .collect();
        let pop = Population::new(values.to_vec(), assignment)?;
        let view = rank_view(&pop)?;
        let threshold: Threshold = match method {
            ExactMethod::Dcr => dcr_threshold(&dcr_mixture_with(preds, view.observed(), &family)?, n, alpha)?,
            ExactMethod::Oracle => oracle_threshold(&true_scores(preds, view.observed(), view.hidden()), alpha)?,
        };
        let sets = prediction_sets(preds, view.observed(), &threshold);
        covered += sets
            .iter()
            .zip(view.test_abs_ranks())
            .filter(|(s, r)| s.contains(*r))
            .count();
    }
    Ok(ratio(covered, partitions * m))
}

/// `ceil((n+1)(1-alpha)) / (n+1)`, the exact level both methods target.
pub fn exact_level(n: usize, alpha: f64) -> BigRational {
    let k = crate::dcr::conformal_index(n, 1.0 - alpha);
    ratio(k, n + 1)
}

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

/// Enumerated rank laws against the closed-form PMF, exact equality.
pub fn check_rank_pmfs(max_total: usize) -> Result<Check> {
    let mut cases = 0;
    for total in 2..=max_total {
        for n in 1..total {
            for r in 1..=n {
                let enumerated = enumerate_rank_pmf(total, n, r)?;
                let nh = NegHypergeom::new(total, total - n, r)?;
                for (k, p) in enumerated.probs.iter().enumerate() {
                    let closed = nh.pmf_exact(k)?;
                    if &closed != p {
                        return Ok(Check {
                            name: "rank pmf".into(),
                            passed: false,
                            detail: format!("N={total} n={n} r={r} k={k}: enumerated {p}, closed form {closed}"),
                        });
                    }
                }
                if !enumerated.total().is_one() {
                    return Ok(Check {
                        name: "rank pmf".into(),
                        passed: false,
                        detail: format!("N={total} n={n} r={r}: masses sum to {}", enumerated.total()),
                    });
                }
                cases += 1;
            }
        }
    }
    Ok(Check {
        name: "rank pmf".into(),
        passed: true,
        detail: format!("{cases} (N, n, r) cases up to N={max_total} match exactly"),
    })
}

/// One small configuration for the exact coverage checks.
#[derive(Debug, Clone)]
pub struct SmallInstance {
    pub label: String,
    pub values: Vec<f64>,
    pub preds: Predictions,
    pub n: usize,
}

/// Deterministic small instances: noisy value predictions in RA and VA form.
pub fn small_instances(seed: u64) -> Result<Vec<SmallInstance>> {
    let mut out = Vec::new();
    for (idx, &(total, n, noise)) in [(7, 4, 0.5), (7, 3, 1.0), (8, 5, 0.3), (9, 4, 2.0), (10, 6, 0.7)]
        .iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(seed, &[idx as u64]));
        let values: Vec<f64> = (0..total).map(|_| rng.random::<f64>()).collect();
        let noisy: Vec<f64> = values.iter().map(|v| v + noise * (rng.random::<f64>() - 0.5)).collect();
        let va = Predictions::va(noisy)?;
        out.push(SmallInstance {
            label: format!("N={total} n={n} RA"),
            values: values.clone(),
            preds: va.to_ra(),
            n,
        });
        out.push(SmallInstance {
            label: format!("N={total} n={n} VA"),
            values,
            preds: va,
            n,
        });
    }
    Ok(out)
}

/// Exact coverage of `method` on every instance and level, against
/// `1 - alpha`.
pub fn check_exact_coverage(method: ExactMethod, alphas: &[f64], seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for inst in small_instances(seed)? {
        for &alpha in alphas {
            let coverage = exact_marginal_coverage(&inst.values, &inst.preds, inst.n, method, alpha)?;
            let target = BigRational::one() - decimal_ratio(alpha);
            checks.push(Check {
                name: format!("{method:?} coverage {} alpha={alpha}", inst.label),
                passed: coverage >= target,
                detail: format!(
                    "coverage {coverage} (~{:.6}) vs 1 - alpha = {target}",
                    ratio_to_f64(&coverage)
                ),
            });
        }
    }
    Ok(checks)
}

/// The decimal written by `{}` formatting, as an exact fraction
/// (`0.1` becomes `1/10`, not the nearest binary double).
pub fn decimal_ratio(x: f64) -> BigRational {
    let text = format!("{x}");
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let digits: BigInt = format!("{int_part}{frac_part}").parse().expect("plain decimal");
    BigRational::new(digits, BigInt::from(10u32).pow(frac_part.len() as u32))
}

pub fn ratio_to_f64(x: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}

/// Everything the `verify` command runs.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut checks = vec![check_rank_pmfs(10)?];
    let alphas = [0.1, 0.2, 0.25, 0.3, 0.5];
    checks.extend(check_exact_coverage(ExactMethod::Dcr, &alphas, seed)?);
    checks.extend(check_exact_coverage(ExactMethod::Oracle, &alphas, seed)?);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_levels_are_exact() {
        assert_eq!(decimal_ratio(0.1), ratio(1, 10));
        assert_eq!(decimal_ratio(0.25), ratio(1, 4));
        assert_eq!(decimal_ratio(3.0), ratio(3, 1));
    }

    #[test]
    fn two_items_is_a_coin() {
        let pmf = enumerate_rank_pmf(2, 1, 1).unwrap();
        assert_eq!(pmf.probs, vec![ratio(1, 2), ratio(1, 2)]);
    }

    #[test]
    fn five_items_two_calibration() {
        let pmf = enumerate_rank_pmf(5, 2, 1).unwrap();
        assert_eq!(pmf.probs[0], ratio(4, 10));
        assert!(pmf.total().is_one());
        assert!(enumerate_rank_pmf(15, 3, 1).is_err());
    }

    #[test]
    fn perfect_ranker_covers_everything() {
        let values = vec![0.3, 0.9, 0.1, 0.5, 0.7, 0.2];
        let preds = Predictions::va(values.clone()).unwrap().to_ra();
        for method in [ExactMethod::Dcr, ExactMethod::Oracle] {
            let c = exact_marginal_coverage(&values, &preds, 4, method, 0.2).unwrap();
            assert!(c.is_one(), "{method:?}: {c}");
        }
    }

    #[test]
    fn full_sets_when_index_exceeds_calibration() {
        let values = vec![0.3, 0.9, 0.1, 0.5, 0.7];
        let preds = Predictions::ra(vec![5, 4, 3, 2, 1]).unwrap();
        // n = 2, alpha = 0.3: k = ceil(2.1) = 3 = n + 1
        let c = exact_marginal_coverage(&values, &preds, 2, ExactMethod::Oracle, 0.3).unwrap();
        assert!(c.is_one());
    }

    #[test]
    fn rejects_large_or_tied_inputs() {
        let values: Vec<f64> = (0..13).map(f64::from).collect();
        let preds = Predictions::va(values.clone()).unwrap();
        assert!(exact_marginal_coverage(&values, &preds, 5, ExactMethod::Dcr, 0.1).is_err());
        let tied = vec![1.0, 1.0, 2.0];
        let preds = Predictions::ra(vec![1, 2, 3]).unwrap();
        assert!(matches!(
            exact_marginal_coverage(&tied, &preds, 1, ExactMethod::Dcr, 0.1),
            Err(Error::TiesDetected)
        ));
    }
}
