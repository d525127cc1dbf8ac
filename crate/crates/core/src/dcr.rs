//! Distribution-informed conformal ranking.
//!
//! Each calibration item's score at its unknown absolute rank is a discrete
//! random variable: its support is `s(i, r_i + k)` for `k = 0..=m` and its
//! masses are the Negative Hypergeometric probabilities of `k`. DCR averages
//! these laws into a mixture CDF and thresholds it at the conformal level
//! `ceil((n+1)(1-alpha)) / (n+1)`. MDCR replaces the mixture by one sampled
//! absolute rank per calibration item followed by an order statistic.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neghyper::{self, neumaier_add, NegHypergeom, NegHypergeomFamily};
use crate::population::CalibrationView;
use crate::scores::{Predictions, RankInterval};

/// Absolute slack when comparing a cumulative weight against an exact level.
/// Cumulative weights carry a few ulps of rounding; exact ties must resolve
/// to "reached".
const LEVEL_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    Dcr,
    Mdcr,
    Tcpr,
    Oracle,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodTag::Dcr => "DCR",
            MethodTag::Mdcr => "MDCR",
            MethodTag::Tcpr => "TCPR",
            MethodTag::Oracle => "Oracle",
        })
    }
}

/// A conformal score cutoff; `value` may be `+inf` (full prediction sets).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub level: f64,
    pub method: MethodTag,
}

impl Threshold {
    pub fn is_infinite(&self) -> bool {
        self.value == f64::INFINITY
    }
}

/// `ceil(x)` for `x = (n + 1) * level`, treating values within 1e-9 of an
/// integer as that integer so that e.g. `5 * 0.6` yields 3.
pub fn conformal_index(n: usize, level: f64) -> usize {
    let x = (n + 1) as f64 * level;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    k.max(0.0) as usize
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

/// The `k`-th smallest score (1-indexed), or `+inf` when `k` exceeds the
/// sample size.
pub fn order_statistic(scores: &[f64], k: usize) -> f64 {
    if k == 0 {
        return f64::NEG_INFINITY;
    }
    if k > scores.len() {
        return f64::INFINITY;
    }
    let mut scratch = scores.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Latent score law of one calibration item.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibScoreDistribution {
    support: Vec<f64>,
    masses: Vec<f64>,
}

impl CalibScoreDistribution {
    pub fn new(support: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != masses.len() {
            return Err(Error::invalid("support", "support and masses must be non-empty and aligned"));
        }
        Ok(CalibScoreDistribution { support, masses })
    }

    /// Scores `s(i, r + k)` for `k = 0..=m`.
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `P(S <= t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.masses)
            .filter(|(s, _)| **s <= t)
            .map(|(_, p)| p)
            .sum()
    }

    /// `inf { t : P(S <= t) >= p }`.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self.support.iter().copied().zip(self.masses.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        for (s, w) in &pairs {
            acc += w;
            if acc >= p - LEVEL_TIE_TOLERANCE {
                return *s;
            }
        }
        pairs.last().map(|p| p.0).unwrap_or(f64::NAN)
    }
}

/// Score law of `item` with relative rank `rel_rank` among `n` calibration items.
pub fn calib_score_dist(
    preds: &Predictions,
    item: usize,
    rel_rank: usize,
    n: usize,
    m: usize,
) -> Result<CalibScoreDistribution> {
    if rel_rank == 0 || rel_rank > n {
        return Err(Error::invalid("rel_rank", format!("{rel_rank} outside [1, {n}]")));
    }
    if preds.len() != n + m {
        return Err(Error::invalid(
            "preds",
            format!("{} predictions for N={}", preds.len(), n + m),
        ));
    }
    let nh = NegHypergeom::new(n + m, m, rel_rank)?;
    Ok(calib_score_dist_with(preds, item, &nh))
}

/// [`calib_score_dist`] with a prebuilt rank law.
pub fn calib_score_dist_with(preds: &Predictions, item: usize, nh: &NegHypergeom) -> CalibScoreDistribution {
    let r = nh.rel_rank();
    let support = (0..=nh.test_count()).map(|k| preds.score_at(item, r + k)).collect();
    CalibScoreDistribution {
        support,
        masses: nh.pmf_table().to_vec(),
    }
}

/// Average of the calibration score CDFs as a right-continuous step function.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCdf {
    atoms: Vec<f64>,
    cum: Vec<f64>,
}

impl MixtureCdf {
    /// Sorted distinct score values with positive weight.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `F_mix` at each atom.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    /// `F_mix(t)`: cumulative weight at the largest atom `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.atoms.partition_point(|&a| a <= t) {
            0 => 0.0,
            j => self.cum[j - 1],
        }
    }

    /// Smallest atom whose cumulative weight reaches `level`.
    pub fn quantile(&self, level: f64) -> f64 {
        let j = self.cum.partition_point(|&c| c < level - LEVEL_TIE_TOLERANCE);
        self.atoms[j.min(self.atoms.len() - 1)]
    }
}

/// Pools the weighted atoms of all calibration laws (weight `mass / n`).
pub fn mixture_cdf(dists: &[CalibScoreDistribution]) -> Result<MixtureCdf> {
    if dists.is_empty() {
        return Err(Error::invalid("dists", "mixture of zero distributions"));
    }
    let pooled = dists.iter().flat_map(|d| {
        d.support
            .iter()
            .copied()
            .zip(d.masses.iter().copied())
    });
    Ok(mixture_from_pairs(pooled, dists.len()))
}

fn mixture_from_pairs(pairs: impl Iterator<Item = (f64, f64)>, n: usize) -> MixtureCdf {
    let mut pairs: Vec<(f64, f64)> = pairs.filter(|&(_, w)| w > 0.0).collect();
    // canonical order: result does not depend on item order
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut atoms = Vec::new();
    let mut cum = Vec::new();
    let (mut sum, mut comp) = (0.0, 0.0);
    for (s, w) in pairs {
        neumaier_add(&mut sum, &mut comp, w);
        if atoms.last() == Some(&s) {
            *cum.last_mut().expect("aligned with atoms") = sum + comp;
        } else {
            atoms.push(s);
            cum.push(sum + comp);
        }
    }
    let scale = n as f64;
    let total = sum + comp;
    for c in &mut cum {
        *c /= scale;
    }
    // masses of each law sum to one up to rounding; pin the top at exactly 1
    debug_assert!((total / scale - 1.0).abs() < 1e-9, "mixture mass {total} for n={n}");
    if let Some(last) = cum.last_mut() {
        *last = 1.0;
    }
    MixtureCdf { atoms, cum }
}

/// Smallest atom with `F_mix >= ceil((n+1)(1-alpha)) / (n+1)`; always finite.
pub fn dcr_threshold(fmix: &MixtureCdf, n: usize, alpha: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    let k = conformal_index(n, 1.0 - alpha);
    let level = k as f64 / (n + 1) as f64;
    Ok(Threshold {
        value: fmix.quantile(level),
        level,
        method: MethodTag::Dcr,
    })
}

/// The DCR mixture for the observed calibration data.
pub fn dcr_mixture(preds: &Predictions, view: &CalibrationView) -> Result<MixtureCdf> {
    check_predictions(preds, view)?;
    let family = NegHypergeomFamily::new(view.n(), view.m())?;
    dcr_mixture_with(preds, view, &family)
}

/// [`dcr_mixture`] with prebuilt rank laws for `(n, m)`.
pub fn dcr_mixture_with(
    preds: &Predictions,
    view: &CalibrationView,
    family: &NegHypergeomFamily,
) -> Result<MixtureCdf> {
    check_predictions(preds, view)?;
    if family.len() != view.n() || family.get(1).test_count() != view.m() {
        return Err(Error::invalid("family", "rank laws built for a different (n, m)"));
    }
    let pooled = view
        .calibration_items()
        .iter()
        .zip(view.rel_ranks())
        .flat_map(|(&item, &r)| {
            let nh = family.get(r);
            nh.pmf_table()
                .iter()
                .enumerate()
                .map(move |(k, &w)| (preds.score_at(item, r + k), w))
        });
    Ok(mixture_from_pairs(pooled, view.n()))
}

/// DCR threshold end to end: rank laws, score laws, mixture, quantile.
pub fn dcr(preds: &Predictions, view: &CalibrationView, alpha: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    let fmix = dcr_mixture(preds, view)?;
    dcr_threshold(&fmix, view.n(), alpha)
}

/// Monte-Carlo DCR: one sampled absolute rank per calibration item, then the
/// `ceil((n+1)(1-alpha))`-th smallest sampled score (`+inf` past `n`).
pub fn mdcr_threshold<R: Rng + ?Sized>(
    preds: &Predictions,
    view: &CalibrationView,
    alpha: f64,
    rng: &mut R,
) -> Result<Threshold> {
    check_alpha(alpha)?;
    check_predictions(preds, view)?;
    let (n, m) = (view.n(), view.m());
    let sampled: Vec<f64> = view
        .calibration_items()
        .iter()
        .zip(view.rel_ranks())
        .map(|(&item, &r)| preds.score_at(item, r + neghyper::sample_fast(n, m, r, rng)))
        .collect();
    let k = conformal_index(n, 1.0 - alpha);
    Ok(Threshold {
        value: order_statistic(&sampled, k),
        level: k as f64 / (n + 1) as f64,
        method: MethodTag::Mdcr,
    })
}

/// `{r in [1, N] : s(test_item, r) <= s*}`.
pub fn prediction_set(preds: &Predictions, test_item: usize, s_star: &Threshold) -> RankInterval {
    let set = preds.level_set(test_item, s_star.value);
    debug_assert!(
        {
            let inside = (1..=preds.len())
                .filter(|&r| preds.score_at(test_item, r) <= s_star.value)
                .count();
            inside == set.len()
        },
        "level set of item {test_item} is not an interval"
    );
    set
}

/// Prediction sets for every test item of `view`, in view order.
pub fn prediction_sets(preds: &Predictions, view: &CalibrationView, s_star: &Threshold) -> Vec<RankInterval> {
    view.test_items()
        .iter()
        .map(|&j| prediction_set(preds, j, s_star))
        .collect()
}

fn check_predictions(preds: &Predictions, view: &CalibrationView) -> Result<()> {
    if preds.len() != view.total() {
        return Err(Error::invalid(
            "preds",
            format!("{} predictions for N={}", preds.len(), view.total()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{rank_view, Population, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_item_view() -> (Predictions, CalibrationView) {
        // items 0 and 1 are calibration with relative ranks 1 and 2
        let preds = Predictions::ra(vec![1, 3, 2]).unwrap();
        let view = CalibrationView::new(3, vec![0, 1], vec![1, 2], vec![2]).unwrap();
        (preds, view)
    }

    #[test]
    fn point_mass_when_no_test_items() {
        let preds = Predictions::ra(vec![2, 1, 3]).unwrap();
        let d = calib_score_dist(&preds, 0, 1, 3, 0).unwrap();
        assert_eq!(d.support(), &[1.0]);
        assert_eq!(d.masses(), &[1.0]);
    }

    #[test]
    fn three_item_score_laws() {
        let (preds, _) = three_item_view();
        let d1 = calib_score_dist(&preds, 0, 1, 2, 1).unwrap();
        assert_eq!(d1.support(), &[0.0, 1.0]);
        assert!((d1.masses()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d1.masses()[1] - 1.0 / 3.0).abs() < 1e-15);
        let d2 = calib_score_dist(&preds, 1, 2, 2, 1).unwrap();
        assert_eq!(d2.support(), &[1.0, 0.0]);
        assert!((d2.masses()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(calib_score_dist(&preds, 1, 3, 2, 1).is_err());
    }

    #[test]
    fn three_item_mixture_and_thresholds() {
        let (preds, view) = three_item_view();
        let fmix = dcr_mixture(&preds, &view).unwrap();
        assert_eq!(fmix.atoms(), &[0.0, 1.0]);
        assert!((fmix.eval(0.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fmix.eval(1.0), 1.0);
        assert_eq!(fmix.eval(-0.5), 0.0);

        let t = dcr_threshold(&fmix, 2, 0.4).unwrap();
        assert!((t.level - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.value, 0.0);
        let t = dcr_threshold(&fmix, 2, 0.2).unwrap();
        assert_eq!(t.level, 1.0);
        assert_eq!(t.value, 1.0);
        assert_eq!(dcr_threshold(&fmix, 2, 1e-9).unwrap().value, 1.0);
        assert!(dcr_threshold(&fmix, 2, 0.0).is_err());
    }

    #[test]
    fn mixture_of_one_is_its_own_cdf() {
        let preds = Predictions::va(vec![0.3, 0.1, 0.7, 0.2, 0.9]).unwrap();
        let d = calib_score_dist(&preds, 2, 1, 1, 4).unwrap();
        let fmix = mixture_cdf(std::slice::from_ref(&d)).unwrap();
        for t in [0.0, 0.05, 0.1, 0.4, 0.5, 0.6, 1.0] {
            assert!((fmix.eval(t) - d.cdf(t)).abs() < 1e-12);
        }
        let doubled = mixture_cdf(&[d.clone(), d.clone()]).unwrap();
        for t in [0.0, 0.1, 0.4, 0.6] {
            assert!((doubled.eval(t) - d.cdf(t)).abs() < 1e-12);
        }
        assert!(mixture_cdf(&[]).is_err());
    }

    #[test]
    fn mixture_is_independent_of_item_order() {
        let preds = Predictions::va((0..12).map(|i| ((i * 7) % 12) as f64 * 0.13).collect()).unwrap();
        let a = CalibrationView::new(12, vec![0, 3, 5, 8], vec![2, 4, 1, 3], vec![1, 2, 4, 6, 7, 9, 10, 11]).unwrap();
        let b = CalibrationView::new(12, vec![8, 5, 3, 0], vec![3, 1, 4, 2], vec![1, 2, 4, 6, 7, 9, 10, 11]).unwrap();
        assert_eq!(dcr_mixture(&preds, &a).unwrap(), dcr_mixture(&preds, &b).unwrap());
    }

    #[test]
    fn conformal_index_is_robust_to_rounding() {
        assert_eq!(conformal_index(4, 0.6), 3);
        assert_eq!(conformal_index(9, 0.9), 9);
        assert_eq!(conformal_index(2, 0.8), 3);
        assert_eq!(conformal_index(2, 0.6), 2);
        assert_eq!(conformal_index(9, 1.0 - 0.1), 9);
        assert_eq!(conformal_index(99, 0.9), 90);
    }

    #[test]
    fn order_statistic_cases() {
        assert_eq!(order_statistic(&[3.0, 0.0, 2.0, 1.0], 3), 2.0);
        assert_eq!(order_statistic(&[3.0, 0.0], 3), f64::INFINITY);
    }

    #[test]
    fn mdcr_without_test_items_matches_oracle_scores() {
        // m = 0 cannot come from a population, so build the degenerate view by hand
        let preds = Predictions::ra(vec![2, 1, 4, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores: Vec<f64> = [(0, 1), (1, 2), (2, 3), (3, 4)]
            .iter()
            .map(|&(i, r)| preds.score(i, r).unwrap())
            .collect();
        let k = conformal_index(4, 0.5);
        let sampled: Vec<f64> = [(0usize, 1usize), (1, 2), (2, 3), (3, 4)]
            .iter()
            .map(|&(i, r)| preds.score_at(i, r + neghyper::sample_fast(4, 0, r, &mut rng)))
            .collect();
        assert_eq!(order_statistic(&sampled, k), order_statistic(&scores, k));
    }

    #[test]
    fn mdcr_infinite_when_index_exceeds_sample() {
        let (preds, view) = three_item_view();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = mdcr_threshold(&preds, &view, 0.3, &mut rng).unwrap();
        assert!(t.is_infinite());
        let sets = prediction_sets(&preds, &view, &t);
        assert_eq!(sets, vec![RankInterval { lo: 1, hi: 3 }]);
    }

    #[test]
    fn mdcr_is_deterministic_given_seed() {
        let values: Vec<f64> = (0..40).map(|i| ((i * 17) % 40) as f64).collect();
        let preds = Predictions::va(values.iter().map(|v| v + 0.5 * (v * 1.3).sin()).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pop = crate::population::split_population(values, 15, &mut rng).unwrap();
        let view = rank_view(&pop).unwrap();
        let a = mdcr_threshold(&preds, view.observed(), 0.1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = mdcr_threshold(&preds, view.observed(), 0.1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perfect_ranker_score_law_contains_zero() {
        let values = vec![0.5, 0.1, 0.9, 0.3, 0.7];
        let pop = Population::new(
            values.clone(),
            vec![Split::Calibration, Split::Test, Split::Calibration, Split::Test, Split::Test],
        )
        .unwrap();
        let view = rank_view(&pop).unwrap();
        let preds = Predictions::ra(view.hidden().abs_ranks().to_vec()).unwrap();
        for (idx, (&item, &r)) in view.observed().calibration_items().iter().zip(view.observed().rel_ranks()).enumerate() {
            let d = calib_score_dist(&preds, item, r, 2, 3).unwrap();
            let k = view.calibration_abs_ranks()[idx] - r;
            assert_eq!(d.support()[k], 0.0);
            assert!(d.masses()[k] > 0.0);
        }
    }
}
