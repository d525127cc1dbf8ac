//! Non-conformity scores over candidate absolute ranks.
//!
//! * RA: the model outputs an absolute rank `p_i`; `s(i, r) = |r - p_i|`.
//! * VA: the model outputs a value `a_i`; `s(i, r) = |a_i - a_(r)|` where
//!   `a_(r)` is the r-th smallest predicted value over all `N` items.
//!
//! Both profiles are V-shaped in `r` around the item's predicted rank, so
//! every sublevel set `{r : s(i, r) <= t}` is an interval.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{has_ties, Jitter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    #[serde(rename = "ra")]
    Ra,
    #[serde(rename = "va")]
    Va,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Ra => "ra",
            ScoreKind::Va => "va",
        })
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ra" => Ok(ScoreKind::Ra),
            "va" => Ok(ScoreKind::Va),
            other => Err(Error::config("score", format!("unknown score kind `{other}`"))),
        }
    }
}

/// Closed interval of absolute ranks `[lo, hi]`, 1-indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankInterval {
    pub lo: usize,
    pub hi: usize,
}

impl RankInterval {
    pub fn len(&self) -> usize {
        self.hi + 1 - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, r: usize) -> bool {
        self.lo <= r && r <= self.hi
    }
}

/// A black-box ranker's output for all `N` items.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Ra {
        ranks: Vec<usize>,
    },
    Va {
        values: Vec<f64>,
        sorted: Vec<f64>,
        ranks: Vec<usize>,
    },
}

impl Predictions {
    /// RA predictions; every rank must lie in `[1, N]`.
    pub fn ra(ranks: Vec<usize>) -> Result<Self> {
        let total = ranks.len();
        if total == 0 {
            return Err(Error::EmptyRankDomain);
        }
        if let Some(&bad) = ranks.iter().find(|&&r| r == 0 || r > total) {
            return Err(Error::RankOutOfRange { rank: bad, len: total });
        }
        Ok(Predictions::Ra { ranks })
    }

    /// RA predictions from raw model output, clamping into `[1, N]`.
    /// Returns the predictions and how many entries were clamped.
    pub fn ra_clamped(raw: &[i64]) -> Result<(Self, usize)> {
        let total = raw.len() as i64;
        let mut clamped = 0;
        let ranks = raw
            .iter()
            .map(|&r| {
                let c = r.clamp(1, total.max(1));
                if c != r {
                    clamped += 1;
                }
                c as usize
            })
            .collect();
        Ok((Predictions::ra(ranks)?, clamped))
    }

    /// VA predictions from tie-free finite values.
    pub fn va(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyRankDomain);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", "non-finite predicted value"));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));
        if order.windows(2).any(|w| values[w[0]] == values[w[1]]) {
            return Err(Error::TiesDetected);
        }
        let mut ranks = vec![0; values.len()];
        for (pos, &i) in order.iter().enumerate() {
            ranks[i] = pos + 1;
        }
        let sorted = order.iter().map(|&i| values[i]).collect();
        Ok(Predictions::Va { values, sorted, ranks })
    }

    /// VA predictions, jittering the values first when they contain ties.
    pub fn va_jittered<R: Rng + ?Sized>(values: Vec<f64>, jitter: &Jitter, rng: &mut R) -> Result<Self> {
        if has_ties(&values) {
            Predictions::va(jitter.apply(&values, rng)?)
        } else {
            Predictions::va(values)
        }
    }

    /// RA predictions induced by the predicted ranks of `self`.
    pub fn to_ra(&self) -> Predictions {
        match self {
            Predictions::Ra { .. } => self.clone(),
            Predictions::Va { ranks, .. } => Predictions::Ra { ranks: ranks.clone() },
        }
    }

    pub fn kind(&self) -> ScoreKind {
        match self {
            Predictions::Ra { .. } => ScoreKind::Ra,
            Predictions::Va { .. } => ScoreKind::Va,
        }
    }

    /// Number of items `N`.
    pub fn len(&self) -> usize {
        match self {
            Predictions::Ra { ranks } => ranks.len(),
            Predictions::Va { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn predicted_abs_rank(&self, item: usize) -> usize {
        match self {
            Predictions::Ra { ranks } | Predictions::Va { ranks, .. } => ranks[item],
        }
    }

    pub fn score(&self, item: usize, r: usize) -> Result<f64> {
        if r == 0 || r > self.len() {
            return Err(Error::RankOutOfRange { rank: r, len: self.len() });
        }
        Ok(self.score_at(item, r))
    }

    /// `score` without the range check; `r` must lie in `[1, N]`.
    #[inline]
    pub(crate) fn score_at(&self, item: usize, r: usize) -> f64 {
        match self {
            Predictions::Ra { ranks } => ranks[item].abs_diff(r) as f64,
            Predictions::Va { values, sorted, .. } => (values[item] - sorted[r - 1]).abs(),
        }
    }

    /// Scores at every candidate rank `1..=N`.
    pub fn score_profile(&self, item: usize) -> Vec<f64> {
        (1..=self.len()).map(|r| self.score_at(item, r)).collect()
    }

    /// `{r in [1, N] : s(item, r) <= threshold}` as an interval.
    pub fn level_set(&self, item: usize, threshold: f64) -> RankInterval {
        let total = self.len();
        if threshold == f64::INFINITY {
            return RankInterval { lo: 1, hi: total };
        }
        assert!(threshold >= 0.0, "threshold must be nonnegative, got {threshold}");
        let centre = self.predicted_abs_rank(item);
        match self {
            Predictions::Ra { .. } => {
                let width = threshold.floor().min(total as f64) as usize;
                RankInterval {
                    lo: centre.saturating_sub(width).max(1),
                    hi: (centre + width).min(total),
                }
            }
            Predictions::Va { .. } => {
                // left branch is nonincreasing on [1, centre], right branch nondecreasing on [centre, N]
                let lo = first_true(1, centre + 1, |r| self.score_at(item, r) <= threshold);
                let hi = first_true(centre, total + 1, |r| self.score_at(item, r) > threshold) - 1;
                RankInterval { lo, hi }
            }
        }
    }
}

/// Smallest `x` in `[lo, hi)` with `pred(x)`, or `hi`; `pred` must be monotone.
fn first_true(mut lo: usize, mut hi: usize, pred: impl Fn(usize) -> bool) -> usize {
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn is_unimodal(profile: &[f64]) -> bool {
        let min_at = profile
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        profile[..=min_at].windows(2).all(|w| w[0] >= w[1]) && profile[min_at..].windows(2).all(|w| w[0] <= w[1])
    }

    #[test]
    fn ra_passthrough_and_scores() {
        let p = Predictions::ra(vec![7, 5, 2, 1, 3, 4, 6]).unwrap();
        assert_eq!(p.predicted_abs_rank(0), 7);
        assert_eq!(p.score(1, 5).unwrap(), 0.0);
        assert_eq!(p.score(0, 3).unwrap(), 4.0);
        assert!(p.score(0, 0).is_err());
        assert!(p.score(0, 8).is_err());
    }

    #[test]
    fn ra_profile() {
        let p = Predictions::ra(vec![2, 1, 4, 3]).unwrap();
        assert_eq!(p.score_profile(0), vec![1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn ra_clamps_out_of_range() {
        let (p, clamped) = Predictions::ra_clamped(&[0, 2, 9]).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(p, Predictions::Ra { ranks: vec![1, 2, 3] });
        assert!(Predictions::ra(vec![0, 1]).is_err());
    }

    #[test]
    fn va_ranks_and_scores() {
        let p = Predictions::va(vec![0.9, 0.1, 0.4]).unwrap();
        assert_eq!(p.predicted_abs_rank(2), 2);
        assert!((p.score(2, 3).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(p.score(2, 2).unwrap(), 0.0);
        assert!(matches!(Predictions::va(vec![1.0, 1.0]), Err(Error::TiesDetected)));
        assert_eq!(p.to_ra(), Predictions::Ra { ranks: vec![3, 1, 2] });
    }

    #[test]
    fn level_set_examples() {
        let mut ranks = vec![1; 100];
        ranks[0] = 10;
        ranks[1] = 2;
        let p = Predictions::ra(ranks).unwrap();
        assert_eq!(p.level_set(0, 3.0), RankInterval { lo: 7, hi: 13 });
        assert_eq!(p.level_set(1, 3.0), RankInterval { lo: 1, hi: 5 });
        assert_eq!(p.level_set(1, f64::INFINITY), RankInterval { lo: 1, hi: 100 });
        assert_eq!(p.level_set(0, 2.5), RankInterval { lo: 8, hi: 12 });
    }

    proptest! {
        #[test]
        fn va_profiles_are_unimodal_and_level_sets_match_scan(
            values in prop::collection::hash_set(-1_000_000i64..1_000_000, 2..60),
            t in 0.0f64..500_000.0,
        ) {
            let values: Vec<f64> = values.into_iter().map(|v| v as f64 * 0.37).collect();
            let p = Predictions::va(values.clone()).unwrap();
            let ranks: Vec<usize> = (0..values.len()).map(|i| p.predicted_abs_rank(i)).collect();
            prop_assert!(crate::population::is_permutation(&ranks));
            for item in 0..values.len() {
                let profile = p.score_profile(item);
                prop_assert!(is_unimodal(&profile));
                prop_assert_eq!(p.score(item, p.predicted_abs_rank(item)).unwrap(), 0.0);
                let spread = p_spread(&p);
                prop_assert!(profile.iter().all(|&s| s >= 0.0 && s <= spread));
                let set = p.level_set(item, t);
                let scanned: Vec<usize> = (1..=values.len()).filter(|&r| profile[r - 1] <= t).collect();
                prop_assert_eq!(scanned.first().copied(), Some(set.lo));
                prop_assert_eq!(scanned.last().copied(), Some(set.hi));
                prop_assert_eq!(scanned.len(), set.len());
            }
        }

        #[test]
        fn ra_profiles_are_unimodal(ranks in prop::collection::vec(1usize..40, 1..40), t in 0u32..50) {
            let total = ranks.len();
            let ranks: Vec<usize> = ranks.into_iter().map(|r| r.min(total)).collect();
            let p = Predictions::ra(ranks).unwrap();
            for item in 0..total {
                let profile = p.score_profile(item);
                prop_assert!(is_unimodal(&profile));
                prop_assert!(profile.iter().all(|s| s.fract() == 0.0));
                let set = p.level_set(item, t as f64);
                let count = profile.iter().filter(|&&s| s <= t as f64).count();
                prop_assert_eq!(set.len(), count);
            }
        }
    }

    fn p_spread(p: &Predictions) -> f64 {
        match p {
            Predictions::Va { sorted, .. } => sorted[sorted.len() - 1] - sorted[0],
            Predictions::Ra { .. } => unreachable!(),
        }
    }
}
