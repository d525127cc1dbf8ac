//! Ground-truth populations, rank operators and calibration/test splitting.
//!
//! Ranks follow the counting convention `R(y, D) = #{z in D : y >= z}`, so on
//! a tie-free multiset the smallest value has rank 1 and the largest has rank
//! `|D|`. Under ties this differs from "r-th smallest"; every path that needs
//! the inverse operator rejects tied inputs instead of picking a tie rule.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the split an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Calibration,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Calibration => "cal",
            Split::Test => "test",
        }
    }
}

/// The `N = n + m` ground-truth values together with their split.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    values: Vec<f64>,
    assignment: Vec<Split>,
    n: usize,
    m: usize,
}

impl Population {
    /// Validates a tie-free population with at least one item on each side.
    pub fn new(values: Vec<f64>, assignment: Vec<Split>) -> Result<Self> {
        if values.len() != assignment.len() {
            return Err(Error::invalid(
                "assignment",
                format!("{} flags for {} values", assignment.len(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", "non-finite value"));
        }
        let n = assignment.iter().filter(|s| **s == Split::Calibration).count();
        let m = values.len() - n;
        if n == 0 || m == 0 {
            return Err(Error::invalid(
                "assignment",
                format!("need n >= 1 and m >= 1, got n={n}, m={m}"),
            ));
        }
        if has_ties(&values) {
            return Err(Error::TiesDetected);
        }
        Ok(Population {
            values,
            assignment,
            n,
            m,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn assignment(&self) -> &[Split] {
        &self.assignment
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn total(&self) -> usize {
        self.values.len()
    }

    pub fn calibration_items(&self) -> impl Iterator<Item = usize> + '_ {
        self.items_in(Split::Calibration)
    }

    pub fn test_items(&self) -> impl Iterator<Item = usize> + '_ {
        self.items_in(Split::Test)
    }

    fn items_in(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == split)
            .map(|(i, _)| i)
    }
}

/// `R(y, D)`: the number of elements of `values` that are `<= y`.
pub fn compute_rank(y: f64, values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::EmptyRankDomain);
    }
    Ok(values.iter().filter(|&&z| y >= z).count())
}

/// `R^{-1}(r, D)`: the r-th smallest element (1-indexed) of a tie-free multiset.
pub fn inverse_rank(r: usize, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyRankDomain);
    }
    if r == 0 || r > values.len() {
        return Err(Error::RankOutOfRange {
            rank: r,
            len: values.len(),
        });
    }
    let mut scratch = values.to_vec();
    let (_, nth, _) = scratch.select_nth_unstable_by(r - 1, f64::total_cmp);
    Ok(*nth)
}

/// True when two entries compare equal.
pub fn has_ties(values: &[f64]) -> bool {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// Shape of the tie-breaking noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterMode {
    /// Uniform on `(0, epsilon)`.
    OneSided,
    /// Uniform on `(-epsilon, epsilon)`.
    #[default]
    Symmetric,
}

/// Tie-breaking configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub epsilon: f64,
    pub mode: JitterMode,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            epsilon: 1e-9,
            mode: JitterMode::Symmetric,
        }
    }
}

impl Jitter {
    pub fn apply<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        jitter_ties(values, self.epsilon, self.mode, rng)
    }
}

/// Adds independent uniform noise of width `epsilon` to every value.
///
/// Values whose gap exceeds `2 * epsilon` keep their relative order.
pub fn jitter_ties<R: Rng + ?Sized>(
    values: &[f64],
    epsilon: f64,
    mode: JitterMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    Ok(values
        .iter()
        .map(|&v| {
            let u: f64 = rng.sample(Open01);
            match mode {
                JitterMode::OneSided => v + epsilon * u,
                JitterMode::Symmetric => v + epsilon * (2.0 * u - 1.0),
            }
        })
        .collect())
}

/// Assigns a uniformly random size-`n` subset of the items to calibration.
pub fn split_population<R: Rng + ?Sized>(values: Vec<f64>, n: usize, rng: &mut R) -> Result<Population> {
    let total = values.len();
    if n == 0 || n >= total {
        return Err(Error::invalid(
            "n",
            format!("need 1 <= n < {total}, got {n}"),
        ));
    }
    let mut assignment = vec![Split::Test; total];
    for i in rand::seq::index::sample(rng, total, n) {
        assignment[i] = Split::Calibration;
    }
    Population::new(values, assignment)
}

/// What a conformal method may observe: the split and the calibration
/// items' relative ranks. Test values and absolute ranks live elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationView {
    n: usize,
    m: usize,
    calibration_items: Vec<usize>,
    rel_ranks: Vec<usize>,
    test_items: Vec<usize>,
}

impl CalibrationView {
    /// Builds a view from calibration item indices and their relative ranks.
    pub fn new(
        total: usize,
        calibration_items: Vec<usize>,
        rel_ranks: Vec<usize>,
        test_items: Vec<usize>,
    ) -> Result<Self> {
        let n = calibration_items.len();
        let m = test_items.len();
        if n == 0 || m == 0 || n + m != total {
            return Err(Error::invalid(
                "calibration_items",
                format!("n={n}, m={m} inconsistent with N={total}"),
            ));
        }
        if rel_ranks.len() != n {
            return Err(Error::invalid("rel_ranks", "length differs from calibration count"));
        }
        if !is_permutation(&rel_ranks) {
            return Err(Error::invalid("rel_ranks", "not a permutation of 1..=n"));
        }
        let mut seen = vec![false; total];
        for &i in calibration_items.iter().chain(&test_items) {
            if i >= total || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("items", format!("item {i} repeated or out of range")));
            }
        }
        Ok(CalibrationView {
            n,
            m,
            calibration_items,
            rel_ranks,
            test_items,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn total(&self) -> usize {
        self.n + self.m
    }

    /// Calibration item indices; aligned with [`Self::rel_ranks`].
    pub fn calibration_items(&self) -> &[usize] {
        &self.calibration_items
    }

    pub fn rel_ranks(&self) -> &[usize] {
        &self.rel_ranks
    }

    pub fn test_items(&self) -> &[usize] {
        &self.test_items
    }
}

/// Harness-only ground truth: absolute ranks of all items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenTruth {
    abs_ranks: Vec<usize>,
}

impl HiddenTruth {
    pub fn abs_rank(&self, item: usize) -> usize {
        self.abs_ranks[item]
    }

    pub fn abs_ranks(&self) -> &[usize] {
        &self.abs_ranks
    }
}

/// Observed calibration ranks plus the hidden absolute ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankView {
    observed: CalibrationView,
    hidden: HiddenTruth,
}

impl RankView {
    pub fn observed(&self) -> &CalibrationView {
        &self.observed
    }

    pub fn hidden(&self) -> &HiddenTruth {
        &self.hidden
    }

    /// True absolute ranks of the calibration items, in view order.
    pub fn calibration_abs_ranks(&self) -> Vec<usize> {
        self.observed
            .calibration_items
            .iter()
            .map(|&i| self.hidden.abs_ranks[i])
            .collect()
    }

    /// True absolute ranks of the test items, in view order.
    pub fn test_abs_ranks(&self) -> Vec<usize> {
        self.observed
            .test_items
            .iter()
            .map(|&i| self.hidden.abs_ranks[i])
            .collect()
    }
}

/// Relative calibration ranks and absolute ranks of a tie-free population.
pub fn rank_view(pop: &Population) -> Result<RankView> {
    let values = pop.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));
    if order.windows(2).any(|w| values[w[0]] == values[w[1]]) {
        return Err(Error::TiesDetected);
    }

    let mut abs_ranks = vec![0; values.len()];
    let mut rel_of_item = vec![0; values.len()];
    let mut seen_calibration = 0;
    for (pos, &item) in order.iter().enumerate() {
        abs_ranks[item] = pos + 1;
        if pop.assignment()[item] == Split::Calibration {
            seen_calibration += 1;
            rel_of_item[item] = seen_calibration;
        }
    }

    let calibration_items: Vec<usize> = pop.calibration_items().collect();
    let rel_ranks = calibration_items.iter().map(|&i| rel_of_item[i]).collect();
    let observed = CalibrationView::new(
        values.len(),
        calibration_items,
        rel_ranks,
        pop.test_items().collect(),
    )?;
    Ok(RankView {
        observed,
        hidden: HiddenTruth { abs_ranks },
    })
}

pub(crate) fn is_permutation(ranks: &[usize]) -> bool {
    let mut seen = vec![false; ranks.len()];
    ranks.iter().all(|&r| {
        (1..=ranks.len()).contains(&r) && !std::mem::replace(&mut seen[r - 1], true)
    })
}
