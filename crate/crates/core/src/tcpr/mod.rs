//! Envelope-based conformal ranking and the oracle baseline.
//!
//! TCPR bounds each calibration score by its worst case over the envelope band
//! of its relative rank, then takes an inflated order statistic of those
//! bounds. The oracle uses the true calibration scores, which only the harness
//! can see.

mod envelope;

pub use envelope::{
    joint_violation_rate, linear_envelope, quantile_envelope, simulate_sorted_ranks, theoretical_envelope, Envelope,
    EnvelopeKind, TcprConfig,
};

use crate::dcr::{check_alpha, conformal_index, order_statistic, MethodTag, Threshold};
use crate::error::{Error, Result};
use crate::population::{CalibrationView, HiddenTruth};
use crate::scores::Predictions;

use envelope::BAND_TOLERANCE;

/// Worst-case score of each calibration item over its envelope band, in view order.
pub fn proxy_scores(env: &Envelope, preds: &Predictions, view: &CalibrationView) -> Result<Vec<f64>> {
    if env.len() != view.n() {
        return Err(Error::invalid(
            "envelope",
            format!("fitted for n={}, view has n={}", env.len(), view.n()),
        ));
    }
    let total = view.total();
    if preds.len() != total {
        return Err(Error::invalid("preds", format!("{} predictions for N={total}", preds.len())));
    }
    let proxies = view
        .calibration_items()
        .iter()
        .zip(view.rel_ranks())
        .map(|(&item, &r)| {
            let lo = (env.lower[r - 1] - BAND_TOLERANCE).ceil().max(1.0);
            let hi = (env.upper[r - 1] + BAND_TOLERANCE).floor().min(total as f64);
            let (lo, hi) = if lo <= hi { (lo as usize, hi as usize) } else { (1, total) };
            // profiles are unimodal, so the maximum sits at an endpoint
            preds.score_at(item, lo).max(preds.score_at(item, hi))
        })
        .collect();
    Ok(proxies)
}

/// `ceil((n+1)(1-alpha+delta))`-th smallest proxy, `+inf` past `n`.
pub fn tcpr_threshold(proxy: &[f64], alpha: f64, delta: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    if !(delta > 0.0 && delta < alpha) {
        return Err(Error::invalid("delta", format!("need 0 < delta < alpha={alpha}, got {delta}")));
    }
    let n = proxy.len();
    if n == 0 {
        return Err(Error::invalid("proxy", "no calibration scores"));
    }
    let k = conformal_index(n, 1.0 - alpha + delta);
    Ok(Threshold {
        value: order_statistic(proxy, k),
        level: k as f64 / (n + 1) as f64,
        method: MethodTag::Tcpr,
    })
}

/// Calibration scores at the true absolute ranks, in view order.
pub fn true_scores(preds: &Predictions, view: &CalibrationView, hidden: &HiddenTruth) -> Vec<f64> {
    view.calibration_items()
        .iter()
        .map(|&item| preds.score_at(item, hidden.abs_rank(item)))
        .collect()
}

/// `ceil((n+1)(1-alpha))`-th smallest true score, `+inf` past `n`.
pub fn oracle_threshold(true_scores: &[f64], alpha: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    let n = true_scores.len();
    if n == 0 {
        return Err(Error::invalid("true_scores", "no calibration scores"));
    }
    let k = conformal_index(n, 1.0 - alpha);
    Ok(Threshold {
        value: order_statistic(true_scores, k),
        level: k as f64 / (n + 1) as f64,
        method: MethodTag::Oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(lower: Vec<f64>, upper: Vec<f64>) -> Envelope {
        Envelope {
            lower,
            upper,
            kind: EnvelopeKind::Linear,
            delta: 0.1,
            parameter: 0.0,
        }
    }

    #[test]
    fn ra_proxy_takes_farther_endpoint() {
        // item 0 predicted at rank 3, band [2, 8] for relative rank 1
        let preds = Predictions::ra(vec![3, 1, 2, 4, 5, 6, 7, 8, 9, 10]).unwrap();
        let view = CalibrationView::new(10, vec![0], vec![1], (1..10).collect()).unwrap();
        let env = band(vec![1.5], vec![8.2]);
        assert_eq!(proxy_scores(&env, &preds, &view).unwrap(), vec![5.0]);
        let point = band(vec![4.0], vec![4.0]);
        assert_eq!(proxy_scores(&point, &preds, &view).unwrap(), vec![1.0]);
        // rounding leaves no integer rank: whole range
        let empty = band(vec![4.2], vec![4.8]);
        assert_eq!(proxy_scores(&empty, &preds, &view).unwrap(), vec![7.0]);
    }

    #[test]
    fn va_proxy_spanning_own_rank() {
        let preds = Predictions::va(vec![0.5, 0.1, 0.2, 0.9, 0.7]).unwrap();
        let view = CalibrationView::new(5, vec![0], vec![1], vec![1, 2, 3, 4]).unwrap();
        let env = band(vec![2.0], vec![5.0]);
        // sorted predictions (0.1, 0.2, 0.5, 0.7, 0.9): endpoints 0.2 and 0.9
        let s = proxy_scores(&env, &preds, &view).unwrap()[0];
        assert!((s - 0.4).abs() < 1e-12);
    }

    #[test]
    fn tcpr_threshold_cases() {
        let t = tcpr_threshold(&[1.0, 2.0, 3.0, 4.0], 0.5, 0.1).unwrap();
        assert_eq!(t.value, 3.0);
        assert!(tcpr_threshold(&[1.0, 2.0], 0.2, 0.05).unwrap().is_infinite());
        assert_eq!(tcpr_threshold(&[2.5; 30], 0.2, 0.05).unwrap().value, 2.5);
        assert!(tcpr_threshold(&[1.0], 0.1, 0.1).is_err());
    }

    #[test]
    fn oracle_threshold_cases() {
        let scores: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(oracle_threshold(&scores, 0.1).unwrap().value, 9.0);
        assert_eq!(oracle_threshold(&[5.0], 0.5).unwrap().value, 5.0);
        assert!(oracle_threshold(&[5.0], 0.4).unwrap().is_infinite());
        assert_eq!(oracle_threshold(&[0.0; 20], 0.1).unwrap().value, 0.0);
    }
}
