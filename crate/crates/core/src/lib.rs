//! Conformal prediction sets for the absolute ranks of test items.
//!
//! Calibration items reveal only their ranks among themselves. Their ranks in
//! the full population follow a Negative Hypergeometric law, which DCR folds
//! into the calibration score distribution before taking a conformal quantile.
//! TCPR (envelope bounds) and an oracle with access to the true ranks are
//! provided as baselines, together with a synthetic benchmark harness and
//! exhaustive checks for small populations.

pub mod datagen;
pub mod dcr;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod neghyper;
pub mod population;
pub mod scores;
pub mod seed;
pub mod tcpr;
pub mod verify;

pub use dcr::{dcr, dcr_threshold, mdcr_threshold, prediction_set, prediction_sets, MethodTag, MixtureCdf, Threshold};
pub use error::{Error, Result};
pub use neghyper::NegHypergeom;
pub use population::{rank_view, CalibrationView, HiddenTruth, Population, RankView, Split};
pub use scores::{Predictions, RankInterval, ScoreKind};
pub use tcpr::{Envelope, EnvelopeKind, TcprConfig};
