//! Grid search over alpha with a bootstrap one-standard-error rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_from_counts, ConfusionCounts};
use crate::model::VerifiabilityLabel;

pub const DEFAULT_GRID: [f64; 6] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
pub const TIE_ALPHA: f64 = 0.6;

/// Which end of the one-SE band to pick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    PreferSmaller,
    PreferLarger,
}

impl std::str::FromStr for TieBreak {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "prefer-smaller" | "smaller" => Ok(Self::PreferSmaller),
            "prefer-larger" | "larger" => Ok(Self::PreferLarger),
            other => Err(format!("unknown tie-break {other:?} (expected prefer-smaller or prefer-larger)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub resamples: usize,
    pub seed: u64,
    pub tie_break: TieBreak,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { resamples: 1000, seed: 0, tie_break: TieBreak::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTuneResult {
    pub grid: Vec<f64>,
    /// F1 on the full dev set.
    pub point_f1: Vec<f64>,
    /// Mean F1 over bootstrap replicates.
    pub mean_f1: Vec<f64>,
    /// Bootstrap standard error of F1.
    pub std_error: Vec<f64>,
    pub best_alpha: f64,
    pub chosen_alpha: f64,
    pub config: TuneConfig,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TuneError {
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("at least one bootstrap resample is required")]
    NoResamples,
    #[error("alpha {alpha}: {message}")]
    Evaluation { alpha: f64, message: String },
    #[error("alpha {alpha} produced {got} predictions, expected {expected}")]
    LengthMismatch { alpha: f64, got: usize, expected: usize },
    #[error("dev set has no claims")]
    EmptyDevSet,
}

/// Gold label and prediction for one dev claim; `None` if the claim
/// produced no usable verdict.
pub type Prediction = (VerifiabilityLabel, Option<VerifiabilityLabel>);

fn f1_of(preds: &[Prediction], idx: impl Iterator<Item = usize>) -> f64 {
    let mut c = ConfusionCounts::default();
    for i in idx {
        if let (gold, Some(p)) = preds[i] {
            c.add(gold, p);
        }
    }
    f1_from_counts(&c)
}

/// Evaluate `predict` at every alpha in `grid` and pick one by the
/// one-standard-error rule.
///
/// Every alpha is scored on the same bootstrap resamples, so differences
/// between grid points are not blurred by resampling noise. If several
/// points share the best mean exactly and 0.6 is one of them, 0.6 wins;
/// otherwise the `tie_break` end of the band within one SE of the best
/// mean is chosen.
pub fn tune_alpha<F, E>(grid: &[f64], config: &TuneConfig, mut predict: F) -> Result<AlphaTuneResult, TuneError>
where
    F: FnMut(f64) -> Result<Vec<Prediction>, E>,
    E: std::fmt::Display,
{
    if grid.is_empty() {
        return Err(TuneError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(TuneError::AlphaOutOfRange(bad));
    }
    if config.resamples == 0 {
        return Err(TuneError::NoResamples);
    }
    let mut per_alpha = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let preds = predict(alpha).map_err(|e| TuneError::Evaluation { alpha, message: e.to_string() })?;
        per_alpha.push(preds);
    }
    let n = per_alpha[0].len();
    if n == 0 {
        return Err(TuneError::EmptyDevSet);
    }
    for (preds, &alpha) in per_alpha.iter().zip(grid) {
        if preds.len() != n {
            return Err(TuneError::LengthMismatch { alpha, got: preds.len(), expected: n });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let resamples: Vec<Vec<usize>> =
        (0..config.resamples).map(|_| (0..n).map(|_| rng.random_range(0..n)).collect()).collect();

    let mut point_f1 = Vec::new();
    let mut mean_f1 = Vec::new();
    let mut std_error = Vec::new();
    for preds in &per_alpha {
        point_f1.push(f1_of(preds, 0..n));
        let reps: Vec<f64> = resamples.iter().map(|idx| f1_of(preds, idx.iter().copied())).collect();
        let b = reps.len() as f64;
        let mean = reps.iter().sum::<f64>() / b;
        let var = if reps.len() > 1 { reps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0) } else { 0.0 };
        mean_f1.push(mean);
        std_error.push(var.sqrt());
    }

    let best = (0..grid.len()).fold(0, |best, i| if mean_f1[i] > mean_f1[best] { i } else { best });
    let tied: Vec<usize> = (0..grid.len()).filter(|&i| mean_f1[i] == mean_f1[best]).collect();
    let chosen = if tied.len() > 1 && tied.iter().any(|&i| grid[i] == TIE_ALPHA) {
        TIE_ALPHA
    } else {
        let threshold = mean_f1[best] - std_error[best];
        let band = (0..grid.len()).filter(|&i| mean_f1[i] >= threshold).map(|i| grid[i]);
        match config.tie_break {
            TieBreak::PreferSmaller => band.fold(f64::INFINITY, f64::min),
            TieBreak::PreferLarger => band.fold(f64::NEG_INFINITY, f64::max),
        }
    };
    Ok(AlphaTuneResult {
        grid: grid.to_vec(),
        point_f1,
        mean_f1,
        std_error,
        best_alpha: grid[best],
        chosen_alpha: chosen,
        config: *config,
    })
}
