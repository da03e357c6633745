//! Threshold-free equal error rate.
//!
//! A trial carries a real detection score; higher means "more genuine". The
//! false-alarm rate counts spoof trials scored strictly above a threshold,
//! the miss rate counts genuine trials scored strictly below it, so trials
//! tied with the threshold count toward neither error. The EER is the value
//! where the two monotone rates cross.

mod scores;

pub use scores::{read_scores, read_scores_from, write_scores, write_scores_to, EerReport};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Trial class. Detection scores are oriented genuine-positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Spoof,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Spoof => "spoof",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One scored trial, the unit of evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial_id: String,
    pub label: Label,
    pub score: f64,
}

/// EER plus the operating point it was read off at. After interpolation the
/// two rates agree to well under 1e-9.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub far_at: f64,
    pub frr_at: f64,
}

fn split_scores(scores: &[TrialScore]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut genuine = Vec::new();
    let mut spoof = Vec::new();
    for t in scores {
        if !t.score.is_finite() {
            return Err(Error::domain(format!(
                "trial {} has non-finite score {}",
                t.trial_id, t.score
            )));
        }
        match t.label {
            Label::Genuine => genuine.push(t.score),
            Label::Spoof => spoof.push(t.score),
        }
    }
    if genuine.is_empty() || spoof.is_empty() {
        return Err(Error::domain(format!(
            "both classes required: {} genuine, {} spoof",
            genuine.len(),
            spoof.len()
        )));
    }
    Ok((genuine, spoof))
}

fn rates(genuine: &[f64], spoof: &[f64], theta: f64) -> (f64, f64) {
    let fa = spoof.iter().filter(|s| **s > theta).count() as f64 / spoof.len() as f64;
    let miss = genuine.iter().filter(|s| **s < theta).count() as f64 / genuine.len() as f64;
    (fa, miss)
}

/// False-alarm and miss rates at one threshold, with strict inequalities on
/// both sides. Errors unless both classes are present.
pub fn far_frr_at(scores: &[TrialScore], theta: f64) -> Result<(f64, f64)> {
    let (genuine, spoof) = split_scores(scores)?;
    Ok(rates(&genuine, &spoof, theta))
}

/// Computes the equal error rate of a score set.
///
/// The two rates are swept over the midpoints between adjacent distinct
/// scores, bracketed by sentinels below the minimum and above the maximum
/// score. Midpoints are where both step functions are unambiguous: at a
/// threshold equal to an observed score, the strict inequalities drop the
/// tied trials from both counts at once, which dips both rates below their
/// surrounding values. The crossing is taken at the smallest grid point where
/// the rates meet exactly, or linearly interpolated inside the bracketing
/// grid interval where their difference changes sign.
pub fn compute_eer(scores: &[TrialScore]) -> Result<EerResult> {
    let (genuine, spoof) = split_scores(scores)?;

    let mut distinct: Vec<f64> = genuine.iter().chain(spoof.iter()).cloned().collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();

    let mut grid = Vec::with_capacity(distinct.len() + 1);
    grid.push(distinct[0] - 1.0);
    for pair in distinct.windows(2) {
        grid.push(0.5 * (pair[0] + pair[1]));
    }
    grid.push(distinct[distinct.len() - 1] + 1.0);

    let mut prev: Option<(f64, f64, f64)> = None;
    for &theta in &grid {
        let (fa, miss) = rates(&genuine, &spoof, theta);
        let diff = fa - miss;
        if diff == 0.0 {
            return Ok(EerResult {
                eer: fa,
                threshold: theta,
                far_at: fa,
                frr_at: miss,
            });
        }
        if diff < 0.0 {
            // The sentinel grid starts at (fa, miss) = (1, 0), so a negative
            // difference always has a positive predecessor.
            let (p_theta, p_fa, p_miss) = prev.expect("grid starts above the crossing");
            let p_diff = p_fa - p_miss;
            let t = p_diff / (p_diff - diff);
            let far_at = p_fa + t * (fa - p_fa);
            let frr_at = p_miss + t * (miss - p_miss);
            return Ok(EerResult {
                eer: 0.5 * (far_at + frr_at),
                threshold: p_theta + t * (theta - p_theta),
                far_at,
                frr_at,
            });
        }
        prev = Some((theta, fa, miss));
    }
    unreachable!("the grid ends below the crossing: (fa, miss) = (0, 1)")
}
