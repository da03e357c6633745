//! Scoring a model over a dataset: the bridge from logits to trial scores.

use crate::adaptation::AdaptationState;
use crate::error::Result;
use crate::evaluation::{compute_eer, EerResult, TrialScore};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::numerics::Matrix;
use crate::synthdata::{crop_or_pad, Dataset};

/// Number of trials scored per forward call.
const SCORE_CHUNK: usize = 64;

/// Scores every trial: the detection score is the genuine-minus-spoof logit
/// margin, so higher means more genuine.
pub fn score_dataset(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    dataset: &Dataset,
) -> Result<Vec<TrialScore>> {
    let mut scores = Vec::with_capacity(dataset.len());
    for chunk in dataset.trials.chunks(SCORE_CHUNK) {
        let inputs: Vec<Matrix> = chunk
            .iter()
            .map(|t| crop_or_pad(&t.features, cfg.max_seq_len))
            .collect();
        let logits = forward(cfg, params, state, &inputs)?;
        for (i, trial) in chunk.iter().enumerate() {
            let row = logits.row(i);
            scores.push(TrialScore {
                trial_id: trial.trial_id.clone(),
                label: trial.label,
                score: row[0] - row[1],
            });
        }
    }
    Ok(scores)
}

/// Scores a dataset and computes its equal error rate in one step.
pub fn evaluate_eer(
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
    dataset: &Dataset,
) -> Result<EerResult> {
    let scores = score_dataset(cfg, params, state, dataset)?;
    compute_eer(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{instrument, AdaptationMethod};
    use crate::numerics::RngStream;
    use crate::synthdata::{generate_dataset, DatasetSpec, Split};

    #[test]
    fn scores_cover_every_trial_and_are_finite() {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            n_classes: 2,
            max_seq_len: 6,
        };
        let mut rng = RngStream::new(1);
        let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
        let state = instrument(&mut params, &cfg, &AdaptationMethod::Fixed, &mut rng).unwrap();
        // Dataset frames are longer than max_seq_len to exercise cropping.
        let ds = generate_dataset(&DatasetSpec::new(10, 9, cfg.d_model, 3), Split::Eval).unwrap();
        let scores = score_dataset(&cfg, &params, &state, &ds).unwrap();
        assert_eq!(scores.len(), ds.len());
        assert!(scores.iter().all(|s| s.score.is_finite()));
        assert_eq!(scores[0].trial_id, ds.trials[0].trial_id);
    }
}
