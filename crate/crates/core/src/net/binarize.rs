//! Probability-to-pianoroll post-processing.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Pianoroll, PITCHES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinarizeStrategy {
    /// Bit = probability >= threshold.
    Threshold,
    /// Thresholding, then gaps of at most `merge_gap` zeros between two
    /// ones within a pitch lane are filled.
    ThresholdWithMerge,
}

/// Binarizes `T x (tracks * 128)` frame probabilities into a pianoroll.
pub fn binarize(
    probabilities: &Array2<f64>,
    strategy: BinarizeStrategy,
    threshold: f64,
    merge_gap: usize,
) -> Result<Pianoroll> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid_argument(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    if probabilities.ncols() == 0 || probabilities.ncols() % PITCHES != 0 {
        return Err(Error::invalid_argument(format!(
            "frame width {} is not a multiple of {PITCHES}",
            probabilities.ncols()
        )));
    }
    let tracks = probabilities.ncols() / PITCHES;
    let time = probabilities.nrows();
    let mut roll = Pianoroll::zeros(tracks, time)?;
    for track in 0..tracks {
        for pitch in 0..PITCHES {
            let mut lane: Vec<bool> = (0..time)
                .map(|step| probabilities[[step, track * PITCHES + pitch]] >= threshold)
                .collect();
            if strategy == BinarizeStrategy::ThresholdWithMerge && merge_gap > 0 {
                fill_short_gaps(&mut lane, merge_gap);
            }
            for (step, &on) in lane.iter().enumerate() {
                roll.set(track, pitch, step, on);
            }
        }
    }
    Ok(roll)
}

/// Sets to 1 every run of at most `merge_gap` zeros that sits strictly
/// between two ones.
fn fill_short_gaps(lane: &mut [bool], merge_gap: usize) {
    let mut last_on: Option<usize> = None;
    for step in 0..lane.len() {
        if lane[step] {
            if let Some(prev) = last_on {
                let gap = step - prev - 1;
                if gap > 0 && gap <= merge_gap {
                    for slot in lane.iter_mut().take(step).skip(prev + 1) {
                        *slot = true;
                    }
                }
            }
            last_on = Some(step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane_probs(probs: &[f64]) -> Array2<f64> {
        let mut frames = Array2::zeros((probs.len(), PITCHES));
        for (step, &p) in probs.iter().enumerate() {
            frames[[step, 60]] = p;
        }
        frames
    }

    fn lane_bits(roll: &Pianoroll) -> Vec<u8> {
        (0..roll.time()).map(|s| roll.get(0, 60, s) as u8).collect()
    }

    #[test]
    fn merge_fills_one_step_gap() {
        let probs = lane_probs(&[0.9, 0.1, 0.9]);
        let roll = binarize(&probs, BinarizeStrategy::ThresholdWithMerge, 0.5, 1).unwrap();
        assert_eq!(lane_bits(&roll), vec![1, 1, 1]);
    }

    #[test]
    fn zero_merge_gap_keeps_gap() {
        let probs = lane_probs(&[0.9, 0.1, 0.9]);
        let roll = binarize(&probs, BinarizeStrategy::ThresholdWithMerge, 0.5, 0).unwrap();
        assert_eq!(lane_bits(&roll), vec![1, 0, 1]);
        let plain = binarize(&probs, BinarizeStrategy::Threshold, 0.5, 5).unwrap();
        assert_eq!(lane_bits(&plain), vec![1, 0, 1]);
    }

    #[test]
    fn below_threshold_stays_silent() {
        let probs = lane_probs(&[0.2, 0.3, 0.49]);
        let roll = binarize(&probs, BinarizeStrategy::Threshold, 0.5, 1).unwrap();
        assert_eq!(lane_bits(&roll), vec![0, 0, 0]);
    }

    #[test]
    fn long_gaps_survive_merge() {
        let probs = lane_probs(&[0.9, 0.1, 0.1, 0.1, 0.9]);
        let roll = binarize(&probs, BinarizeStrategy::ThresholdWithMerge, 0.5, 2).unwrap();
        assert_eq!(lane_bits(&roll), vec![1, 0, 0, 0, 1]);
        let roll = binarize(&probs, BinarizeStrategy::ThresholdWithMerge, 0.5, 3).unwrap();
        assert_eq!(lane_bits(&roll), vec![1, 1, 1, 1, 1]);
    }

    #[test]
    fn leading_and_trailing_zeros_never_fill() {
        let probs = lane_probs(&[0.1, 0.9, 0.1]);
        let roll = binarize(&probs, BinarizeStrategy::ThresholdWithMerge, 0.5, 4).unwrap();
        assert_eq!(lane_bits(&roll), vec![0, 1, 0]);
    }

    #[test]
    fn rejects_bad_threshold_and_width() {
        let probs = lane_probs(&[0.9]);
        assert!(binarize(&probs, BinarizeStrategy::Threshold, 0.0, 0).is_err());
        assert!(binarize(&probs, BinarizeStrategy::Threshold, 1.0, 0).is_err());
        let narrow = Array2::zeros((2, 64));
        assert!(binarize(&narrow, BinarizeStrategy::Threshold, 0.5, 0).is_err());
    }
}
