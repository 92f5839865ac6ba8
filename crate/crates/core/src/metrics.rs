//! Pianoroll evaluation metrics.
//!
//! Four musically-motivated scores over binary pianorolls: self-similarity
//! matrix distance (SSMD), chroma similarity (CS), grooving-pattern
//! similarity (GS), and note density distance (NDD). Distances are 0 and
//! similarities 100 when prediction equals target; every score lies in
//! `[0, 100]`.
//!
//! Inputs are compared over their sounding extent: both rolls are padded
//! (or trimmed of trailing silence) to the smallest measure multiple
//! covering the last active step of either roll, so appending equal
//! all-zero padding to both never changes a score.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub const PITCHES: usize = 128;
/// Sixteenth-note steps per measure in the assumed 4/4 meter.
pub const STEPS_PER_MEASURE: usize = 16;
pub const STEPS_PER_HALF_MEASURE: usize = 8;
pub const STEPS_PER_QUARTER: usize = 4;

/// Binary pianoroll: `tracks x 128 x time` at sixteenth-note resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Pianoroll {
    bits: Array3<u8>,
}

impl Pianoroll {
    pub fn new(bits: Array3<u8>) -> Result<Self> {
        if bits.shape()[0] == 0 {
            return Err(Error::invalid_argument("pianoroll needs at least one track"));
        }
        if bits.shape()[1] != PITCHES {
            return Err(Error::invalid_argument(format!(
                "pianoroll has {} pitch lanes, expected {PITCHES}",
                bits.shape()[1]
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid_argument("pianoroll entries must be 0 or 1"));
        }
        Ok(Pianoroll { bits })
    }

    pub fn zeros(tracks: usize, time: usize) -> Result<Self> {
        if tracks == 0 {
            return Err(Error::invalid_argument("pianoroll needs at least one track"));
        }
        Ok(Pianoroll { bits: Array3::zeros((tracks, PITCHES, time)) })
    }

    pub fn tracks(&self) -> usize {
        self.bits.shape()[0]
    }

    pub fn time(&self) -> usize {
        self.bits.shape()[2]
    }

    pub fn bits(&self) -> &Array3<u8> {
        &self.bits
    }

    pub fn set(&mut self, track: usize, pitch: usize, step: usize, on: bool) {
        self.bits[[track, pitch, step]] = on as u8;
    }

    pub fn get(&self, track: usize, pitch: usize, step: usize) -> bool {
        self.bits[[track, pitch, step]] == 1
    }

    /// Index of one past the last step with any active bit; 0 when silent.
    pub fn sounding_extent(&self) -> usize {
        for step in (0..self.time()).rev() {
            for track in 0..self.tracks() {
                for pitch in 0..PITCHES {
                    if self.bits[[track, pitch, step]] == 1 {
                        return step + 1;
                    }
                }
            }
        }
        0
    }
}

/// Onset counts per pitch class per half-measure: `H x 12`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaSequence {
    counts: Array2<f64>,
}

impl ChromaSequence {
    pub fn half_measures(&self) -> usize {
        self.counts.nrows()
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }
}

/// Rising-edge onset grid over the requested tracks, merged by bitwise OR
/// before edge extraction. A 1 whose predecessor in the same pitch lane is
/// 0 counts as an onset; the first column always does.
pub fn onsets(roll: &Pianoroll, track_set: &[usize]) -> Result<Array2<u8>> {
    for &t in track_set {
        if t >= roll.tracks() {
            return Err(Error::invalid_argument(format!(
                "track {t} out of range for {}-track roll",
                roll.tracks()
            )));
        }
    }
    let time = roll.time();
    let mut merged = Array2::<u8>::zeros((PITCHES, time));
    for &t in track_set {
        for pitch in 0..PITCHES {
            for step in 0..time {
                merged[[pitch, step]] |= roll.bits[[t, pitch, step]];
            }
        }
    }
    let mut out = Array2::<u8>::zeros((PITCHES, time));
    for pitch in 0..PITCHES {
        for step in 0..time {
            let prev = if step == 0 { 0 } else { merged[[pitch, step - 1]] };
            out[[pitch, step]] = merged[[pitch, step]] & !prev & 1;
        }
    }
    Ok(out)
}

fn all_tracks(roll: &Pianoroll) -> Vec<usize> {
    (0..roll.tracks()).collect()
}

/// Chroma sequence of a roll padded to `padded_time` steps (a half-measure
/// multiple): entry `(h, c)` counts onsets at pitches `p` with
/// `p mod 12 == c` inside half-measure `h`, over all tracks.
pub fn chroma_padded(roll: &Pianoroll, padded_time: usize) -> Result<ChromaSequence> {
    if padded_time % STEPS_PER_HALF_MEASURE != 0 {
        return Err(Error::invalid_argument(format!(
            "padded length {padded_time} is not a half-measure multiple"
        )));
    }
    let grid = onsets(roll, &all_tracks(roll))?;
    let half_measures = padded_time / STEPS_PER_HALF_MEASURE;
    let mut counts = Array2::zeros((half_measures, 12));
    for pitch in 0..PITCHES {
        for step in 0..roll.time().min(padded_time) {
            if grid[[pitch, step]] == 1 {
                counts[[step / STEPS_PER_HALF_MEASURE, pitch % 12]] += 1.0;
            }
        }
    }
    Ok(ChromaSequence { counts })
}

/// Chroma sequence over the roll's own length padded up to a half-measure
/// multiple.
pub fn chroma(roll: &Pianoroll) -> Result<ChromaSequence> {
    let padded = roll.time().div_ceil(STEPS_PER_HALF_MEASURE) * STEPS_PER_HALF_MEASURE;
    chroma_padded(roll, padded)
}

/// Shared evaluation length: the sounding extent of either roll, rounded
/// up to a measure boundary.
fn aligned_time(target: &Pianoroll, prediction: &Pianoroll) -> usize {
    let extent = target.sounding_extent().max(prediction.sounding_extent());
    extent.div_ceil(STEPS_PER_MEASURE) * STEPS_PER_MEASURE
}

// dot / sqrt(sq_a * sq_b) rather than dot / (sqrt(sq_a) * sqrt(sq_b)):
// for a == b this yields exactly 1, so identity scores are exact.
fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sq_a: f64 = a.iter().map(|x| x * x).sum();
    let sq_b: f64 = b.iter().map(|x| x * x).sum();
    if sq_a == 0.0 || sq_b == 0.0 {
        0.0
    } else {
        dot / (sq_a * sq_b).sqrt()
    }
}

fn self_similarity(chroma: &ChromaSequence) -> Array2<f64> {
    let h = chroma.half_measures();
    let mut ssm = Array2::zeros((h, h));
    for i in 0..h {
        for j in 0..h {
            ssm[[i, j]] = cosine_or_zero(
                chroma.counts.row(i).as_slice().unwrap(),
                chroma.counts.row(j).as_slice().unwrap(),
            );
        }
    }
    ssm
}

/// Self-similarity matrix distance, in percent: the mean absolute
/// difference between the chroma self-similarity matrices of target and
/// prediction. Zero-vector cosines are defined as 0.
pub fn ssmd(target: &Pianoroll, prediction: &Pianoroll) -> Result<f64> {
    let time = aligned_time(target, prediction);
    if time == 0 {
        return Ok(0.0); // two silent rolls are identical
    }
    let ssm_t = self_similarity(&chroma_padded(target, time)?);
    let ssm_p = self_similarity(&chroma_padded(prediction, time)?);
    let h = ssm_t.nrows();
    let total: f64 = ssm_t.iter().zip(ssm_p.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(100.0 * total / (h * h) as f64)
}

/// Chroma similarity, in percent: mean cosine similarity between
/// corresponding chroma entries. A pair of zero vectors counts as
/// identical emptiness (100); a single zero vector counts as 0.
pub fn chroma_similarity(target: &Pianoroll, prediction: &Pianoroll) -> Result<f64> {
    let time = aligned_time(target, prediction);
    if time == 0 {
        return Ok(100.0);
    }
    let chroma_t = chroma_padded(target, time)?;
    let chroma_p = chroma_padded(prediction, time)?;
    let h = chroma_t.half_measures();
    let mut total = 0.0;
    for i in 0..h {
        let a = chroma_t.counts.row(i);
        let b = chroma_p.counts.row(i);
        let empty_a = a.iter().all(|&v| v == 0.0);
        let empty_b = b.iter().all(|&v| v == 0.0);
        total += if empty_a && empty_b {
            1.0
        } else {
            cosine_or_zero(a.as_slice().unwrap(), b.as_slice().unwrap())
        };
    }
    Ok(100.0 * total / h as f64)
}

/// Per-quarter-note onset indicator over all tracks.
fn grooving_pattern(roll: &Pianoroll, padded_time: usize) -> Result<Vec<bool>> {
    let grid = onsets(roll, &all_tracks(roll))?;
    let quarters = padded_time / STEPS_PER_QUARTER;
    let mut pattern = vec![false; quarters];
    for pitch in 0..PITCHES {
        for step in 0..roll.time().min(padded_time) {
            if grid[[pitch, step]] == 1 {
                pattern[step / STEPS_PER_QUARTER] = true;
            }
        }
    }
    Ok(pattern)
}

/// Grooving-pattern similarity, in percent: the share of quarter-notes
/// whose onset indicators match between target and prediction.
pub fn grooving_similarity(target: &Pianoroll, prediction: &Pianoroll) -> Result<f64> {
    let time = aligned_time(target, prediction);
    if time == 0 {
        return Ok(100.0);
    }
    let pattern_t = grooving_pattern(target, time)?;
    let pattern_p = grooving_pattern(prediction, time)?;
    let matches = pattern_t.iter().zip(&pattern_p).filter(|(a, b)| a == b).count();
    Ok(100.0 * matches as f64 / pattern_t.len() as f64)
}

/// Sounding-pitch count per sixteenth step, over the union of tracks.
fn density(roll: &Pianoroll, padded_time: usize) -> Vec<usize> {
    let mut counts = vec![0usize; padded_time];
    for (step, count) in counts.iter_mut().enumerate().take(roll.time().min(padded_time)) {
        for pitch in 0..PITCHES {
            let active = (0..roll.tracks()).any(|t| roll.bits[[t, pitch, step]] == 1);
            *count += active as usize;
        }
    }
    counts
}

/// Note density distance, in percent: per sixteenth step, the absolute
/// density difference relative to the target density (floor 1), capped at
/// 1 so over-predicted steps cannot push the score past 100; averaged over
/// steps. Asymmetric by construction: the denominator comes from the
/// target.
pub fn note_density_distance(target: &Pianoroll, prediction: &Pianoroll) -> Result<f64> {
    let time = aligned_time(target, prediction);
    if time == 0 {
        return Ok(0.0);
    }
    let density_t = density(target, time);
    let density_p = density(prediction, time);
    let total: f64 = density_t
        .iter()
        .zip(&density_p)
        .map(|(&t, &p)| {
            let diff = t.abs_diff(p) as f64;
            (diff / t.max(1) as f64).min(1.0)
        })
        .sum();
    Ok(100.0 * total / time as f64)
}
