//! Synthetic harmonization tasks for desk-scale experiments.
//!
//! The chord-cue task makes structural positional encoding informative by
//! construction: the chord identity is announced by a one-step melody cue
//! at each block start and appears in the grid's chord level, while the
//! accompaniment target depends on the chord over the whole block. A model
//! that can key attention on matching chord labels can retrieve the cue;
//! a structure-blind model cannot tell which cue governs the current block.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{structural_grid, StructuralGrid};
use crate::net::model::{INPUT_WIDTH, OUTPUT_WIDTH, PITCHES};

/// Steps per chord block in the chord-cue task (half a measure).
pub const CHORD_BLOCK_STEPS: usize = 8;

/// One training sequence: input frames, target frames, and the structural
/// grid carrying every label level.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
    pub grid: StructuralGrid,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.nrows() == 0
    }
}

/// Copy task: random one-note melody and bridge lanes; the target repeats
/// both input tracks and leaves the accompaniment silent. Grid is linear.
pub fn copy_task(num_samples: usize, len: usize, seed: u64) -> Result<Vec<Sample>> {
    if num_samples == 0 || len == 0 {
        return Err(Error::invalid_argument("copy task needs samples >= 1 and len >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let mut input = Array2::zeros((len, INPUT_WIDTH));
        let mut target = Array2::zeros((len, OUTPUT_WIDTH));
        for step in 0..len {
            for track in 0..2 {
                let pitch = rng.random_range(40..100usize);
                input[[step, track * PITCHES + pitch]] = 1.0;
                target[[step, track * PITCHES + pitch]] = 1.0;
            }
        }
        let labels: Vec<f64> = (0..len).map(|i| i as f64).collect();
        samples.push(Sample { input, target, grid: structural_grid(&[labels], &[0])? });
    }
    Ok(samples)
}

/// Accompaniment pitches for a chord identity: a root-position triad.
pub fn chord_triad(chord: usize) -> [usize; 3] {
    [36 + chord, 40 + chord, 43 + chord]
}

/// Melody cue pitch announcing a chord at its block start.
pub fn chord_cue_pitch(chord: usize) -> usize {
    60 + chord
}

/// Chord-cue harmonization task.
///
/// Level 0 of the grid holds the chord identity (repeating across blocks
/// that share a chord), level 1 the running block index. The melody track
/// sounds the cue pitch on the first step of each block and is otherwise
/// silent; the bridge track is silent. Targets copy both input tracks and
/// sustain the chord's triad on the accompaniment track for every step of
/// the block.
pub fn chord_cue_task(
    num_samples: usize,
    len: usize,
    num_chords: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if num_samples == 0 || len == 0 {
        return Err(Error::invalid_argument("chord task needs samples >= 1 and len >= 1"));
    }
    if num_chords == 0 || num_chords > 12 {
        return Err(Error::invalid_argument("chord count must lie in 1..=12"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let blocks = len.div_ceil(CHORD_BLOCK_STEPS);
        let chords: Vec<usize> = (0..blocks).map(|_| rng.random_range(0..num_chords)).collect();
        let mut input = Array2::zeros((len, INPUT_WIDTH));
        let mut target = Array2::zeros((len, OUTPUT_WIDTH));
        let mut chord_level = Vec::with_capacity(len);
        let mut block_level = Vec::with_capacity(len);
        for step in 0..len {
            let block = step / CHORD_BLOCK_STEPS;
            let chord = chords[block];
            chord_level.push(chord as f64);
            block_level.push(block as f64);
            if step % CHORD_BLOCK_STEPS == 0 {
                let cue = chord_cue_pitch(chord);
                input[[step, cue]] = 1.0;
                target[[step, cue]] = 1.0;
            }
            for pitch in chord_triad(chord) {
                target[[step, 2 * PITCHES + pitch]] = 1.0;
            }
        }
        samples.push(Sample {
            input,
            target,
            grid: structural_grid(&[chord_level, block_level], &[0, 1])?,
        });
    }
    Ok(samples)
}
