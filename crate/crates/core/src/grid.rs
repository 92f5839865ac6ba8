//! Positional index grids.
//!
//! A grid assigns every timestep a vector of real-valued positional labels,
//! one per structural level. The plain time axis is the one-level linear
//! grid `p_i = i`; structural grids replace it with labels such as chord or
//! phrase identifiers, which may repeat and recur across timesteps.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sequence of positional index vectors, stored as a `T x L` matrix.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralGrid {
    indices: Array2<f64>,
}

impl StructuralGrid {
    /// Builds a grid from a `T x L` index matrix.
    pub fn from_indices(indices: Array2<f64>) -> Result<Self> {
        if indices.nrows() == 0 {
            return Err(Error::invalid_argument("grid must have at least one timestep"));
        }
        if indices.ncols() == 0 {
            return Err(Error::invalid_argument("grid must have at least one level"));
        }
        if indices.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument("grid labels must be finite"));
        }
        Ok(StructuralGrid { indices })
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.indices.nrows()
    }

    /// A grid always has at least one timestep.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of structural levels `L`.
    pub fn levels(&self) -> usize {
        self.indices.ncols()
    }

    pub fn indices(&self) -> &Array2<f64> {
        &self.indices
    }

    /// Label vector for timestep `i`.
    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.indices.row(i)
    }

    /// New grid restricted to the first `len` timesteps.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::invalid_argument(format!(
                "prefix length {len} outside 1..={}",
                self.len()
            )));
        }
        StructuralGrid::from_indices(self.indices.slice(ndarray::s![..len, ..]).to_owned())
    }

    /// New grid keeping only the levels named in `mask`, in mask order.
    pub fn select_levels(&self, mask: &[usize]) -> Result<Self> {
        let columns: Vec<Vec<f64>> = mask
            .iter()
            .map(|&level| {
                if level >= self.levels() {
                    return Err(Error::invalid_argument(format!(
                        "level {level} out of range for {}-level grid",
                        self.levels()
                    )));
                }
                Ok(self.indices.column(level).to_vec())
            })
            .collect::<Result<_>>()?;
        let sequences: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        let remap: Vec<usize> = (0..mask.len()).collect();
        build_grid(&sequences, &remap)
    }
}

/// Structure-free grid: one level with `indices[i][0] = i`.
pub fn linear_grid(len: usize) -> Result<StructuralGrid> {
    if len == 0 {
        return Err(Error::invalid_argument("linear grid length must be at least 1"));
    }
    let indices = Array2::from_shape_fn((len, 1), |(i, _)| i as f64);
    StructuralGrid::from_indices(indices)
}

/// Multi-level grid from per-level label sequences.
///
/// `level_mask` selects which levels to keep and in which column order,
/// supporting one-level-at-a-time ablations.
pub fn structural_grid<S: AsRef<[f64]>>(
    label_sequences: &[S],
    level_mask: &[usize],
) -> Result<StructuralGrid> {
    let sequences: Vec<&[f64]> = label_sequences.iter().map(|s| s.as_ref()).collect();
    build_grid(&sequences, level_mask)
}

fn build_grid(sequences: &[&[f64]], level_mask: &[usize]) -> Result<StructuralGrid> {
    if sequences.is_empty() {
        return Err(Error::invalid_argument("no label sequences supplied"));
    }
    if level_mask.is_empty() {
        return Err(Error::invalid_argument("level mask must be non-empty"));
    }
    let mut seen = HashSet::new();
    for &level in level_mask {
        if level >= sequences.len() {
            return Err(Error::invalid_argument(format!(
                "level {level} out of range for {} sequences",
                sequences.len()
            )));
        }
        if !seen.insert(level) {
            return Err(Error::invalid_argument(format!("level {level} repeated in mask")));
        }
    }
    let len = sequences[0].len();
    if sequences.iter().any(|s| s.len() != len) {
        return Err(Error::invalid_argument("label sequences have unequal lengths"));
    }
    if len == 0 {
        return Err(Error::invalid_argument("label sequences are empty"));
    }
    let indices =
        Array2::from_shape_fn((len, level_mask.len()), |(i, j)| sequences[level_mask[j]][i]);
    StructuralGrid::from_indices(indices)
}

/// Native clock of a label sequence, in sixteenth-note steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Sixteenth,
    Quarter,
    Measure,
}

impl Resolution {
    /// Sixteenth-note steps covered by one label at this resolution.
    pub fn steps(self) -> usize {
        match self {
            Resolution::Sixteenth => 1,
            Resolution::Quarter => 4,
            Resolution::Measure => 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelLevel {
    pub name: String,
    pub resolution: Resolution,
    pub labels: Vec<f64>,
}

/// On-disk label alignment: per-level label sequences with native clocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelFile {
    pub clock_resolution: Resolution,
    pub levels: Vec<LabelLevel>,
}

/// Loads a label file and upsamples every level to the sixteenth-note clock
/// by repetition, so all levels share one index vector per timestep.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let file: LabelFile =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("label file: {e}")))?;
    upsample_labels(&file)
}

/// Upsamples the levels of an in-memory label file to the common clock.
pub fn upsample_labels(file: &LabelFile) -> Result<Vec<Vec<f64>>> {
    if file.clock_resolution != Resolution::Sixteenth {
        return Err(Error::Parse(
            "label file clock_resolution must be \"sixteenth\"".into(),
        ));
    }
    if file.levels.is_empty() {
        return Err(Error::Parse("label file declares no levels".into()));
    }
    let sequences: Vec<Vec<f64>> = file
        .levels
        .iter()
        .map(|level| {
            level
                .labels
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, level.resolution.steps()))
                .collect()
        })
        .collect();
    let len = sequences[0].len();
    for (seq, level) in sequences.iter().zip(&file.levels) {
        if seq.len() != len {
            return Err(Error::invalid_data(format!(
                "level \"{}\" upsamples to {} steps, expected {}",
                level.name,
                seq.len(),
                len
            )));
        }
    }
    Ok(sequences)
}
