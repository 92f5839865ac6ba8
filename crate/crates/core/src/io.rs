//! JSON wire formats: row-major arrays with explicit shape headers.

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FourierParams;
use crate::grid::StructuralGrid;
use crate::metrics::{Pianoroll, PITCHES};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_array(array: &Array2<f64>) -> Self {
        MatrixJson {
            rows: array.nrows(),
            cols: array.ncols(),
            data: array.iter().cloned().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Parse(format!(
                "matrix declares {}x{} but carries {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Parse(format!("matrix shape: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridJson {
    pub length: usize,
    pub levels: usize,
    pub indices: Vec<f64>,
}

impl GridJson {
    pub fn from_grid(grid: &StructuralGrid) -> Self {
        GridJson {
            length: grid.len(),
            levels: grid.levels(),
            indices: grid.indices().iter().cloned().collect(),
        }
    }

    pub fn to_grid(&self) -> Result<StructuralGrid> {
        if self.indices.len() != self.length * self.levels {
            return Err(Error::Parse(format!(
                "grid declares {}x{} but carries {} labels",
                self.length,
                self.levels,
                self.indices.len()
            )));
        }
        let indices = Array2::from_shape_vec((self.length, self.levels), self.indices.clone())
            .map_err(|e| Error::Parse(format!("grid shape: {e}")))?;
        StructuralGrid::from_indices(indices)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PianorollJson {
    pub tracks: usize,
    pub pitches: usize,
    pub time: usize,
    pub data: Vec<u8>,
}

impl PianorollJson {
    pub fn from_roll(roll: &Pianoroll) -> Self {
        PianorollJson {
            tracks: roll.tracks(),
            pitches: PITCHES,
            time: roll.time(),
            data: roll.bits().iter().cloned().collect(),
        }
    }

    pub fn to_roll(&self) -> Result<Pianoroll> {
        if self.pitches != PITCHES {
            return Err(Error::Parse(format!(
                "pianoroll declares {} pitches, expected {PITCHES}",
                self.pitches
            )));
        }
        if self.data.len() != self.tracks * self.pitches * self.time {
            return Err(Error::Parse(format!(
                "pianoroll declares {}x{}x{} but carries {} bits",
                self.tracks,
                self.pitches,
                self.time,
                self.data.len()
            )));
        }
        let bits =
            Array3::from_shape_vec((self.tracks, self.pitches, self.time), self.data.clone())
                .map_err(|e| Error::Parse(format!("pianoroll shape: {e}")))?;
        Pianoroll::new(bits)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierParamsJson {
    pub frequencies: MatrixJson,
    pub phases_q: Vec<f64>,
    pub phases_k: Vec<f64>,
    pub gains: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
}

impl FourierParamsJson {
    pub fn from_params(params: &FourierParams) -> Self {
        FourierParamsJson {
            frequencies: MatrixJson::from_array(params.frequencies()),
            phases_q: params.phases(crate::features::Side::Query).to_vec(),
            phases_k: params.phases(crate::features::Side::Key).to_vec(),
            gains: params.gains().to_vec(),
            realizations: params.realizations(),
            seed: params.seed(),
        }
    }

    pub fn to_params(&self) -> Result<FourierParams> {
        FourierParams::new(
            self.frequencies.to_array()?,
            Array1::from_vec(self.phases_q.clone()),
            Array1::from_vec(self.phases_k.clone()),
            Array1::from_vec(self.gains.clone()),
            self.realizations,
            self.seed,
        )
    }
}

/// Input document for the `attend` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttendRequest {
    pub q: MatrixJson,
    pub k: MatrixJson,
    pub v: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_q: Option<GridJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_k: Option<GridJson>,
}

/// Output document for the `attend` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttendResponse {
    pub output: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<MatrixJson>,
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_round_trip_and_shape_check() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let json = MatrixJson::from_array(&m);
        assert_eq!(json.to_array().unwrap(), m);

        let bad = MatrixJson { rows: 2, cols: 2, data: vec![1.0] };
        assert!(matches!(bad.to_array(), Err(Error::Parse(_))));
    }

    #[test]
    fn grid_round_trip() {
        let grid = crate::grid::structural_grid(
            &[vec![0.0, 1.0, 1.0], vec![5.0, 5.0, 6.0]],
            &[0, 1],
        )
        .unwrap();
        let json = GridJson::from_grid(&grid);
        assert_eq!(json.to_grid().unwrap(), grid);
    }

    #[test]
    fn pianoroll_round_trip_and_validation() {
        let mut roll = Pianoroll::zeros(2, 4).unwrap();
        roll.set(1, 60, 2, true);
        let json = PianorollJson::from_roll(&roll);
        assert_eq!(json.to_roll().unwrap(), roll);

        let mut bad = PianorollJson::from_roll(&roll);
        bad.pitches = 64;
        assert!(bad.to_roll().is_err());
    }

    #[test]
    fn params_round_trip() {
        let params = FourierParams::init(3, 2, 8, 99).unwrap();
        let json = FourierParamsJson::from_params(&params);
        let back = json.to_params().unwrap();
        assert_eq!(back.frequencies(), params.frequencies());
        assert_eq!(back.gains(), params.gains());
        assert_eq!(back.realizations(), params.realizations());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = MatrixJson { rows: 1, cols: 2, data: vec![0.5, -0.5] };
        write_json(&path, &m).unwrap();
        let back: MatrixJson = read_json(&path).unwrap();
        assert_eq!(back.data, m.data);
    }
}
