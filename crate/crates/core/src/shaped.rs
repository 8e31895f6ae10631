//! JSON layout for dense matrices: `{"rows": r, "cols": c, "data": [...]}`
//! with `data` in row-major order.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
pub struct ShapedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for ShapedMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        ShapedMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl TryFrom<ShapedMatrix> for DMatrix<f64> {
    type Error = String;

    fn try_from(s: ShapedMatrix) -> Result<Self, String> {
        if s.data.len() != s.rows * s.cols {
            return Err(format!(
                "matrix data has {} entries, shape {}x{} needs {}",
                s.data.len(),
                s.rows,
                s.cols,
                s.rows * s.cols
            ));
        }
        Ok(DMatrix::from_row_slice(s.rows, s.cols, &s.data))
    }
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    ShapedMatrix::from(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    DMatrix::try_from(ShapedMatrix::deserialize(d)?).map_err(serde::de::Error::custom)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<ShapedMatrix> = ms.iter().map(ShapedMatrix::from).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<ShapedMatrix>::deserialize(d)?
            .into_iter()
            .map(|m| DMatrix::try_from(m).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(ShapedMatrix::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<ShapedMatrix>::deserialize(d)?
            .map(|m| DMatrix::try_from(m).map_err(serde::de::Error::custom))
            .transpose()
    }
}
