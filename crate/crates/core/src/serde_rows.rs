//! Serializes a matrix as a list of rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Rows {
    ncols: usize,
    rows: Vec<Vec<f64>>,
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    Rows { ncols: m.ncols(), rows }.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let r = Rows::deserialize(d)?;
    if r.rows.iter().any(|row| row.len() != r.ncols) {
        return Err(serde::de::Error::custom("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(r.rows.len(), r.ncols, |i, k| r.rows[i][k]))
}
