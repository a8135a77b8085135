//! Serde adapters that put vectors and matrices on the wire as plain JSON
//! arrays (`[1.0, 2.0]`, `[[...], [...]]`) instead of ndarray's internal
//! representation, so config files stay hand-writable.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// `Array1<f64>` as a flat JSON array.
pub mod vec1 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.to_vec().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        Ok(Array1::from(Vec::<f64>::deserialize(d)?))
    }
}

/// `Vec<Array1<f64>>` as a JSON array of flat arrays.
pub mod vec1_list {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Array1<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|a| a.to_vec()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Array1<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(Array1::from)
            .collect())
    }
}

/// `Array2<f64>` as nested JSON arrays (row major).
pub mod mat2 {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        m.rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect())
            .map_err(serde::de::Error::custom)
    }
}
