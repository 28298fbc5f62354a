//! JSON numbers written with 17 significant digits.
//!
//! `serde_json` prints the shortest round-trip form; artifacts here are
//! written as `{:.16e}` instead so every value carries 17 significant
//! digits. Parsing is ordinary `f64` parsing, which is exact for such input.
//! Non-finite values are written as `null` and read back as NaN.

use nalgebra::DMatrix;
use serde::de::Deserializer;
use serde::ser::{Error as _, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

/// Format with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(fmt17(self.0)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v: Option<f64> = Option::deserialize(d)?;
        Ok(F17(v.unwrap_or(f64::NAN)))
    }
}

pub mod f64_17 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        F17(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        F17::deserialize(d).map(|v| v.0)
    }
}

pub mod opt_f64_17 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        x.map(F17).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let v: Option<f64> = Option::deserialize(d)?;
        Ok(v)
    }
}

pub mod vec_f64_17 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(x.iter().map(|v| F17(*v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<F17> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|f| f.0).collect())
    }
}

/// Row-major matrix record: `{"rows": r, "cols": c, "data": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "vec_f64_17")]
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> crate::Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(crate::Error::dims(
                "matrix json data",
                self.rows * self.cols,
                self.data.len(),
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

pub mod matrix_17 {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        j.to_matrix().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_roundtrip_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = serde_json::to_string(&F17(x)).unwrap();
            let back: F17 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back.0.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn seventeen_digits() {
        let s = serde_json::to_string(&F17(0.1)).unwrap();
        let mantissa: String = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
    }

    #[test]
    fn matrix_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatrixJson::from(&m);
        assert_eq!(j.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(j.to_matrix().unwrap(), m);
        let bad = MatrixJson {
            rows: 2,
            cols: 2,
            data: vec![1.0],
        };
        assert!(bad.to_matrix().is_err());
    }

    #[test]
    fn non_finite_is_null() {
        let s = serde_json::to_string(&F17(f64::NAN)).unwrap();
        assert_eq!(s, "null");
        let back: F17 = serde_json::from_str(&s).unwrap();
        assert!(back.0.is_nan());
    }
}
